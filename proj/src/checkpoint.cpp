#include "ofalab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofalab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace ofalab {

namespace {

struct NamedBuf {
  std::string name;
  std::vector<int> dims;
  float* data;
  size_t n;
};

// Everything a resume needs, in a fixed order: param values, momentum
// buffers, BN running stats.
std::vector<NamedBuf> checkpoint_buffers(Supernet& net) {
  std::vector<NamedBuf> out;
  for (auto& [name, p] : net.named_params()) {
    out.push_back({name, p->value.shape, p->value.data.data(), p->value.data.size()});
    out.push_back({name + ".m", p->momentum_buf.shape, p->momentum_buf.data.data(),
                   p->momentum_buf.data.size()});
  }
  for (auto& [name, bn] : net.named_bn()) {
    const int c = bn->channels();
    out.push_back({name + ".running_mean", {c}, bn->running_mean.data(), bn->running_mean.size()});
    out.push_back({name + ".running_var", {c}, bn->running_var.data(), bn->running_var.size()});
  }
  return out;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : f_(std::fopen(path.c_str(), "wb")), path_(path) {
    if (!f_) throw DataFormatError("cannot open " + path + " for writing");
  }
  ~Writer() {
    if (f_) std::fclose(f_);
  }
  void bytes(const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f_) != n) throw DataFormatError("short write to " + path_);
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void close() {
    if (std::fclose(f_) != 0) throw DataFormatError("close failed for " + path_);
    f_ = nullptr;
  }

 private:
  std::FILE* f_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : f_(std::fopen(path.c_str(), "rb")), path_(path) {
    if (!f_) throw DataFormatError("cannot open " + path);
  }
  ~Reader() {
    if (f_) std::fclose(f_);
  }
  void bytes(void* p, size_t n) {
    if (std::fread(p, 1, n, f_) != n)
      throw DataFormatError(path_ + ": truncated at offset " + std::to_string(std::ftell(f_)));
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  bool at_eof() {
    const int c = std::fgetc(f_);
    if (c == EOF) return true;
    std::ungetc(c, f_);
    return false;
  }

 private:
  std::FILE* f_;
  std::string path_;
};

}  // namespace

void save_checkpoint(Supernet& net, const std::string& path) {
  Writer w(path);
  w.bytes("OFAS", 4);
  w.u32(kCheckpointVersion);
  nlohmann::json j = net.arch;
  const std::string arch_json = j.dump();
  w.u32(static_cast<uint32_t>(arch_json.size()));
  w.bytes(arch_json.data(), arch_json.size());
  for (const NamedBuf& b : checkpoint_buffers(net)) {
    w.u32(static_cast<uint32_t>(b.name.size()));
    w.bytes(b.name.data(), b.name.size());
    w.u32(static_cast<uint32_t>(b.dims.size()));
    for (int d : b.dims) w.u32(static_cast<uint32_t>(d));
    w.bytes(b.data, b.n * sizeof(float));
  }
  w.close();
}

Supernet load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "OFAS")
    throw DataFormatError(path + ": bad magic at offset 0 (not an OFAS checkpoint)");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataFormatError(path + ": unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  const uint32_t jlen = r.u32();
  std::string arch_json(jlen, '\0');
  r.bytes(arch_json.data(), jlen);
  ArchSpec arch;
  try {
    arch = nlohmann::json::parse(arch_json).get<ArchSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError(path + ": invalid ArchSpec blob: " + e.what());
  }

  // seed is irrelevant: every value is overwritten below
  Supernet net = build_supernet(arch, 0);

  std::map<std::string, NamedBuf> expected;
  for (const NamedBuf& b : checkpoint_buffers(net)) expected.emplace(b.name, b);

  size_t loaded = 0;
  while (!r.at_eof()) {
    const uint32_t nlen = r.u32();
    if (nlen > 4096) throw DataFormatError(path + ": implausible tensor name length");
    std::string name(nlen, '\0');
    r.bytes(name.data(), nlen);
    const uint32_t rank = r.u32();
    if (rank > 8) throw DataFormatError(path + ": implausible tensor rank for " + name);
    std::vector<int> dims(rank);
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      dims[i] = static_cast<int>(r.u32());
      n *= static_cast<size_t>(dims[i]);
    }
    auto it = expected.find(name);
    if (it == expected.end())
      throw DataFormatError(path + ": unknown tensor '" + name + "' for this architecture");
    if (it->second.dims != dims || it->second.n != n)
      throw DataFormatError(path + ": shape mismatch for tensor '" + name + "'");
    r.bytes(it->second.data, n * sizeof(float));
    expected.erase(it);
    ++loaded;
  }
  if (!expected.empty())
    throw DataFormatError(path + ": missing tensor '" + expected.begin()->first + "' (+" +
                          std::to_string(expected.size() - 1) + " more)");
  (void)loaded;
  return net;
}

}  // namespace ofalab
