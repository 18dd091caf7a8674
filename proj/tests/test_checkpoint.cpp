#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ofalab/checkpoint.hpp"
#include "ofalab/errors.hpp"
#include "oracles.hpp"

using namespace ofalab;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "ofalab-ckpt-tests";

// a net with nothing left at its init values, so round-trips can't pass by
// accident. The id stays a preset name: ArchSpec serialization treats the id
// as the preset baseline and the remaining fields as overrides.
Supernet scrambled_net(uint64_t seed) {
  ArchSpec a = arch_preset("cifar-small-v1");
  a.block_out = {6, 8};
  a.block_stride = {2, 1};
  a.input_channels = 2;
  a.input_hw = 12;
  a.stem_channels = 5;
  Supernet net = build_supernet(a, seed);
  Rng rng(seed ^ 0xabcd);
  for (auto& [name, p] : net.named_params()) {
    for (float& v : p->value.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    for (float& v : p->momentum_buf.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  for (auto& [name, bn] : net.named_bn()) {
    for (float& v : bn->running_mean) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (float& v : bn->running_var) v = static_cast<float>(rng.uniform(0.1, 3.0));
  }
  return net;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoints round-trip every tensor bit-exactly") {
  fs::create_directories(kDir);
  const std::string path = (kDir / "roundtrip.ofas").string();
  Supernet net = scrambled_net(71);
  save_checkpoint(net, path);
  Supernet back = load_checkpoint(path);

  CHECK(back.arch.id == net.arch.id);
  CHECK(back.arch.block_out == net.arch.block_out);
  CHECK(back.arch.input_hw == net.arch.input_hw);
  CHECK(back.arch.stem_channels == net.arch.stem_channels);

  auto want = net.named_params();
  auto got = back.named_params();
  REQUIRE(want.size() == got.size());
  for (size_t i = 0; i < want.size(); ++i) {
    CHECK(want[i].first == got[i].first);
    CHECK(want[i].second->value.shape == got[i].second->value.shape);
    CHECK(want[i].second->value.data == got[i].second->value.data);
    CHECK(want[i].second->momentum_buf.data == got[i].second->momentum_buf.data);
    CHECK(want[i].second->weight_decay_exempt == got[i].second->weight_decay_exempt);
  }
  auto want_bn = net.named_bn();
  auto got_bn = back.named_bn();
  REQUIRE(want_bn.size() == got_bn.size());
  for (size_t i = 0; i < want_bn.size(); ++i) {
    CHECK(want_bn[i].second->running_mean == got_bn[i].second->running_mean);
    CHECK(want_bn[i].second->running_var == got_bn[i].second->running_var);
  }

  // the loaded net computes the same function, bit for bit
  Tensor x({2, net.arch.input_channels, net.arch.input_hw, net.arch.input_hw});
  Rng rng(73);
  oracle::fill_uniform(x, rng);
  const SubnetConfig c = middle_config(net.arch);
  const Tensor l1 = supernet_forward(net, c, x, RunMode::kEval);
  const Tensor l2 = supernet_forward(back, c, x, RunMode::kEval);
  CHECK(l1.data == l2.data);
}

TEST_CASE("saving the same state twice produces identical bytes") {
  fs::create_directories(kDir);
  const std::string p1 = (kDir / "twice-a.ofas").string();
  const std::string p2 = (kDir / "twice-b.ofas").string();
  Supernet net = scrambled_net(79);
  save_checkpoint(net, p1);
  save_checkpoint(net, p2);
  CHECK(slurp(p1) == slurp(p2));

  // and a load->save cycle reproduces the file exactly
  Supernet back = load_checkpoint(p1);
  const std::string p3 = (kDir / "twice-c.ofas").string();
  save_checkpoint(back, p3);
  CHECK(slurp(p1) == slurp(p3));
}

TEST_CASE("corrupt or missing checkpoints fail loudly") {
  fs::create_directories(kDir);
  CHECK_THROWS_AS(load_checkpoint((kDir / "does-not-exist.ofas").string()), DataFormatError);

  const std::string path = (kDir / "corrupt.ofas").string();
  Supernet net = scrambled_net(83);
  save_checkpoint(net, path);

  // bad magic
  {
    auto bytes = slurp(path);
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_checkpoint(path), DataFormatError);
  }
  // truncation
  {
    save_checkpoint(net, path);
    auto bytes = slurp(path);
    bytes.resize(bytes.size() / 2);
    std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_checkpoint(path), DataFormatError);
  }
  // wrong version
  {
    save_checkpoint(net, path);
    auto bytes = slurp(path);
    bytes[4] = static_cast<char>(kCheckpointVersion + 1);
    std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_checkpoint(path), DataFormatError);
  }
}

TEST_CASE("a checkpoint naming an unknown architecture is rejected") {
  fs::create_directories(kDir);
  const std::string path = (kDir / "unknown-arch.ofas").string();
  Supernet net = scrambled_net(89);
  net.arch.id = "from-the-future";  // not a preset: the loader has no baseline
  save_checkpoint(net, path);
  CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
}
