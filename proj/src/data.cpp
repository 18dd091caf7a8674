#include "ofalab/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "ofalab/errors.hpp"

namespace ofalab {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataFormatError("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  const long len = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  const size_t got = std::fread(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  if (got != buf.size()) throw DataFormatError("short read from " + path);
  return buf;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
  if (off + 4 > b.size())
    throw DataFormatError(path + ": truncated at offset " + std::to_string(off));
  return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
         (static_cast<uint32_t>(b[off + 2]) << 8) | b[off + 3];
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<uint8_t> img = read_file(images_path);
  const std::vector<uint8_t> lab = read_file(labels_path);

  const uint32_t img_magic = be32(img, 0, images_path);
  if (img_magic != 0x00000803)
    throw DataFormatError(images_path + ": bad image magic at offset 0 (got " +
                          std::to_string(img_magic) + ", want 2051)");
  const uint32_t n = be32(img, 4, images_path);
  const uint32_t rows = be32(img, 8, images_path);
  const uint32_t cols = be32(img, 12, images_path);
  if (rows != 28 || cols != 28)
    throw DataFormatError(images_path + ": expected 28x28 images, header at offset 8 says " +
                          std::to_string(rows) + "x" + std::to_string(cols));
  const size_t need = 16 + static_cast<size_t>(n) * rows * cols;
  if (img.size() != need)
    throw DataFormatError(images_path + ": size " + std::to_string(img.size()) +
                          " != expected " + std::to_string(need) + " (truncated at offset " +
                          std::to_string(img.size()) + ")");

  const uint32_t lab_magic = be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801)
    throw DataFormatError(labels_path + ": bad label magic at offset 0 (got " +
                          std::to_string(lab_magic) + ", want 2049)");
  const uint32_t ln = be32(lab, 4, labels_path);
  if (ln != n)
    throw DataFormatError(labels_path + ": label count " + std::to_string(ln) +
                          " != image count " + std::to_string(n) + " (offset 4)");
  if (lab.size() != 8 + static_cast<size_t>(n))
    throw DataFormatError(labels_path + ": truncated at offset " + std::to_string(lab.size()));

  Dataset ds;
  ds.images = Tensor({static_cast<int>(n), 1, 28, 28});
  ds.labels.resize(n);
  for (size_t i = 0; i < static_cast<size_t>(n) * 784; ++i)
    ds.images.data[i] = static_cast<float>(img[16 + i]) / 255.0f;
  for (uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    if (ds.labels[i] >= 10)
      throw DataFormatError(labels_path + ": label " + std::to_string(ds.labels[i]) +
                            " out of range at offset " + std::to_string(8 + i));
  }
  return ds;
}

Dataset load_cifar(const std::vector<std::string>& batch_files, const std::string& variant) {
  const bool c100 = variant == "c100";
  if (!c100 && variant != "c10")
    throw ConfigError("load_cifar: variant must be c10 or c100, got '" + variant + "'");
  const size_t rec = c100 ? 3074 : 3073;
  const int label_off = c100 ? 1 : 0;  // c100: fine label is the second byte

  Dataset ds;
  ds.class_count = c100 ? 100 : 10;
  std::vector<float> pixels;
  for (const std::string& path : batch_files) {
    const std::vector<uint8_t> buf = read_file(path);
    if (buf.empty() || buf.size() % rec != 0)
      throw DataFormatError(path + ": size " + std::to_string(buf.size()) +
                            " is not a multiple of record size " + std::to_string(rec));
    const size_t n = buf.size() / rec;
    for (size_t i = 0; i < n; ++i) {
      const uint8_t* r = buf.data() + i * rec;
      const int label = r[label_off];
      if (label >= ds.class_count)
        throw DataFormatError(path + ": label " + std::to_string(label) +
                              " out of range at offset " + std::to_string(i * rec));
      ds.labels.push_back(label);
      const uint8_t* px = r + (c100 ? 2 : 1);
      for (int j = 0; j < 3072; ++j) pixels.push_back(static_cast<float>(px[j]) / 255.0f);
    }
  }
  const int n = static_cast<int>(ds.labels.size());
  if (n == 0) throw DataFormatError("load_cifar: no records in " + std::to_string(batch_files.size()) + " files");
  ds.images = Tensor({n, 3, 32, 32});
  std::memcpy(ds.images.data.data(), pixels.data(), pixels.size() * sizeof(float));
  return ds;
}

void normalize_with(Dataset& ds, const std::vector<float>& mean, const std::vector<float>& std) {
  const int c = ds.channels();
  if (static_cast<int>(mean.size()) != c || static_cast<int>(std.size()) != c)
    throw ConfigError("normalize_with: stats have wrong channel count");
  const int n = ds.size();
  const size_t plane = static_cast<size_t>(ds.images.shape[2]) * ds.images.shape[3];
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      float* p = ds.images.data.data() + (static_cast<size_t>(ni) * c + ci) * plane;
      const float m = mean[ci], inv = 1.0f / std[ci];
      for (size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
    }
  ds.norm_mean = mean;
  ds.norm_std = std;
}

void normalize_train(Dataset& train) {
  const int c = train.channels();
  const int n = train.size();
  const size_t plane = static_cast<size_t>(train.images.shape[2]) * train.images.shape[3];
  std::vector<float> mean(c), std(c);
  for (int ci = 0; ci < c; ++ci) {
    double s = 0.0, s2 = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const float* p = train.images.data.data() + (static_cast<size_t>(ni) * c + ci) * plane;
      for (size_t i = 0; i < plane; ++i) {
        s += p[i];
        s2 += static_cast<double>(p[i]) * p[i];
      }
    }
    const double count = static_cast<double>(n) * plane;
    const double m = s / count;
    double var = s2 / count - m * m;
    if (var < 1e-16) var = 1e-16;
    mean[ci] = static_cast<float>(m);
    std[ci] = static_cast<float>(std::sqrt(var));
  }
  normalize_with(train, mean, std);
}

Tensor augment_batch(const Tensor& batch, const AugmentPolicy& policy, Rng& rng) {
  if (policy.pad == 0 && !policy.flip) return batch;
  const int n = batch.shape[0], c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
  const int p = policy.pad;
  const int ph = h + 2 * p, pw = w + 2 * p;
  // reflect index (no edge repeat): -1 -> 1, h -> h-2
  auto reflect = [](int x, int lim) {
    if (x < 0) x = -x;
    if (x >= lim) x = 2 * lim - 2 - x;
    return x;
  };
  Tensor out(batch.shape);
  std::vector<float> padded(static_cast<size_t>(ph) * pw);
  for (int ni = 0; ni < n; ++ni) {
    const bool flip = policy.flip && rng.uniform01() < 0.5;
    const int dy = p > 0 ? rng.uniform_int(0, 2 * p) : 0;
    const int dx = p > 0 ? rng.uniform_int(0, 2 * p) : 0;
    for (int ci = 0; ci < c; ++ci) {
      const float* src = batch.data.data() + (static_cast<size_t>(ni) * c + ci) * h * w;
      float* dst = out.data.data() + (static_cast<size_t>(ni) * c + ci) * h * w;
      if (p > 0) {
        for (int y = 0; y < ph; ++y) {
          const float* srow = src + static_cast<size_t>(reflect(y - p, h)) * w;
          for (int x = 0; x < pw; ++x) padded[static_cast<size_t>(y) * pw + x] = srow[reflect(x - p, w)];
        }
        for (int y = 0; y < h; ++y) {
          const float* prow = padded.data() + static_cast<size_t>(y + dy) * pw + dx;
          float* drow = dst + static_cast<size_t>(y) * w;
          if (flip)
            for (int x = 0; x < w; ++x) drow[x] = prow[w - 1 - x];
          else
            std::memcpy(drow, prow, w * sizeof(float));
        }
      } else {
        for (int y = 0; y < h; ++y) {
          const float* srow = src + static_cast<size_t>(y) * w;
          float* drow = dst + static_cast<size_t>(y) * w;
          if (flip)
            for (int x = 0; x < w; ++x) drow[x] = srow[w - 1 - x];
          else
            std::memcpy(drow, srow, w * sizeof(float));
        }
      }
    }
  }
  return out;
}

BatchStream::BatchStream(const Dataset& ds, int batch_size, uint64_t seed, int epoch,
                         bool shuffle)
    : ds_(ds), batch_size_(batch_size) {
  if (batch_size <= 0) throw ConfigError("BatchStream: batch_size must be positive");
  order_.resize(ds.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<uint32_t>(i);
  if (shuffle) {
    Rng rng = substream(seed, "shuffle", epoch);
    rng.shuffle(order_);
  }
}

int BatchStream::num_batches() const {
  return static_cast<int>((order_.size() + batch_size_ - 1) / batch_size_);
}

bool BatchStream::next(Tensor& images, std::vector<int>& labels) {
  if (pos_ >= order_.size()) return false;
  const size_t n = std::min(static_cast<size_t>(batch_size_), order_.size() - pos_);
  const int c = ds_.images.shape[1], h = ds_.images.shape[2], w = ds_.images.shape[3];
  images = Tensor({static_cast<int>(n), c, h, w});
  labels.resize(n);
  const size_t img = static_cast<size_t>(c) * h * w;
  for (size_t i = 0; i < n; ++i) {
    const uint32_t idx = order_[pos_ + i];
    std::memcpy(images.data.data() + i * img, ds_.images.data.data() + idx * img,
                img * sizeof(float));
    labels[i] = ds_.labels[idx];
  }
  pos_ += n;
  return true;
}

}  // namespace ofalab
