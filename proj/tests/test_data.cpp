#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include "ofalab/data.hpp"
#include "ofalab/errors.hpp"

using namespace ofalab;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "ofalab-data-tests";

void be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void dump(const fs::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

// deterministic fake MNIST pair: pixel (i, r, c) = (i * 37 + r * 3 + c) % 256
std::pair<fs::path, fs::path> write_idx_pair(int n, uint32_t img_magic = 0x803,
                                             uint32_t lab_magic = 0x801, int lab_n = -1,
                                             int bad_label_at = -1) {
  fs::create_directories(kDir);
  std::vector<uint8_t> img;
  be32(img, img_magic);
  be32(img, static_cast<uint32_t>(n));
  be32(img, 28);
  be32(img, 28);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < 28; ++r)
      for (int c = 0; c < 28; ++c) img.push_back(static_cast<uint8_t>((i * 37 + r * 3 + c) % 256));
  std::vector<uint8_t> lab;
  be32(lab, lab_magic);
  be32(lab, static_cast<uint32_t>(lab_n < 0 ? n : lab_n));
  for (int i = 0; i < (lab_n < 0 ? n : lab_n); ++i)
    lab.push_back(static_cast<uint8_t>(i == bad_label_at ? 13 : i % 10));
  const fs::path ip = kDir / "images.idx", lp = kDir / "labels.idx";
  dump(ip, img);
  dump(lp, lab);
  return {ip, lp};
}

}  // namespace

TEST_CASE("load_idx reads big-endian pairs into normalized-range floats") {
  const auto [ip, lp] = write_idx_pair(5);
  const Dataset ds = load_idx(ip.string(), lp.string());
  CHECK(ds.images.shape == std::vector<int>{5, 1, 28, 28});
  CHECK(ds.labels == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(ds.class_count == 10);
  for (int i = 0; i < 5; ++i)
    for (int r = 0; r < 28; r += 9)
      for (int c = 0; c < 28; c += 9) {
        const float want = static_cast<float>((i * 37 + r * 3 + c) % 256) / 255.0f;
        CHECK(ds.images.at4(i, 0, r, c) == want);
      }
}

TEST_CASE("load_idx rejects malformed files") {
  {
    const auto [ip, lp] = write_idx_pair(3, /*img_magic=*/0x804);
    CHECK_THROWS_AS(load_idx(ip.string(), lp.string()), DataFormatError);
  }
  {
    const auto [ip, lp] = write_idx_pair(3, 0x803, /*lab_magic=*/0x802);
    CHECK_THROWS_AS(load_idx(ip.string(), lp.string()), DataFormatError);
  }
  {
    const auto [ip, lp] = write_idx_pair(3, 0x803, 0x801, /*lab_n=*/4);
    CHECK_THROWS_AS(load_idx(ip.string(), lp.string()), DataFormatError);
  }
  {
    const auto [ip, lp] = write_idx_pair(3, 0x803, 0x801, -1, /*bad_label_at=*/1);
    CHECK_THROWS_AS(load_idx(ip.string(), lp.string()), DataFormatError);
  }
  {
    const auto [ip, lp] = write_idx_pair(3);
    std::ofstream(ip, std::ios::binary).write("\x00\x00\x08\x03", 4);  // header only
    CHECK_THROWS_AS(load_idx(ip.string(), lp.string()), DataFormatError);
  }
  CHECK_THROWS_AS(load_idx((kDir / "nope.idx").string(), (kDir / "nope2.idx").string()),
                  DataFormatError);
}

TEST_CASE("load_cifar reads c10 and c100 records") {
  fs::create_directories(kDir);
  auto pixel = [](int rec, int j) { return static_cast<uint8_t>((rec * 131 + j) % 256); };

  std::vector<uint8_t> f1, f2;
  for (int rec = 0; rec < 2; ++rec) {
    auto& f = rec == 0 ? f1 : f2;
    for (int r = 0; r < 2; ++r) {
      const int id = rec * 2 + r;
      f.push_back(static_cast<uint8_t>(id % 10));  // label
      for (int j = 0; j < 3072; ++j) f.push_back(pixel(id, j));
    }
  }
  const fs::path p1 = kDir / "c10_1.bin", p2 = kDir / "c10_2.bin";
  dump(p1, f1);
  dump(p2, f2);
  const Dataset ds = load_cifar({p1.string(), p2.string()}, "c10");
  CHECK(ds.images.shape == std::vector<int>{4, 3, 32, 32});
  CHECK(ds.labels == std::vector<int>{0, 1, 2, 3});
  CHECK(ds.class_count == 10);
  for (int id = 0; id < 4; ++id)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; y += 13)
        for (int x = 0; x < 32; x += 13) {
          const float want = static_cast<float>(pixel(id, c * 1024 + y * 32 + x)) / 255.0f;
          CHECK(ds.images.at4(id, c, y, x) == want);
        }

  // c100: coarse label byte first, fine label second; the fine one is kept
  std::vector<uint8_t> f3;
  for (int r = 0; r < 3; ++r) {
    f3.push_back(static_cast<uint8_t>(19));      // coarse, ignored
    f3.push_back(static_cast<uint8_t>(40 + r));  // fine
    for (int j = 0; j < 3072; ++j) f3.push_back(pixel(r, j));
  }
  const fs::path p3 = kDir / "c100.bin";
  dump(p3, f3);
  const Dataset ds100 = load_cifar({p3.string()}, "c100");
  CHECK(ds100.class_count == 100);
  CHECK(ds100.labels == std::vector<int>{40, 41, 42});
  CHECK(ds100.images.at4(1, 2, 5, 6) ==
        static_cast<float>(pixel(1, 2 * 1024 + 5 * 32 + 6)) / 255.0f);
}

TEST_CASE("load_cifar rejects bad sizes, labels and variants") {
  fs::create_directories(kDir);
  const fs::path p = kDir / "c10_bad.bin";
  dump(p, std::vector<uint8_t>(3072, 0));  // one record minus the label byte
  CHECK_THROWS_AS(load_cifar({p.string()}, "c10"), DataFormatError);

  std::vector<uint8_t> rec(1 + 3072, 0);
  rec[0] = 11;  // label out of range for c10
  dump(p, rec);
  CHECK_THROWS_AS(load_cifar({p.string()}, "c10"), DataFormatError);

  CHECK_THROWS_AS(load_cifar({p.string()}, "c20"), ConfigError);
}

TEST_CASE("normalize_train centers the train split and reuses stats on test") {
  Dataset train;
  train.images = Tensor({50, 2, 4, 4});
  train.labels.assign(50, 0);
  Rng rng(7);
  for (int n = 0; n < 50; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 16; ++i)
        train.images.data[(static_cast<size_t>(n) * 2 + c) * 16 + i] =
            static_cast<float>(rng.uniform(c * 0.5, c * 0.5 + 0.4));

  // reference stats in double, biased variance
  std::vector<double> m(2), sd(2);
  for (int c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < 50; ++n)
      for (int i = 0; i < 16; ++i) {
        const double v = train.images.data[(static_cast<size_t>(n) * 2 + c) * 16 + i];
        s += v;
        s2 += v * v;
      }
    m[c] = s / 800.0;
    sd[c] = std::sqrt(s2 / 800.0 - m[c] * m[c]);
  }

  normalize_train(train);
  REQUIRE(train.norm_mean.size() == 2);
  for (int c = 0; c < 2; ++c) {
    CHECK(train.norm_mean[c] == doctest::Approx(m[c]).epsilon(1e-5));
    CHECK(train.norm_std[c] == doctest::Approx(sd[c]).epsilon(1e-5));
    double s = 0, s2 = 0;
    for (int n = 0; n < 50; ++n)
      for (int i = 0; i < 16; ++i) {
        const double v = train.images.data[(static_cast<size_t>(n) * 2 + c) * 16 + i];
        s += v;
        s2 += v * v;
      }
    CHECK(s / 800.0 == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(std::sqrt(s2 / 800.0) == doctest::Approx(1.0).epsilon(1e-4));
  }

  // test split gets the train stats verbatim, not its own
  Dataset test;
  test.images = Tensor({3, 2, 4, 4});
  test.labels.assign(3, 0);
  for (size_t i = 0; i < test.images.data.size(); ++i)
    test.images.data[i] = static_cast<float>(i) / 100.0f;
  const Tensor raw = test.images;
  normalize_with(test, train.norm_mean, train.norm_std);
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 16; ++i) {
        const size_t idx = (static_cast<size_t>(n) * 2 + c) * 16 + i;
        const float want = (raw.data[idx] - train.norm_mean[c]) / train.norm_std[c];
        CHECK(test.images.data[idx] == doctest::Approx(want).epsilon(1e-6));
      }
  CHECK_THROWS_AS(normalize_with(test, {0.0f}, {1.0f}), ConfigError);
}

TEST_CASE("augment_batch: identity policy, flips, and reflect-pad crops") {
  Rng fill(11);
  Tensor batch({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) batch.data[i] = static_cast<float>(i);  // unique pixels

  Rng r0(1);
  const Tensor same = augment_batch(batch, AugmentPolicy{0, false}, r0);
  CHECK(same.data == batch.data);

  // pad 0 + flip: output is the input or its exact mirror, and both occur
  int flips = 0, keeps = 0;
  Rng rf(2);
  for (int i = 0; i < 64; ++i) {
    const Tensor out = augment_batch(batch, AugmentPolicy{0, true}, rf);
    bool is_same = true, is_mirror = true;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        if (out.at4(0, 0, y, x) != batch.at4(0, 0, y, x)) is_same = false;
        if (out.at4(0, 0, y, x) != batch.at4(0, 0, y, 3 - x)) is_mirror = false;
      }
    CHECK((is_same || is_mirror));
    flips += is_mirror ? 1 : 0;
    keeps += is_same ? 1 : 0;
  }
  CHECK(flips > 10);
  CHECK(keeps > 10);

  // pad 1 + flip: every draw must equal one of the 9 crops of the
  // reflect-padded image, possibly mirrored; with unique pixels all 18
  // variants are distinct and a few dozen draws reach most of them
  auto reflect = [](int x, int lim) {
    if (x < 0) x = -x;
    if (x >= lim) x = 2 * lim - 2 - x;
    return x;
  };
  auto variant = [&](int dy, int dx, bool flip) {
    Tensor v({1, 1, 4, 4});
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const int sx = flip ? 3 - x : x;
        v.at4(0, 0, y, x) = batch.at4(0, 0, reflect(y + dy - 1, 4), reflect(sx + dx - 1, 4));
      }
    return v;
  };
  std::set<int> seen;
  Rng rc(3);
  for (int i = 0; i < 300; ++i) {
    const Tensor out = augment_batch(batch, AugmentPolicy{1, true}, rc);
    bool matched = false;
    for (int dy = 0; dy < 3 && !matched; ++dy)
      for (int dx = 0; dx < 3 && !matched; ++dx)
        for (int f = 0; f < 2 && !matched; ++f)
          if (out.data == variant(dy, dx, f).data) {
            matched = true;
            seen.insert(dy * 6 + dx * 2 + f);
          }
    CHECK(matched);
  }
  CHECK(seen.size() >= 15);

  // determinism: one seed, one sequence
  Rng ra(9), rb(9);
  const Tensor oa = augment_batch(batch, AugmentPolicy{1, true}, ra);
  const Tensor ob = augment_batch(batch, AugmentPolicy{1, true}, rb);
  CHECK(oa.data == ob.data);
}

TEST_CASE("BatchStream shuffles per epoch and visits every item exactly once") {
  Dataset ds;
  ds.images = Tensor({10, 1, 2, 2});
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 4; ++j) ds.images.data[i * 4 + j] = static_cast<float>(i * 4 + j);
  ds.labels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  BatchStream bs(ds, 4, /*seed=*/5, /*epoch=*/0, /*shuffle=*/true);
  CHECK(bs.num_batches() == 3);
  Tensor imgs;
  std::vector<int> labels;
  std::vector<int> sizes, all_labels;
  while (bs.next(imgs, labels)) {
    sizes.push_back(imgs.shape[0]);
    for (size_t i = 0; i < labels.size(); ++i) {
      all_labels.push_back(labels[i]);
      // each row is the untouched dataset image for that label
      for (int j = 0; j < 4; ++j)
        CHECK(imgs.data[i * 4 + j] == static_cast<float>(labels[i] * 4 + j));
    }
  }
  CHECK(sizes == std::vector<int>{4, 4, 2});
  std::vector<int> sorted = all_labels;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == ds.labels);

  // same (seed, epoch) -> same order; later epoch -> different order
  auto order_of = [&](uint64_t seed, int epoch, bool shuffle) {
    BatchStream s(ds, 4, seed, epoch, shuffle);
    std::vector<int> got;
    Tensor im;
    std::vector<int> lb;
    while (s.next(im, lb)) got.insert(got.end(), lb.begin(), lb.end());
    return got;
  };
  CHECK(order_of(5, 0, true) == all_labels);
  CHECK(order_of(5, 1, true) != all_labels);
  CHECK(order_of(6, 0, true) != all_labels);
  CHECK(order_of(5, 0, false) == ds.labels);  // unshuffled keeps file order

  CHECK_THROWS_AS(BatchStream(ds, 0, 1, 0, true), ConfigError);
}
