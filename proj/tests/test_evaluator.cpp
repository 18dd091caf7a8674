#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ofalab/errors.hpp"
#include "ofalab/evaluator.hpp"
#include "ofalab/flops.hpp"
#include "oracles.hpp"

using namespace ofalab;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "ofalab-eval-tests";

ArchSpec tiny_arch() {
  ArchSpec a = arch_preset("cifar-small-v1");
  a.id = "tiny-test";
  a.input_channels = 2;
  a.input_hw = 12;
  a.num_classes = 4;
  a.stem_channels = 5;
  a.block_out = {6, 8};
  a.block_stride = {2, 1};
  a.validate();
  return a;
}

Dataset synthetic_dataset(const ArchSpec& a, int n, uint64_t seed) {
  Dataset ds;
  ds.images = Tensor({n, a.input_channels, a.input_hw, a.input_hw});
  ds.class_count = a.num_classes;
  Rng rng(seed);
  for (float& v : ds.images.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) ds.labels[i] = rng.uniform_int(0, a.num_classes - 1);
  return ds;
}

void scramble_bn(Supernet& net, uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, bn] : net.named_bn()) {
    for (float& v : bn->running_mean) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (float& v : bn->running_var) v = static_cast<float>(rng.uniform(0.5, 2.0));
  }
}

std::vector<std::vector<float>> bn_snapshot(Supernet& net) {
  std::vector<std::vector<float>> out;
  for (auto& [name, bn] : net.named_bn()) {
    out.push_back(bn->running_mean);
    out.push_back(bn->running_var);
  }
  return out;
}

// a cut-down evaluation over the preset's extreme bins: both are known to be
// densely sampleable under the default +/- 0.5 MFLOP tolerance
EvalSettings small_settings() {
  EvalSettings s;
  s.bins = {4.0, 14.0};
  s.n_per_bin = 2;
  s.calib_images = 16;
  s.seed = 3;
  return s;
}

}  // namespace

TEST_CASE("calibrate_bn pools batch statistics into the active running slices") {
  const ArchSpec a = tiny_arch();
  Supernet net = build_supernet(a, 7);
  scramble_bn(net, 99);
  const Dataset calib = synthetic_dataset(a, 20, 5);

  SubnetConfig cfg = all_min_config(a);  // depth 2, width 3: plenty of inactive slices
  const std::vector<std::vector<float>> before = bn_snapshot(net);
  calibrate_bn(net, cfg, calib, /*n_images=*/12, /*batch_size=*/5);

  // stem node against a double-precision reference over the same 12 images
  Tensor head({12, a.input_channels, a.input_hw, a.input_hw});
  std::copy(calib.images.data.begin(), calib.images.data.begin() + head.data.size(),
            head.data.begin());
  const Tensor stem_out = oracle::conv2d(head, net.stem.value, 1, 1, 1);
  const int hw = stem_out.shape[2];
  const double cnt = 12.0 * hw * hw;
  for (int c = 0; c < a.stem_channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int n = 0; n < 12; ++n)
      for (int i = 0; i < hw; ++i)
        for (int j = 0; j < hw; ++j) {
          const double v = stem_out.at4(n, c, i, j);
          sum += v;
          sq += v * v;
        }
    const double mean = sum / cnt;
    const double var = sq / cnt - mean * mean;
    CHECK(net.stem_bn.running_mean[c] == doctest::Approx(mean).epsilon(1e-5));
    CHECK(net.stem_bn.running_var[c] == doctest::Approx(var).epsilon(1e-5));
  }

  // the stem node is batch-size invariant (the conv is per-image); deeper
  // nodes legitimately depend on the split, since calibration normalizes each
  // batch with its own statistics before feeding the next layer
  Supernet net2 = build_supernet(a, 7);
  scramble_bn(net2, 99);
  calibrate_bn(net2, cfg, calib, 12, /*batch_size=*/12);
  CHECK(net.stem_bn.running_mean == net2.stem_bn.running_mean);
  CHECK(net.stem_bn.running_var == net2.stem_bn.running_var);

  // inactive slices keep whatever statistics they had
  const std::vector<ActiveLayer> layers = active_layers(a, cfg);
  std::set<std::pair<int, int>> active;
  for (const ActiveLayer& al : layers) active.insert({al.b, al.l});
  size_t idx = 1;  // running snapshot index: stem first, then per-(b,l) bn1..bn3
  for (int b = 0; b < a.num_blocks(); ++b)
    for (int l = 0; l < a.max_depth; ++l) {
      const bool is_active = active.count({b, l}) > 0;
      LayerParams& lp = net.blocks[b][l];
      const BNState* bns[3] = {&lp.bn1, &lp.bn2, &lp.bn3};
      for (const BNState* bn : bns) {
        const std::vector<float>& old_mean = before[2 * idx];
        if (!is_active) {
          CHECK(bn->running_mean == old_mean);
        } else {
          CHECK(bn->running_mean != old_mean);  // scrambled stats were replaced
        }
        ++idx;
      }
    }

  // a request past the end of the calibration set clamps to what exists
  Supernet net3 = build_supernet(a, 7);
  scramble_bn(net3, 99);
  Supernet net4 = build_supernet(a, 7);
  scramble_bn(net4, 99);
  calibrate_bn(net3, cfg, calib, 100000, 5);
  calibrate_bn(net4, cfg, calib, calib.size(), 5);
  auto n3 = net3.named_bn(), n4 = net4.named_bn();
  for (size_t i = 0; i < n3.size(); ++i)
    CHECK(n3[i].second->running_mean == n4[i].second->running_mean);

  Dataset empty;
  CHECK_THROWS_AS(calibrate_bn(net, cfg, empty, 8), ConfigError);
  CHECK_THROWS_AS(calibrate_bn(net, cfg, calib, 0), ConfigError);
}

TEST_CASE("evaluate_top1 counts argmax hits and ignores batching") {
  const ArchSpec a = tiny_arch();
  Supernet net = build_supernet(a, 13);
  const Dataset test = synthetic_dataset(a, 23, 31);
  const SubnetConfig cfg = middle_config(a);

  // reference count from one monolithic forward
  Tensor logits = supernet_forward(net, cfg, test.images, RunMode::kEval);
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    const float* row = logits.data.data() + static_cast<size_t>(i) * a.num_classes;
    int arg = 0;
    for (int j = 1; j < a.num_classes; ++j)
      if (row[j] > row[arg]) arg = j;
    if (arg == test.labels[i]) ++correct;
  }
  const double expect = static_cast<double>(correct) / test.size();

  CHECK(evaluate_top1(net, cfg, test, 256) == expect);
  CHECK(evaluate_top1(net, cfg, test, 7) == expect);
  CHECK(evaluate_top1(net, cfg, test, 1) == expect);
  CHECK(expect >= 0.0);
  CHECK(expect <= 1.0);

  Dataset empty;
  CHECK_THROWS_AS(evaluate_top1(net, cfg, empty), ConfigError);
}

TEST_CASE("evaluate_population samples per bin, aggregates and restores the net") {
  const ArchSpec a = tiny_arch();
  Supernet net = build_supernet(a, 17);
  scramble_bn(net, 55);
  const Dataset test = synthetic_dataset(a, 40, 71);
  const Dataset calib = synthetic_dataset(a, 30, 72);
  const EvalSettings s = tiny_settings(a);

  const std::vector<std::vector<float>> before = bn_snapshot(net);
  const PopulationReport r = evaluate_population(net, s, test, calib, "run-x", "RSS", "synth");

  CHECK(r.run_id == "run-x");
  CHECK(r.method == "RSS");
  CHECK(r.dataset == "synth");
  CHECK(r.seed == s.seed);
  CHECK(r.calibrated);
  CHECK(r.calib_images == s.calib_images);
  REQUIRE(r.entries.size() == s.bins.size() * s.n_per_bin);
  REQUIRE(r.per_bin.size() == s.bins.size());

  double total = 0.0;
  for (size_t bi = 0; bi < s.bins.size(); ++bi) {
    double sum = 0.0, mn = 1.0, mx = 0.0, sq = 0.0;
    for (int j = 0; j < s.n_per_bin; ++j) {
      const PopEntry& e = r.entries[bi * s.n_per_bin + j];
      CHECK(e.bin == s.bins[bi]);
      CHECK(e.subnet_index == j);
      validate_config(a, e.config);
      CHECK(std::abs(e.exact_mflops - e.bin) <= s.tol + 1e-12);
      CHECK(e.exact_mflops == count_mflops(a, e.config));
      CHECK(e.hash == config_hash(a, e.config));
      CHECK(e.params == count_params(a, e.config));
      CHECK(e.top1 >= 0.0);
      CHECK(e.top1 <= 1.0);
      sum += e.top1;
      sq += e.top1 * e.top1;
      mn = std::min(mn, e.top1);
      mx = std::max(mx, e.top1);
    }
    const BinAggregate& agg = r.per_bin[bi];
    CHECK(agg.bin == s.bins[bi]);
    CHECK(agg.count == s.n_per_bin);
    CHECK(agg.mean == doctest::Approx(sum / s.n_per_bin).epsilon(1e-12));
    CHECK(agg.min == mn);
    CHECK(agg.max == mx);
    const double var = sq / s.n_per_bin - agg.mean * agg.mean;
    CHECK(agg.stddev == doctest::Approx(std::sqrt(std::max(0.0, var))).epsilon(1e-9));
    total += sum;
  }
  CHECK(r.overall_mean == doctest::Approx(total / r.entries.size()).epsilon(1e-12));

  // stored statistics restored bit-for-bit after all that recalibration
  CHECK(bn_snapshot(net) == before);

  // same seed, same report; different seed, different subnets
  const PopulationReport r2 = evaluate_population(net, s, test, calib, "run-x", "RSS", "synth");
  REQUIRE(r2.entries.size() == r.entries.size());
  for (size_t i = 0; i < r.entries.size(); ++i) {
    CHECK(r2.entries[i].hash == r.entries[i].hash);
    CHECK(r2.entries[i].top1 == r.entries[i].top1);
  }
  EvalSettings s3 = s;
  s3.seed = 4;
  const PopulationReport r3 = evaluate_population(net, s3, test, calib, "run-x", "RSS", "synth");
  bool any_differs = false;
  for (size_t i = 0; i < r.entries.size(); ++i)
    if (r3.entries[i].hash != r.entries[i].hash) any_differs = true;
  CHECK(any_differs);

  EvalSettings bad = s;
  bad.bins.clear();
  CHECK_THROWS_AS(evaluate_population(net, bad, test, calib, "x", "RSS", "synth"), ConfigError);
  bad = s;
  bad.n_per_bin = 0;
  CHECK_THROWS_AS(evaluate_population(net, bad, test, calib, "x", "RSS", "synth"), ConfigError);
  Dataset empty;
  CHECK_THROWS_AS(evaluate_population(net, s, empty, calib, "x", "RSS", "synth"), ConfigError);
}

TEST_CASE("population reports round-trip through CSV") {
  fs::create_directories(kDir);
  const ArchSpec a = tiny_arch();
  Supernet net = build_supernet(a, 23);
  const Dataset test = synthetic_dataset(a, 25, 81);
  const Dataset calib = synthetic_dataset(a, 25, 82);
  EvalSettings s = tiny_settings(a);
  s.n_per_bin = 2;
  const PopulationReport r =
      evaluate_population(net, s, test, calib, "trip-1", "OFA_PS", "synth");

  const std::string path = (kDir / "report.csv").string();
  write_report_csv(r, path);
  const PopulationReport back = read_report_csv(path);

  CHECK(back.run_id == r.run_id);
  CHECK(back.method == r.method);
  CHECK(back.dataset == r.dataset);
  CHECK(back.seed == r.seed);
  REQUIRE(back.entries.size() == r.entries.size());
  for (size_t i = 0; i < r.entries.size(); ++i) {
    CHECK(back.entries[i].bin == r.entries[i].bin);
    CHECK(back.entries[i].subnet_index == r.entries[i].subnet_index);
    CHECK(back.entries[i].hash == r.entries[i].hash);
    CHECK(back.entries[i].params == r.entries[i].params);
    // %.6f formatting bounds the round-trip error
    CHECK(back.entries[i].exact_mflops == doctest::Approx(r.entries[i].exact_mflops).epsilon(1e-5));
    CHECK(std::abs(back.entries[i].top1 - r.entries[i].top1) <= 5e-7);
  }
  REQUIRE(back.per_bin.size() == r.per_bin.size());
  for (size_t i = 0; i < r.per_bin.size(); ++i) {
    CHECK(back.per_bin[i].bin == r.per_bin[i].bin);
    CHECK(back.per_bin[i].count == r.per_bin[i].count);
    CHECK(std::abs(back.per_bin[i].mean - r.per_bin[i].mean) <= 1e-6);
    CHECK(std::abs(back.per_bin[i].max - r.per_bin[i].max) <= 1e-6);
  }
  CHECK(std::abs(back.overall_mean - r.overall_mean) <= 1e-6);

  CHECK_THROWS_AS(read_report_csv((kDir / "absent.csv").string()), DataFormatError);
  {
    std::ofstream bad(kDir / "bad-header.csv");
    bad << "something,else\n1,2\n";
  }
  CHECK_THROWS_AS(read_report_csv((kDir / "bad-header.csv").string()), DataFormatError);
  {
    std::ofstream bad(kDir / "short-row.csv");
    bad << "run_id,method,dataset,seed,bin_mflops,subnet_index,config_hash,exact_mflops,params,top1\n";
    bad << "a,b,c,1,4\n";
  }
  CHECK_THROWS_AS(read_report_csv((kDir / "short-row.csv").string()), DataFormatError);
  {
    std::ofstream bad(kDir / "empty.csv");
    bad << "run_id,method,dataset,seed,bin_mflops,subnet_index,config_hash,exact_mflops,params,top1\n";
  }
  CHECK_THROWS_AS(read_report_csv((kDir / "empty.csv").string()), DataFormatError);
}

TEST_CASE("report summaries serialize the aggregates as JSON") {
  fs::create_directories(kDir);
  const ArchSpec a = tiny_arch();
  Supernet net = build_supernet(a, 29);
  const Dataset test = synthetic_dataset(a, 20, 91);
  const Dataset calib = synthetic_dataset(a, 20, 92);
  EvalSettings s = tiny_settings(a);
  s.n_per_bin = 2;
  const PopulationReport r = evaluate_population(net, s, test, calib, "sum-1", "RSS", "synth");

  const std::string path = (kDir / "summary.json").string();
  write_report_summary(r, path);
  std::ifstream f(path);
  nlohmann::json j;
  f >> j;
  CHECK(j["run_id"] == "sum-1");
  CHECK(j["method"] == "RSS");
  CHECK(j["dataset"] == "synth");
  CHECK(j["seed"] == r.seed);
  CHECK(j["calibrated"] == true);
  CHECK(j["overall_mean_top1"].get<double>() == doctest::Approx(r.overall_mean).epsilon(1e-12));
  REQUIRE(j["bins"].size() == r.per_bin.size());
  for (size_t i = 0; i < r.per_bin.size(); ++i) {
    CHECK(j["bins"][i]["bin_mflops"].get<double>() == r.per_bin[i].bin);
    CHECK(j["bins"][i]["count"] == r.per_bin[i].count);
    CHECK(j["bins"][i]["mean_top1"].get<double>() ==
          doctest::Approx(r.per_bin[i].mean).epsilon(1e-12));
    CHECK(j["bins"][i]["stddev_top1"].get<double>() ==
          doctest::Approx(r.per_bin[i].stddev).epsilon(1e-9));
  }
}
