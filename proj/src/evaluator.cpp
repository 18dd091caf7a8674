#include "ofalab/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ofalab/errors.hpp"
#include "ofalab/flops.hpp"

namespace ofalab {

namespace {

// batches of the first n_images, in stored order, no shuffling
struct PlainBatches {
  const Dataset& ds;
  int limit, batch, pos = 0;
  bool next(Tensor& images, std::vector<int>* labels) {
    if (pos >= limit) return false;
    const int n = std::min(batch, limit - pos);
    const int c = ds.images.shape[1], h = ds.images.shape[2], w = ds.images.shape[3];
    images = Tensor({n, c, h, w});
    const size_t img = static_cast<size_t>(c) * h * w;
    std::memcpy(images.data.data(), ds.images.data.data() + static_cast<size_t>(pos) * img,
                static_cast<size_t>(n) * img * sizeof(float));
    if (labels) labels->assign(ds.labels.begin() + pos, ds.labels.begin() + pos + n);
    pos += n;
    return true;
  }
};

}  // namespace

void calibrate_bn(Supernet& net, const SubnetConfig& cfg, const Dataset& calib, int n_images,
                  int batch_size) {
  if (calib.size() == 0) throw ConfigError("calibrate_bn: empty calibration set");
  if (n_images <= 0) throw ConfigError("calibrate_bn: n_images must be positive");
  n_images = std::min(n_images, calib.size());

  CalibAccum accum;
  PlainBatches pb{calib, n_images, batch_size};
  Tensor images;
  while (pb.next(images, nullptr))
    supernet_forward(net, cfg, images, RunMode::kCalibrate, nullptr, nullptr, &accum);

  // Pooled stats back into the active slices, traversal order = forward order.
  const std::vector<ActiveLayer> layers = active_layers(net.arch, cfg);
  std::vector<std::pair<BNState*, int>> nodes;  // state + active channel count
  nodes.emplace_back(&net.stem_bn, net.arch.stem_channels);
  for (const ActiveLayer& al : layers) {
    LayerParams& lp = net.blocks[al.b][al.l];
    nodes.emplace_back(&lp.bn1, al.hid);
    nodes.emplace_back(&lp.bn2, al.hid);
    nodes.emplace_back(&lp.bn3, al.out);
  }
  if (nodes.size() != accum.nodes.size())
    throw ConfigError("calibrate_bn: accumulator node count mismatch");
  for (size_t i = 0; i < nodes.size(); ++i) {
    auto [bn, c] = nodes[i];
    const CalibAccum::Node& node = accum.nodes[i];
    if (static_cast<int>(node.sum_mean.size()) != c)
      throw ConfigError("calibrate_bn: accumulator channel mismatch");
    for (int ci = 0; ci < c; ++ci) {
      const double mean = node.sum_mean[ci] / static_cast<double>(node.count);
      double var = node.sum_sq[ci] / static_cast<double>(node.count) - mean * mean;
      if (var < 0.0) var = 0.0;
      bn->running_mean[ci] = static_cast<float>(mean);
      bn->running_var[ci] = static_cast<float>(var);
    }
  }
}

double evaluate_top1(Supernet& net, const SubnetConfig& cfg, const Dataset& test,
                     int batch_size) {
  if (test.size() == 0) throw ConfigError("evaluate_top1: empty test set");
  PlainBatches pb{test, test.size(), batch_size};
  Tensor images;
  std::vector<int> labels;
  int64_t correct = 0;
  while (pb.next(images, &labels)) {
    Tensor logits = supernet_forward(net, cfg, images, RunMode::kEval);
    const int n = logits.shape[0], k = logits.shape[1];
    for (int i = 0; i < n; ++i) {
      const float* row = logits.data.data() + static_cast<size_t>(i) * k;
      int arg = 0;
      for (int j = 1; j < k; ++j)
        if (row[j] > row[arg]) arg = j;
      if (arg == labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / test.size();
}

PopulationReport evaluate_population(Supernet& net, const EvalSettings& s, const Dataset& test,
                                     const Dataset& calib, const std::string& run_id,
                                     const std::string& method,
                                     const std::string& dataset_name) {
  if (test.size() == 0) throw ConfigError("evaluate_population: empty test set");
  if (s.bins.empty() || s.n_per_bin <= 0)
    throw ConfigError("evaluate_population: need at least one bin and one subnet per bin");

  // The checkpoint's stored statistics are restored on exit; recalibration is
  // a per-subnet scratch operation.
  std::vector<std::vector<float>> saved;
  for (auto& [name, bn] : net.named_bn()) {
    saved.push_back(bn->running_mean);
    saved.push_back(bn->running_var);
  }

  PopulationReport report;
  report.run_id = run_id;
  report.method = method;
  report.dataset = dataset_name;
  report.seed = s.seed;
  report.calibrated = s.recalibrate;
  report.calib_images = s.calib_images;

  for (size_t bi = 0; bi < s.bins.size(); ++bi) {
    const double bin = s.bins[bi];
    char bin_name[32];
    std::snprintf(bin_name, sizeof(bin_name), "eval-bin-%g", bin);
    BinAggregate agg;
    agg.bin = bin;
    double sum = 0.0, sum2 = 0.0;
    for (int j = 0; j < s.n_per_bin; ++j) {
      Rng rng = substream(s.seed, bin_name, j);
      PopEntry e;
      e.bin = bin;
      e.subnet_index = j;
      e.config = sample_in_bin(net.arch, bin, s.tol, rng, s.max_tries);
      e.hash = config_hash(net.arch, e.config);
      e.exact_mflops = count_mflops(net.arch, e.config);
      e.params = count_params(net.arch, e.config);
      if (s.recalibrate) calibrate_bn(net, e.config, calib, s.calib_images);
      e.top1 = evaluate_top1(net, e.config, test);
      sum += e.top1;
      sum2 += e.top1 * e.top1;
      agg.min = j == 0 ? e.top1 : std::min(agg.min, e.top1);
      agg.max = j == 0 ? e.top1 : std::max(agg.max, e.top1);
      report.entries.push_back(std::move(e));
    }
    agg.count = s.n_per_bin;
    agg.mean = sum / s.n_per_bin;
    double var = sum2 / s.n_per_bin - agg.mean * agg.mean;
    agg.stddev = std::sqrt(std::max(0.0, var));
    report.per_bin.push_back(agg);
  }

  double total = 0.0;
  for (const PopEntry& e : report.entries) total += e.top1;
  report.overall_mean = total / static_cast<double>(report.entries.size());

  size_t si = 0;
  for (auto& [name, bn] : net.named_bn()) {
    bn->running_mean = saved[si++];
    bn->running_var = saved[si++];
  }
  return report;
}

void write_report_csv(const PopulationReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataFormatError("cannot open " + path + " for writing");
  f << "run_id,method,dataset,seed,bin_mflops,subnet_index,config_hash,exact_mflops,params,top1\n";
  char line[512];
  for (const PopEntry& e : r.entries) {
    std::snprintf(line, sizeof(line), "%s,%s,%s,%llu,%g,%d,%s,%.6f,%lld,%.6f\n",
                  r.run_id.c_str(), r.method.c_str(), r.dataset.c_str(),
                  static_cast<unsigned long long>(r.seed), e.bin, e.subnet_index, e.hash.c_str(),
                  e.exact_mflops, static_cast<long long>(e.params), e.top1);
    f << line;
  }
  if (!f.good()) throw DataFormatError("write failed for " + path);
}

void write_report_summary(const PopulationReport& r, const std::string& path) {
  nlohmann::json j;
  j["run_id"] = r.run_id;
  j["method"] = r.method;
  j["dataset"] = r.dataset;
  j["seed"] = r.seed;
  j["calibrated"] = r.calibrated;
  j["calib_images"] = r.calib_images;
  j["overall_mean_top1"] = r.overall_mean;
  for (const BinAggregate& a : r.per_bin) {
    j["bins"].push_back({{"bin_mflops", a.bin},
                         {"count", a.count},
                         {"mean_top1", a.mean},
                         {"min_top1", a.min},
                         {"max_top1", a.max},
                         {"stddev_top1", a.stddev}});
  }
  std::ofstream f(path);
  if (!f) throw DataFormatError("cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
  if (!f.good()) throw DataFormatError("write failed for " + path);
}

PopulationReport read_report_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataFormatError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("run_id,method,dataset", 0) != 0)
    throw DataFormatError(path + ": not a population report CSV (bad header)");
  PopulationReport r;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 10)
      throw DataFormatError(path + ": expected 10 columns, got " +
                            std::to_string(fields.size()));
    if (r.entries.empty()) {
      r.run_id = fields[0];
      r.method = fields[1];
      r.dataset = fields[2];
      r.seed = std::stoull(fields[3]);
    }
    PopEntry e;
    e.bin = std::stod(fields[4]);
    e.subnet_index = std::stoi(fields[5]);
    e.hash = fields[6];
    e.exact_mflops = std::stod(fields[7]);
    e.params = std::stoll(fields[8]);
    e.top1 = std::stod(fields[9]);
    r.entries.push_back(e);
  }
  if (r.entries.empty()) throw DataFormatError(path + ": no data rows");
  // rebuild per-bin aggregates
  std::vector<double> bins;
  for (const PopEntry& e : r.entries)
    if (std::find(bins.begin(), bins.end(), e.bin) == bins.end()) bins.push_back(e.bin);
  for (double b : bins) {
    BinAggregate agg;
    agg.bin = b;
    double sum = 0.0, sum2 = 0.0;
    bool first = true;
    for (const PopEntry& e : r.entries) {
      if (e.bin != b) continue;
      sum += e.top1;
      sum2 += e.top1 * e.top1;
      agg.min = first ? e.top1 : std::min(agg.min, e.top1);
      agg.max = first ? e.top1 : std::max(agg.max, e.top1);
      first = false;
      ++agg.count;
    }
    agg.mean = sum / agg.count;
    agg.stddev = std::sqrt(std::max(0.0, sum2 / agg.count - agg.mean * agg.mean));
    r.per_bin.push_back(agg);
  }
  double total = 0.0;
  for (const PopEntry& e : r.entries) total += e.top1;
  r.overall_mean = total / static_cast<double>(r.entries.size());
  return r;
}

}  // namespace ofalab
