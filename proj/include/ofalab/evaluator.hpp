#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ofalab/data.hpp"
#include "ofalab/supernet.hpp"

namespace ofalab {

struct PopEntry {
  double bin = 0.0;
  int subnet_index = 0;
  std::string hash;
  SubnetConfig config;
  double exact_mflops = 0.0;
  int64_t params = 0;
  double top1 = 0.0;  // in [0,1]
};

struct BinAggregate {
  double bin = 0.0;
  int count = 0;
  double mean = 0.0, min = 0.0, max = 0.0, stddev = 0.0;
};

struct PopulationReport {
  std::string run_id, method, dataset;
  uint64_t seed = 0;
  bool calibrated = true;
  int calib_images = 0;
  std::vector<PopEntry> entries;
  std::vector<BinAggregate> per_bin;
  double overall_mean = 0.0;
};

// Streams the first n_images of `calib` through the derived subnet using
// batch statistics (weights untouched) and overwrites the active slices'
// running stats with the pooled mean/variance. Deterministic: fixed batching,
// no RNG draws.
void calibrate_bn(Supernet& net, const SubnetConfig& cfg, const Dataset& calib, int n_images,
                  int batch_size = 256);

// Top-1 accuracy over the full dataset in eval mode.
double evaluate_top1(Supernet& net, const SubnetConfig& cfg, const Dataset& test,
                     int batch_size = 256);

struct EvalSettings {
  std::vector<double> bins{4, 6, 8, 10, 12, 14};
  int n_per_bin = 10;
  double tol = 0.5;
  int max_tries = 10000;
  bool recalibrate = true;
  int calib_images = 2048;
  uint64_t seed = 1;
};

// Samples n_per_bin subnets per MFLOP bin (per-(bin,index) RNG substreams),
// recalibrates BN, scores top-1 on the test set and aggregates. The net's
// stored BN statistics are restored afterwards; weights are never touched.
PopulationReport evaluate_population(Supernet& net, const EvalSettings& settings,
                                     const Dataset& test, const Dataset& calib,
                                     const std::string& run_id, const std::string& method,
                                     const std::string& dataset_name);

void write_report_csv(const PopulationReport& r, const std::string& path);
void write_report_summary(const PopulationReport& r, const std::string& path);  // JSON
PopulationReport read_report_csv(const std::string& path);  // for compare/acceptance

}  // namespace ofalab
