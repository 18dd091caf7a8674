#pragma once

#include <string>
#include <vector>

#include "ofalab/arch.hpp"
#include "ofalab/evaluator.hpp"
#include "ofalab/schemes.hpp"

namespace ofalab {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kDataRootEnv = "OFALAB_DATA_ROOT";

// Fully resolved experiment description: method + dataset fix the Table-1
// epoch defaults; everything is overridable from the config file or dotted
// CLI overrides (e.g. train.batch_size=128).
struct ExperimentConfig {
  std::string method = "RSS";
  std::string dataset = "mnist";
  ArchSpec arch;
  TrainConfig train;
  int ps_supernet_epochs = 0, ps_epochs = 0;  // PS methods only
  EvalSettings eval;
  std::string out_dir = "runs";
  std::string run_id;  // default "<method>-<dataset>-s<seed>"

  SchemeSpec scheme() const;
  nlohmann::json to_json() const;
};

std::vector<std::string> known_methods();

// Parses the config file, applies dotted overrides, fills method/dataset
// epoch defaults, validates every key (unknown keys are errors listing the
// valid ones).
ExperimentConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides);
// Same, starting from an in-memory JSON object (used for defaults-only runs).
ExperimentConfig resolve_config_json(nlohmann::json j,
                                     const std::vector<std::string>& overrides);

// Dataset loading per the layout under the data root (flag, else
// $OFALAB_DATA_ROOT, else ./datasets). Train-split normalization stats are
// applied to both splits; optional subset keeps the first n train images.
struct DataPair {
  Dataset train, test;
};
DataPair load_dataset_pair(const std::string& dataset, const std::string& data_root,
                           int train_subset = 0);

// CLI entry points (exit codes: 0 ok, 1 usage/config, 2 data/format, 3 numeric)
int cmd_train(const std::vector<std::string>& args);
int cmd_eval(const std::vector<std::string>& args);
int cmd_compare(const std::vector<std::string>& args);
int cmd_flops(const std::vector<std::string>& args);
int cmd_population_size(const std::vector<std::string>& args);
int cmd_schemes(const std::vector<std::string>& args);

}  // namespace ofalab
