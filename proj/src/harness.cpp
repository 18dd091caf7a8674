#include "ofalab/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ofalab/checkpoint.hpp"
#include "ofalab/errors.hpp"
#include "ofalab/flops.hpp"

namespace fs = std::filesystem;

namespace ofalab {

namespace {

struct EpochDefaults {
  int ps_supernet, ps_ps, rss_short, rss;
};

EpochDefaults table1(const std::string& dataset) {
  if (dataset == "mnist") return {10, 27, 10, 37};
  if (dataset == "fmnist") return {25, 57, 25, 82};
  if (dataset == "cifar10" || dataset == "cifar100") return {180, 410, 180, 590};
  throw ConfigError("unknown dataset '" + dataset +
                    "' (valid: mnist, fmnist, cifar10, cifar100)");
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      std::string valid;
      for (const std::string& k : allowed) valid += (valid.empty() ? "" : ", ") + k;
      throw ConfigError("unknown config key '" + where + "." + it.key() + "' (valid: " + valid +
                        ")");
    }
  }
}

void apply_override(nlohmann::json& j, const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + kv + "' is not of the form key.path=value");
  const std::string path = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);
  nlohmann::json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;  // plain string
  }
  (*node)[parts.back()] = parsed;
}

const std::set<std::string> kTopKeys = {"method", "dataset", "arch",    "train",
                                        "ps",     "eval",    "out_dir", "run_id"};
const std::set<std::string> kTrainKeys = {"batch_size", "base_lr",      "momentum", "weight_decay",
                                          "epochs",     "seed",         "augment",  "calib_images",
                                          "dropout",    "subset"};
const std::set<std::string> kPsKeys = {"supernet_epochs", "ps_epochs"};
const std::set<std::string> kEvalKeys = {"bins",        "n_per_bin",   "tol",  "max_tries",
                                         "recalibrate", "calib_images", "seed"};
const std::set<std::string> kArchKeys = {"id",           "input_channels", "input_hw",
                                         "num_classes",  "stem_channels",  "block_out",
                                         "block_stride", "max_depth",      "depth_choices",
                                         "kernel_choices", "width_choices", "dropout"};

}  // namespace

std::vector<std::string> known_methods() {
  return {"OFA_PS",        "RSS",          "RSS_SHORT",    "RSS_PER_BATCH_1",
          "RSS_PER_BATCH_2", "SMALLEST_ONLY", "MIDDLE_ONLY", "LARGEST_ONLY",
          "MAX_THEN_MIN",  "MIN_THEN_MAX", "ALTERNATING"};
}

SchemeSpec ExperimentConfig::scheme() const {
  if (method == "OFA_PS") return ps_scheme(ps_supernet_epochs, ps_epochs);
  if (method == "RSS" || method == "RSS_SHORT") return rss_scheme(train.epochs);
  if (method == "RSS_PER_BATCH_1") return rss_per_batch_scheme(train.epochs, 1);
  if (method == "RSS_PER_BATCH_2") return rss_per_batch_scheme(train.epochs, 2);
  static const std::map<std::string, SchemeKind> biased = {
      {"SMALLEST_ONLY", SchemeKind::kSmallestOnly}, {"MIDDLE_ONLY", SchemeKind::kMiddleOnly},
      {"LARGEST_ONLY", SchemeKind::kLargestOnly},   {"MAX_THEN_MIN", SchemeKind::kMaxThenMin},
      {"MIN_THEN_MAX", SchemeKind::kMinThenMax},    {"ALTERNATING", SchemeKind::kAlternating}};
  auto it = biased.find(method);
  if (it == biased.end()) throw ConfigError("unknown method '" + method + "'");
  return biased_scheme(it->second, train.epochs);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["dataset"] = dataset;
  j["arch"] = arch;
  j["train"] = {{"batch_size", train.batch_size},
                {"base_lr", train.base_lr},
                {"momentum", train.momentum},
                {"weight_decay", train.weight_decay},
                {"epochs", train.epochs},
                {"seed", train.seed},
                {"augment", train.augment},
                {"calib_images", train.calib_images},
                {"dropout", arch.dropout},
                {"subset", train.subset}};
  if (method == "OFA_PS")
    j["ps"] = {{"supernet_epochs", ps_supernet_epochs}, {"ps_epochs", ps_epochs}};
  j["eval"] = {{"bins", eval.bins},         {"n_per_bin", eval.n_per_bin},
               {"tol", eval.tol},           {"max_tries", eval.max_tries},
               {"recalibrate", eval.recalibrate}, {"calib_images", eval.calib_images},
               {"seed", eval.seed}};
  j["out_dir"] = out_dir;
  j["run_id"] = run_id;
  return j;
}

ExperimentConfig resolve_config_json(nlohmann::json j, const std::vector<std::string>& overrides) {
  if (j.is_null()) j = nlohmann::json::object();
  for (const std::string& kv : overrides) apply_override(j, kv);
  check_keys(j, kTopKeys, "config");
  if (j.contains("train")) check_keys(j["train"], kTrainKeys, "train");
  if (j.contains("ps")) check_keys(j["ps"], kPsKeys, "ps");
  if (j.contains("eval")) check_keys(j["eval"], kEvalKeys, "eval");
  if (j.contains("arch")) check_keys(j["arch"], kArchKeys, "arch");

  ExperimentConfig cfg;
  cfg.method = j.value("method", std::string("RSS"));
  const auto methods = known_methods();
  if (std::find(methods.begin(), methods.end(), cfg.method) == methods.end()) {
    std::string valid;
    for (const std::string& m : methods) valid += (valid.empty() ? "" : ", ") + m;
    throw ConfigError("unknown method '" + cfg.method + "' (valid: " + valid + ")");
  }
  cfg.dataset = j.value("dataset", std::string("mnist"));
  const EpochDefaults ed = table1(cfg.dataset);

  // architecture: per-dataset preset unless overridden
  const bool grayscale = cfg.dataset == "mnist" || cfg.dataset == "fmnist";
  cfg.arch = arch_preset(grayscale ? "mnist-small-v1" : "cifar-small-v1");
  if (j.contains("arch")) {
    nlohmann::json ja = j["arch"];
    if (!ja.contains("id")) {
      nlohmann::json base = cfg.arch;  // merge partial overrides onto the preset
      base.update(ja);
      ja = base;
    }
    cfg.arch = ja.get<ArchSpec>();
  }
  if (cfg.dataset == "cifar100") cfg.arch.num_classes = 100;

  const nlohmann::json jt = j.value("train", nlohmann::json::object());
  cfg.train.dataset = cfg.dataset;
  cfg.train.batch_size = jt.value("batch_size", 64);
  cfg.train.base_lr = jt.value("base_lr", 0.01f);
  cfg.train.momentum = jt.value("momentum", 0.9f);
  cfg.train.weight_decay = jt.value("weight_decay", 3e-5f);
  cfg.train.seed = jt.value("seed", 1ull);
  cfg.train.augment = jt.value("augment", true);
  cfg.train.calib_images = jt.value("calib_images", 2048);
  cfg.train.subset = jt.value("subset", 0);
  if (jt.contains("dropout")) cfg.arch.dropout = jt["dropout"].get<float>();

  // epoch schedule defaults per Table 1
  if (cfg.method == "OFA_PS") {
    const nlohmann::json jp = j.value("ps", nlohmann::json::object());
    cfg.ps_supernet_epochs = jp.value("supernet_epochs", ed.ps_supernet);
    cfg.ps_epochs = jp.value("ps_epochs", ed.ps_ps);
    cfg.train.epochs = cfg.ps_supernet_epochs + cfg.ps_epochs;
    if (jt.contains("epochs") && jt["epochs"].get<int>() != cfg.train.epochs)
      throw ConfigError("train.epochs must equal ps.supernet_epochs + ps.ps_epochs for OFA_PS");
  } else {
    if (j.contains("ps"))
      throw ConfigError("config section 'ps' is only valid for method OFA_PS");
    int def = ed.rss;
    if (cfg.method == "RSS_SHORT") def = ed.rss_short;
    cfg.train.epochs = jt.value("epochs", def);
  }

  const nlohmann::json je = j.value("eval", nlohmann::json::object());
  if (je.contains("bins")) cfg.eval.bins = je["bins"].get<std::vector<double>>();
  cfg.eval.n_per_bin = je.value("n_per_bin", 10);
  cfg.eval.tol = je.value("tol", 0.5);
  cfg.eval.max_tries = je.value("max_tries", 10000);
  cfg.eval.recalibrate = je.value("recalibrate", true);
  cfg.eval.calib_images = je.value("calib_images", 2048);
  cfg.eval.seed = je.value("seed", 1ull);

  cfg.out_dir = j.value("out_dir", std::string("runs"));
  cfg.run_id = j.value("run_id", std::string());
  if (cfg.run_id.empty())
    cfg.run_id = cfg.method + "-" + cfg.dataset + "-s" + std::to_string(cfg.train.seed);

  cfg.arch.validate();
  cfg.train.validate();
  cfg.scheme().validate();
  return cfg;
}

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw DataFormatError("cannot open config " + config_path);
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw DataFormatError("config " + config_path + ": " + e.what());
    }
  }
  return resolve_config_json(j, overrides);
}

DataPair load_dataset_pair(const std::string& dataset, const std::string& data_root,
                           int train_subset) {
  const fs::path root = fs::path(data_root) / dataset;
  DataPair d;
  if (dataset == "mnist" || dataset == "fmnist") {
    d.train = load_idx((root / "train-images-idx3-ubyte").string(),
                       (root / "train-labels-idx1-ubyte").string());
    d.test = load_idx((root / "t10k-images-idx3-ubyte").string(),
                      (root / "t10k-labels-idx1-ubyte").string());
  } else if (dataset == "cifar10") {
    std::vector<std::string> train_files;
    for (int i = 1; i <= 5; ++i)
      train_files.push_back((root / ("data_batch_" + std::to_string(i) + ".bin")).string());
    d.train = load_cifar(train_files, "c10");
    d.test = load_cifar({(root / "test_batch.bin").string()}, "c10");
  } else if (dataset == "cifar100") {
    d.train = load_cifar({(root / "train.bin").string()}, "c100");
    d.test = load_cifar({(root / "test.bin").string()}, "c100");
  } else {
    throw ConfigError("unknown dataset '" + dataset + "'");
  }
  d.train.split = "train";
  d.test.split = "test";
  if (train_subset > 0 && train_subset < d.train.size()) {
    const int c = d.train.channels(), h = d.train.images.shape[2], w = d.train.images.shape[3];
    d.train.images.data.resize(static_cast<size_t>(train_subset) * c * h * w);
    d.train.images.shape[0] = train_subset;
    d.train.labels.resize(train_subset);
  }
  normalize_train(d.train);
  normalize_with(d.test, d.train.norm_mean, d.train.norm_std);
  return d;
}

// ---- CLI helpers -----------------------------------------------------------

namespace {

// Parses an arg vector (without argv[0]) against a CLI11 app. Returns true
// when --help was requested (text already printed); usage mistakes surface
// as ConfigError so the frontend maps them to exit code 1.
bool parse_cli(CLI::App& app, std::vector<std::string> args) {
  std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
  try {
    app.parse(args);
    return false;
  } catch (const CLI::CallForHelp&) {
    std::printf("%s", app.help().c_str());
    return true;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }
}

std::string resolve_data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv(kDataRootEnv);
  return env && *env ? env : "datasets";
}

AugmentPolicy augment_policy_for(const std::string& dataset) {
  if (dataset == "cifar10" || dataset == "cifar100") return {4, true};
  return {0, false};  // MNIST/FMNIST: no augmentation
}

void write_version_file(const fs::path& path) {
  std::ofstream f(path);
  f << "ofalab " << kVersion << "\n"
    << "checkpoint_format " << kCheckpointVersion << "\n";
}

void append_metrics(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataFormatError("cannot append to " + path.string());
  f << j.dump() << "\n";
}

// last-wins per-epoch records from a metrics log
struct MetricsSummary {
  int last_epoch = -1;
  int64_t cum_macs = 0;
  double total_wall = 0.0;
  int epochs_seen = 0;
};

MetricsSummary read_metrics(const fs::path& path) {
  MetricsSummary m;
  std::ifstream f(path);
  if (!f) return m;
  std::map<int, std::pair<double, int64_t>> per_epoch;  // wall, cum
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      continue;
    }
    if (!j.contains("epoch")) continue;
    per_epoch[j["epoch"].get<int>()] = {j.value("wall_seconds", 0.0),
                                        j.value("cum_macs", int64_t{0})};
  }
  for (const auto& [epoch, rec] : per_epoch) {
    m.last_epoch = std::max(m.last_epoch, epoch);
    m.total_wall += rec.first;
    if (epoch == m.last_epoch) m.cum_macs = rec.second;
  }
  m.epochs_seen = static_cast<int>(per_epoch.size());
  return m;
}

}  // namespace

int cmd_train(const std::vector<std::string>& args) {
  CLI::App app{"train a supernet under a sampling scheme", "ofalab train"};
  std::string config_path, data_root;
  bool resume = false;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "experiment config JSON");
  app.add_option("--data-root", data_root, "dataset root (else $OFALAB_DATA_ROOT, else ./datasets)");
  app.add_flag("--resume", resume, "continue an interrupted run from its checkpoint");
  app.add_option("overrides", overrides, "dotted config overrides, e.g. train.epochs=5");
  if (parse_cli(app, args)) return 0;

  ExperimentConfig cfg = resolve_config(config_path, overrides);
  const fs::path run_dir = fs::path(cfg.out_dir) / cfg.run_id;
  const fs::path ckpt_path = run_dir / "checkpoint.ofas";
  if (!resume && fs::exists(ckpt_path))
    throw ConfigError("run directory " + run_dir.string() +
                      " already holds a checkpoint; pass --resume or choose another run_id");
  fs::create_directories(run_dir);

  {
    std::ofstream f(run_dir / "config.json");
    f << cfg.to_json().dump(2) << "\n";
  }
  write_version_file(run_dir / "version.txt");

  const DataPair data =
      load_dataset_pair(cfg.dataset, resolve_data_root(data_root), cfg.train.subset);
  const SchemeSpec spec = cfg.scheme();

  Supernet net = resume && fs::exists(ckpt_path) ? load_checkpoint(ckpt_path.string())
                                                 : build_supernet(cfg.arch, cfg.train.seed);
  int start_epoch = 0;
  int64_t start_macs = 0;
  if (resume) {
    const MetricsSummary m = read_metrics(run_dir / "metrics.jsonl");
    start_epoch = m.last_epoch + 1;
    start_macs = m.cum_macs;
    if (start_epoch >= spec.epochs) {
      std::printf("run %s already complete (%d epochs)\n", cfg.run_id.c_str(), spec.epochs);
      return 0;
    }
  }

  std::printf("train %s: method=%s dataset=%s epochs=%d seed=%llu (%d train / %d test images)\n",
              cfg.run_id.c_str(), cfg.method.c_str(), cfg.dataset.c_str(), spec.epochs,
              static_cast<unsigned long long>(cfg.train.seed), data.train.size(),
              data.test.size());
  const fs::path metrics_path = run_dir / "metrics.jsonl";
  auto on_epoch = [&](const EpochRecord& r) {
    nlohmann::json j = {{"epoch", r.epoch},
                        {"lr", r.lr},
                        {"mean_loss", r.mean_loss},
                        {"steps", r.steps},
                        {"configs_sampled", r.configs_sampled},
                        {"config_hashes", r.config_hashes},
                        {"wall_seconds", r.wall_seconds},
                        {"cum_macs", r.cum_macs}};
    append_metrics(metrics_path, j);
    save_checkpoint(net, ckpt_path.string());
    std::printf("epoch %d/%d  lr %.5f  loss %.4f  %.1fs  cum_macs %.3e\n", r.epoch + 1,
                spec.epochs, r.lr, r.mean_loss, r.wall_seconds,
                static_cast<double>(r.cum_macs));
    std::fflush(stdout);
  };

  const TrainResult result = train_run(net, spec, cfg.train, data.train,
                                       augment_policy_for(cfg.dataset), on_epoch, start_epoch,
                                       start_macs);
  append_metrics(metrics_path, {{"run_complete", true},
                                {"epochs", spec.epochs},
                                {"cum_macs", result.cum_macs}});
  std::printf("done: %s (%zu epochs this session, cum_macs %.3e)\n", cfg.run_id.c_str(),
              result.epochs.size(), static_cast<double>(result.cum_macs));
  return 0;
}

int cmd_eval(const std::vector<std::string>& args) {
  CLI::App app{"MFLOP-binned population evaluation of a trained checkpoint", "ofalab eval"};
  std::string run, ckpt_flag, dataset_flag, data_root, out_flag, method_flag;
  std::vector<std::string> overrides;
  app.add_option("--run", run, "run directory (uses its config.json + checkpoint.ofas)");
  app.add_option("--checkpoint", ckpt_flag, "checkpoint file (with --dataset)");
  app.add_option("--dataset", dataset_flag, "dataset name for --checkpoint mode");
  app.add_option("--data-root", data_root, "dataset root (else $OFALAB_DATA_ROOT, else ./datasets)");
  app.add_option("--out", out_flag, "directory for report.csv / summary.json");
  app.add_option("--method", method_flag, "method label for --checkpoint mode reports");
  app.add_option("overrides", overrides, "dotted config overrides, e.g. eval.n_per_bin=4");
  if (parse_cli(app, args)) return 0;

  std::string run_id = "adhoc", method = "UNKNOWN", dataset, ckpt, out;
  int subset = 0;
  ExperimentConfig cfg;
  if (!run.empty()) {
    const fs::path run_dir = run;
    cfg = resolve_config((run_dir / "config.json").string(), overrides);
    run_id = cfg.run_id;
    method = cfg.method;
    dataset = cfg.dataset;
    subset = cfg.train.subset;
    ckpt = (run_dir / "checkpoint.ofas").string();
    out = out_flag.empty() ? run_dir.string() : out_flag;
  } else {
    if (ckpt_flag.empty() || dataset_flag.empty())
      throw ConfigError("eval needs --run DIR or (--checkpoint FILE --dataset NAME)");
    nlohmann::json j = {{"dataset", dataset_flag}};
    cfg = resolve_config_json(j, overrides);
    dataset = cfg.dataset;
    ckpt = ckpt_flag;
    if (!method_flag.empty()) method = method_flag;
    out = out_flag.empty() ? "." : out_flag;
  }

  Supernet net = load_checkpoint(ckpt);
  if (net.arch.input_hw != cfg.arch.input_hw || net.arch.input_channels != cfg.arch.input_channels)
    throw ConfigError("checkpoint architecture does not accept " + dataset + " inputs");
  const DataPair data = load_dataset_pair(dataset, resolve_data_root(data_root), subset);
  const PopulationReport report =
      evaluate_population(net, cfg.eval, data.test, data.train, run_id, method, dataset);
  fs::create_directories(out);
  write_report_csv(report, (fs::path(out) / "report.csv").string());
  write_report_summary(report, (fs::path(out) / "summary.json").string());
  std::printf("eval %s: overall mean top-1 %.4f\n", run_id.c_str(), report.overall_mean);
  for (const BinAggregate& b : report.per_bin)
    std::printf("  bin %2g MF: mean %.4f  min %.4f  max %.4f  sd %.4f\n", b.bin, b.mean, b.min,
                b.max, b.stddev);
  return 0;
}

int cmd_compare(const std::vector<std::string>& args) {
  CLI::App app{"side-by-side accuracy/compute tables for evaluated runs", "ofalab compare"};
  std::vector<std::string> run_dirs;
  std::string out_flag = ".";
  app.add_option("runs", run_dirs, "run directories (first one is the speedup baseline)");
  app.add_option("--out", out_flag, "output directory for the comparison CSVs");
  if (parse_cli(app, args)) return 0;
  if (run_dirs.size() < 2) throw ConfigError("compare needs at least two run directories");
  const fs::path out = out_flag;
  fs::create_directories(out);

  struct RunInfo {
    std::string run_id, method, dataset;
    uint64_t seed;
    int epochs;
    double wall;
    int64_t macs;
    PopulationReport report;
  };
  std::vector<RunInfo> runs;
  for (const std::string& dir : run_dirs) {
    const fs::path run_dir = dir;
    std::ifstream cf(run_dir / "config.json");
    if (!cf) throw DataFormatError("missing " + (run_dir / "config.json").string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(cf);
    } catch (const nlohmann::json::exception& e) {
      throw DataFormatError((run_dir / "config.json").string() + ": " + e.what());
    }
    RunInfo r;
    r.run_id = j.value("run_id", dir);
    r.method = j.value("method", "?");
    r.dataset = j.value("dataset", "?");
    r.seed = j.contains("train") ? j["train"].value("seed", 0ull) : 0ull;
    const MetricsSummary m = read_metrics(run_dir / "metrics.jsonl");
    r.epochs = m.epochs_seen;
    r.wall = m.total_wall;
    r.macs = m.cum_macs;
    r.report = read_report_csv((run_dir / "report.csv").string());
    runs.push_back(std::move(r));
  }
  for (const RunInfo& r : runs)
    if (r.dataset != runs[0].dataset)
      throw ConfigError("compare: mixed datasets (" + runs[0].dataset + " vs " + r.dataset + ")");

  {
    std::ofstream f(out / "compare_bins.csv");
    f << "run_id,method,seed,bin_mflops,mean_top1,min_top1,max_top1,stddev_top1,best_top1\n";
    char line[512];
    for (const RunInfo& r : runs)
      for (const BinAggregate& b : r.report.per_bin) {
        std::snprintf(line, sizeof(line), "%s,%s,%llu,%g,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      r.run_id.c_str(), r.method.c_str(),
                      static_cast<unsigned long long>(r.seed), b.bin, b.mean, b.min, b.max,
                      b.stddev, b.max);
        f << line;
      }
  }
  {
    std::ofstream f(out / "compare_compute.csv");
    f << "run_id,method,seed,epochs,wall_seconds,cum_macs,wall_speedup_vs_first,"
         "macs_speedup_vs_first\n";
    char line[512];
    for (const RunInfo& r : runs) {
      const double ws = r.wall > 0 ? runs[0].wall / r.wall : 0.0;
      const double ms = r.macs > 0 ? static_cast<double>(runs[0].macs) / r.macs : 0.0;
      std::snprintf(line, sizeof(line), "%s,%s,%llu,%d,%.1f,%lld,%.3f,%.3f\n", r.run_id.c_str(),
                    r.method.c_str(), static_cast<unsigned long long>(r.seed), r.epochs, r.wall,
                    static_cast<long long>(r.macs), ws, ms);
      f << line;
    }
  }
  std::printf("%-28s %-16s %8s %12s %14s %8s\n", "run", "method", "epochs", "wall_s", "cum_macs",
              "mean_t1");
  for (const RunInfo& r : runs)
    std::printf("%-28s %-16s %8d %12.1f %14.4e %8.4f\n", r.run_id.c_str(), r.method.c_str(),
                r.epochs, r.wall, static_cast<double>(r.macs), r.report.overall_mean);
  std::printf("wrote %s and %s\n", (out / "compare_bins.csv").c_str(),
              (out / "compare_compute.csv").c_str());
  return 0;
}

int cmd_flops(const std::vector<std::string>& args) {
  CLI::App app{"exact MFLOPs of one subnet config", "ofalab flops"};
  std::string config_path, arch_id, preset;
  app.add_option("--config", config_path,
                 "JSON with optional \"arch\" and a \"config\" or \"preset\" entry");
  app.add_option("--arch", arch_id, "architecture preset id");
  app.add_option("--preset", preset, "subnet preset: min, middle or max");
  if (parse_cli(app, args)) return 0;

  ArchSpec arch;
  SubnetConfig sc;
  bool have_config = false;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw DataFormatError("cannot open " + config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw DataFormatError(config_path + ": " + e.what());
    }
    arch = j.contains("arch") ? j["arch"].get<ArchSpec>() : ArchSpec{};
    if (j.contains("config")) {
      sc = j["config"].get<SubnetConfig>();
      have_config = true;
    } else if (j.contains("preset")) {
      preset = j["preset"].get<std::string>();
    }
  } else if (!arch_id.empty()) {
    arch = arch_preset(arch_id);
  }
  if (!have_config) {
    if (preset.empty()) preset = "max";
    if (preset == "min")
      sc = all_min_config(arch);
    else if (preset == "max")
      sc = all_max_config(arch);
    else if (preset == "middle")
      sc = middle_config(arch);
    else
      throw ConfigError("unknown preset '" + preset + "' (min, middle, max)");
  }
  validate_config(arch, sc);
  std::printf("%.6f\n", count_mflops(arch, sc));
  return 0;
}

int cmd_population_size(const std::vector<std::string>& args) {
  CLI::App app{"search-space cardinality (exact, decimal)", "ofalab population-size"};
  std::string arch_id;
  app.add_option("--arch", arch_id, "architecture preset id");
  if (parse_cli(app, args)) return 0;
  const ArchSpec arch = arch_id.empty() ? ArchSpec{} : arch_preset(arch_id);
  std::printf("%s\n", population_size(arch).c_str());
  return 0;
}

int cmd_schemes(const std::vector<std::string>& args) {
  CLI::App app{"list the available training methods", "ofalab schemes"};
  if (parse_cli(app, args)) return 0;
  std::printf("available methods:\n");
  std::printf("  %-16s progressive shrinking: supernet pretrain, then kernel/depth/width phases\n",
              "OFA_PS");
  std::printf("  %-16s random subnet sampling, one subnet per epoch, full budget\n", "RSS");
  std::printf("  %-16s RSS at the shortened epoch budget\n", "RSS_SHORT");
  std::printf("  %-16s fresh subnet every batch\n", "RSS_PER_BATCH_1");
  std::printf("  %-16s two subnets per batch, gradients averaged\n", "RSS_PER_BATCH_2");
  std::printf("  %-16s fixed smallest subnet\n", "SMALLEST_ONLY");
  std::printf("  %-16s fixed kernel=5 width=4 depth=3 subnet\n", "MIDDLE_ONLY");
  std::printf("  %-16s fixed largest subnet\n", "LARGEST_ONLY");
  std::printf("  %-16s largest for the first half of epochs, then smallest\n", "MAX_THEN_MIN");
  std::printf("  %-16s smallest first, then largest\n", "MIN_THEN_MAX");
  std::printf("  %-16s alternate smallest/largest per epoch (starts smallest)\n", "ALTERNATING");
  return 0;
}

}  // namespace ofalab
