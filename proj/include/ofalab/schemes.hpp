#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ofalab/arch.hpp"
#include "ofalab/data.hpp"
#include "ofalab/supernet.hpp"

namespace ofalab {

enum class SchemeKind {
  kRssPerEpoch,
  kRssPerBatch,  // n_subnets fresh samples every step, gradients combined
  kPS,           // supernet pretrain -> kernel -> depth -> width phases
  kSmallestOnly,
  kMiddleOnly,
  kLargestOnly,
  kMaxThenMin,
  kMinThenMax,
  kAlternating,
};

enum class LrPolicy { kCosine, kConstant };

enum class PsPhase { kSupernet, kKernel, kDepth, kWidth };

struct SchemeSpec {
  SchemeKind kind = SchemeKind::kRssPerEpoch;
  int epochs = 0;      // total; for PS this is supernet + phase epochs
  int n_subnets = 1;   // RSS_PER_BATCH only (1 or 2)
  int supernet_epochs = 0, kernel_epochs = 0, depth_epochs = 0, width_epochs = 0;  // PS
  LrPolicy lr_policy = LrPolicy::kCosine;

  void validate() const;
};

// Constructors applying the default lr policies: cosine everywhere except
// the single-/two-config biased schemes, which use constant lr.
SchemeSpec rss_scheme(int epochs);
SchemeSpec rss_per_batch_scheme(int epochs, int n_subnets);
// PS total split into equal kernel/depth/width thirds, remainder to width.
SchemeSpec ps_scheme(int supernet_epochs, int ps_epochs);
SchemeSpec biased_scheme(SchemeKind kind, int epochs);

std::string scheme_kind_name(SchemeKind k);
PsPhase ps_phase_at(const SchemeSpec& spec, int epoch);

// Alg.-1-style uniform draw: every kernel/width/depth entry independent and
// uniform over its choice set.
SubnetConfig rss_sample(const ArchSpec& a, Rng& rng);

struct SchemeState {
  uint64_t seed = 1;
  int epoch = 0;
  int step = 0;  // within the current epoch
  Rng rng{0};    // scheme sampling stream, re-derived per epoch
  SubnetConfig epoch_config;  // RSS_PER_EPOCH cache

  // Re-derives the per-epoch sampling stream (resume-friendly: no RNG state
  // needs serializing) and refreshes the per-epoch cached subnet.
  void start_epoch(const ArchSpec& a, const SchemeSpec& spec, int new_epoch);
};

// Configs to train on for one update step (1, 2 or 4 of them); empty when the
// epoch budget is exhausted. Advances state.step.
std::vector<SubnetConfig> next_subnets(const ArchSpec& a, const SchemeSpec& spec,
                                       SchemeState& state);

// Flat gradient vectors aligned with Supernet::all_params() element order.
using GradVector = std::vector<float>;
GradVector snapshot_grads(Supernet& net);
void load_grads(Supernet& net, const GradVector& g);
// Elementwise arithmetic mean; throws ConfigError on an empty list.
GradVector combine_gradients(const std::vector<GradVector>& sets);

struct TrainConfig {
  std::string dataset = "mnist";
  int batch_size = 64;
  float base_lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 3e-5f;
  int epochs = 0;
  uint64_t seed = 1;
  bool augment = true;  // honored only where the policy is non-identity (CIFAR)
  int calib_images = 2048;
  int subset = 0;  // use only the first n training images (CI profile); 0 = all

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  int steps = 0;
  int configs_sampled = 0;
  std::vector<std::string> config_hashes;  // all of them when <= 8, else a digest entry
  double wall_seconds = 0.0;
  int64_t cum_macs = 0;  // cumulative training MACs from epoch 0 (fwd x batch x 3)
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int64_t cum_macs = 0;
};

// Executes the scheme's full schedule (or [start_epoch, epochs) when
// resuming). Gradients from multi-subnet steps are combined by arithmetic
// mean into one SGD step. Throws NumericError on NaN loss, naming epoch,
// step and config. `on_epoch` fires after each epoch (checkpointing, logs).
TrainResult train_run(Supernet& net, const SchemeSpec& spec, const TrainConfig& cfg,
                      const Dataset& train_data, const AugmentPolicy& augment_policy,
                      const std::function<void(const EpochRecord&)>& on_epoch = nullptr,
                      int start_epoch = 0, int64_t start_cum_macs = 0);

// Replays the sampling schedule without touching any weights and returns the
// cumulative training MACs the real run would record (same seed, same
// stream). Backs the compute-accounting checks.
int64_t simulate_schedule_macs(const ArchSpec& a, const SchemeSpec& spec, const TrainConfig& cfg,
                               int train_size);

}  // namespace ofalab
