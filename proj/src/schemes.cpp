#include "ofalab/schemes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "ofalab/errors.hpp"
#include "ofalab/flops.hpp"
#include "ofalab/ops.hpp"

namespace ofalab {

void SchemeSpec::validate() const {
  if (epochs <= 0) throw ConfigError("SchemeSpec: epochs must be positive");
  if (kind == SchemeKind::kRssPerBatch && n_subnets != 1 && n_subnets != 2)
    throw ConfigError("SchemeSpec: per-batch n_subnets must be 1 or 2");
  if (kind == SchemeKind::kPS) {
    if (supernet_epochs < 0 || kernel_epochs < 0 || depth_epochs < 0 || width_epochs < 0)
      throw ConfigError("SchemeSpec: negative PS phase length");
    if (supernet_epochs + kernel_epochs + depth_epochs + width_epochs != epochs)
      throw ConfigError("SchemeSpec: PS phase epochs must sum to the total");
  }
}

SchemeSpec rss_scheme(int epochs) {
  SchemeSpec s;
  s.kind = SchemeKind::kRssPerEpoch;
  s.epochs = epochs;
  s.lr_policy = LrPolicy::kCosine;
  s.validate();
  return s;
}

SchemeSpec rss_per_batch_scheme(int epochs, int n_subnets) {
  SchemeSpec s;
  s.kind = SchemeKind::kRssPerBatch;
  s.epochs = epochs;
  s.n_subnets = n_subnets;
  s.lr_policy = LrPolicy::kCosine;
  s.validate();
  return s;
}

SchemeSpec ps_scheme(int supernet_epochs, int ps_epochs) {
  SchemeSpec s;
  s.kind = SchemeKind::kPS;
  s.epochs = supernet_epochs + ps_epochs;
  s.supernet_epochs = supernet_epochs;
  s.kernel_epochs = ps_epochs / 3;
  s.depth_epochs = ps_epochs / 3;
  s.width_epochs = ps_epochs - 2 * (ps_epochs / 3);  // remainder goes to width
  s.lr_policy = LrPolicy::kCosine;
  s.validate();
  return s;
}

SchemeSpec biased_scheme(SchemeKind kind, int epochs) {
  switch (kind) {
    case SchemeKind::kSmallestOnly:
    case SchemeKind::kMiddleOnly:
    case SchemeKind::kLargestOnly:
    case SchemeKind::kMaxThenMin:
    case SchemeKind::kMinThenMax:
    case SchemeKind::kAlternating:
      break;
    default:
      throw ConfigError("biased_scheme: not a biased scheme kind");
  }
  SchemeSpec s;
  s.kind = kind;
  s.epochs = epochs;
  s.lr_policy = LrPolicy::kConstant;  // single-/two-config schemes train at constant lr
  s.validate();
  return s;
}

std::string scheme_kind_name(SchemeKind k) {
  switch (k) {
    case SchemeKind::kRssPerEpoch: return "RSS";
    case SchemeKind::kRssPerBatch: return "RSS_PER_BATCH";
    case SchemeKind::kPS: return "OFA_PS";
    case SchemeKind::kSmallestOnly: return "SMALLEST_ONLY";
    case SchemeKind::kMiddleOnly: return "MIDDLE_ONLY";
    case SchemeKind::kLargestOnly: return "LARGEST_ONLY";
    case SchemeKind::kMaxThenMin: return "MAX_THEN_MIN";
    case SchemeKind::kMinThenMax: return "MIN_THEN_MAX";
    case SchemeKind::kAlternating: return "ALTERNATING";
  }
  return "?";
}

PsPhase ps_phase_at(const SchemeSpec& spec, int epoch) {
  if (epoch < spec.supernet_epochs) return PsPhase::kSupernet;
  if (epoch < spec.supernet_epochs + spec.kernel_epochs) return PsPhase::kKernel;
  if (epoch < spec.supernet_epochs + spec.kernel_epochs + spec.depth_epochs)
    return PsPhase::kDepth;
  return PsPhase::kWidth;
}

SubnetConfig rss_sample(const ArchSpec& a, Rng& rng) { return uniform_config(a, rng); }

namespace {

// Phase-restricted draw: free dimensions sampled uniformly, locked ones
// pinned at max. Draw order matches uniform_config for the free dims.
SubnetConfig ps_sample(const ArchSpec& a, Rng& rng, PsPhase phase) {
  if (phase == PsPhase::kWidth) return uniform_config(a, rng);
  SubnetConfig c = all_max_config(a);
  auto pick = [&rng](const std::vector<int>& v) {
    return v[rng.uniform_int(0, static_cast<int>(v.size()) - 1)];
  };
  for (int b = 0; b < a.num_blocks(); ++b)
    for (int l = 0; l < a.max_depth; ++l) c.kernel[b][l] = pick(a.kernel_choices);
  if (phase == PsPhase::kDepth)
    for (int b = 0; b < a.num_blocks(); ++b) c.depth[b] = pick(a.depth_choices);
  return c;
}

}  // namespace

void SchemeState::start_epoch(const ArchSpec& a, const SchemeSpec& spec, int new_epoch) {
  epoch = new_epoch;
  step = 0;
  rng = substream(seed, "scheme", new_epoch);
  if (spec.kind == SchemeKind::kRssPerEpoch) epoch_config = rss_sample(a, rng);
}

std::vector<SubnetConfig> next_subnets(const ArchSpec& a, const SchemeSpec& spec,
                                       SchemeState& state) {
  if (state.epoch >= spec.epochs) return {};  // budget exhausted
  ++state.step;
  switch (spec.kind) {
    case SchemeKind::kRssPerEpoch:
      return {state.epoch_config};
    case SchemeKind::kRssPerBatch: {
      std::vector<SubnetConfig> out;
      for (int i = 0; i < spec.n_subnets; ++i) out.push_back(rss_sample(a, state.rng));
      return out;
    }
    case SchemeKind::kPS: {
      const PsPhase phase = ps_phase_at(spec, state.epoch);
      switch (phase) {
        case PsPhase::kSupernet: return {all_max_config(a)};
        case PsPhase::kKernel: return {ps_sample(a, state.rng, phase)};
        case PsPhase::kDepth:
          return {ps_sample(a, state.rng, phase), ps_sample(a, state.rng, phase)};
        case PsPhase::kWidth:
          return {ps_sample(a, state.rng, phase), ps_sample(a, state.rng, phase),
                  ps_sample(a, state.rng, phase), ps_sample(a, state.rng, phase)};
      }
      return {};
    }
    case SchemeKind::kSmallestOnly: return {all_min_config(a)};
    case SchemeKind::kMiddleOnly: return {middle_config(a)};
    case SchemeKind::kLargestOnly: return {all_max_config(a)};
    case SchemeKind::kMaxThenMin:
      return {state.epoch < spec.epochs / 2 ? all_max_config(a) : all_min_config(a)};
    case SchemeKind::kMinThenMax:
      return {state.epoch < spec.epochs / 2 ? all_min_config(a) : all_max_config(a)};
    case SchemeKind::kAlternating:  // starts with the smallest at epoch 0
      return {state.epoch % 2 == 0 ? all_min_config(a) : all_max_config(a)};
  }
  return {};
}

GradVector snapshot_grads(Supernet& net) {
  GradVector g;
  g.reserve(static_cast<size_t>(net.param_element_count()));
  for (Param* p : net.all_params())
    g.insert(g.end(), p->grad.data.begin(), p->grad.data.end());
  return g;
}

void load_grads(Supernet& net, const GradVector& g) {
  size_t off = 0;
  for (Param* p : net.all_params()) {
    if (off + p->grad.data.size() > g.size())
      throw ConfigError("load_grads: gradient vector too short");
    std::copy(g.begin() + off, g.begin() + off + p->grad.data.size(), p->grad.data.begin());
    off += p->grad.data.size();
  }
  if (off != g.size()) throw ConfigError("load_grads: gradient vector size mismatch");
}

GradVector combine_gradients(const std::vector<GradVector>& sets) {
  if (sets.empty()) throw ConfigError("combine_gradients: empty gradient list");
  for (const GradVector& s : sets)
    if (s.size() != sets[0].size())
      throw ConfigError("combine_gradients: mismatched gradient vector sizes");
  GradVector out(sets[0].size(), 0.0f);
  const float inv = 1.0f / static_cast<float>(sets.size());
  for (const GradVector& s : sets)
    for (size_t i = 0; i < out.size(); ++i) out[i] += s[i];
  for (float& v : out) v *= inv;
  return out;
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ConfigError("TrainConfig: batch_size must be positive");
  if (epochs <= 0) throw ConfigError("TrainConfig: epochs must be positive");
  if (base_lr <= 0.0f) throw ConfigError("TrainConfig: base_lr must be positive");
  if (calib_images <= 0) throw ConfigError("TrainConfig: calib_images must be positive");
}

TrainResult train_run(Supernet& net, const SchemeSpec& spec, const TrainConfig& cfg,
                      const Dataset& train_data, const AugmentPolicy& augment_policy,
                      const std::function<void(const EpochRecord&)>& on_epoch, int start_epoch,
                      int64_t start_cum_macs) {
  spec.validate();
  cfg.validate();
  if (cfg.epochs != spec.epochs)
    throw ConfigError("train_run: TrainConfig epochs (" + std::to_string(cfg.epochs) +
                      ") disagree with scheme epochs (" + std::to_string(spec.epochs) + ")");
  if (train_data.size() == 0) throw ConfigError("train_run: empty training set");

  const ArchSpec& arch = net.arch;
  std::vector<Param*> params = net.all_params();
  TrainResult result;
  result.cum_macs = start_cum_macs;
  SchemeState state;
  state.seed = cfg.seed;

  for (int epoch = start_epoch; epoch < spec.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = spec.lr_policy == LrPolicy::kCosine
                          ? cosine_lr(epoch, spec.epochs, cfg.base_lr)
                          : static_cast<double>(cfg.base_lr);
    state.start_epoch(arch, spec, epoch);
    Rng dropout_rng = substream(cfg.seed, "dropout", epoch);
    Rng augment_rng = substream(cfg.seed, "augment", epoch);
    BatchStream stream(train_data, cfg.batch_size, cfg.seed, epoch, /*shuffle=*/true);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    double loss_sum = 0.0;
    uint64_t hash_digest = 1469598103934665603ull;  // FNV accumulator over config hashes
    Tensor images;
    std::vector<int> labels;
    while (stream.next(images, labels)) {
      if (cfg.augment) images = augment_batch(images, augment_policy, augment_rng);
      const std::vector<SubnetConfig> configs = next_subnets(arch, spec, state);
      if (configs.empty()) throw ConfigError("train_run: scheme returned no configs mid-epoch");
      const int nb = images.shape[0];

      double step_loss = 0.0;
      std::vector<GradVector> grad_sets;
      SupernetTape tape;
      for (size_t ci = 0; ci < configs.size(); ++ci) {
        const SubnetConfig& sc = configs[ci];
        Tensor logits = supernet_forward(net, sc, images, RunMode::kTrain, &dropout_rng, &tape);
        CrossEntropyResult ce;
        try {
          ce = softmax_cross_entropy(logits, labels);
        } catch (const NumericError&) {
          throw NumericError("train_run: non-finite loss at epoch " + std::to_string(epoch) +
                             " step " + std::to_string(state.step - 1) + " config " +
                             config_hash(arch, sc));
        }
        step_loss += ce.loss;
        supernet_backward(net, sc, ce.grad_logits, tape);
        if (configs.size() > 1) {
          grad_sets.push_back(snapshot_grads(net));
          net.zero_grads();
        }
        result.cum_macs += count_macs_exact(arch, sc) * nb * 3;
        ++rec.configs_sampled;
        const std::string h = config_hash(arch, sc);
        for (char c : h) {
          hash_digest ^= static_cast<uint8_t>(c);
          hash_digest *= 1099511628211ull;
        }
        // per-epoch logs keep the distinct configs when there are few
        if (rec.config_hashes.size() < 8 &&
            (rec.config_hashes.empty() || rec.config_hashes.back() != h))
          rec.config_hashes.push_back(h);
      }
      if (configs.size() > 1) load_grads(net, combine_gradients(grad_sets));
      step_loss /= static_cast<double>(configs.size());
      if (!std::isfinite(step_loss))
        throw NumericError("train_run: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(state.step - 1) + " config " +
                           config_hash(arch, configs[0]));
      loss_sum += step_loss;
      sgd_step(params, static_cast<float>(lr), cfg.momentum, cfg.weight_decay);
      ++rec.steps;
    }

    if (rec.configs_sampled > 8) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "digest:%016llx",
                    static_cast<unsigned long long>(hash_digest));
      rec.config_hashes = {buf};
    }
    rec.mean_loss = rec.steps ? loss_sum / rec.steps : 0.0;
    rec.cum_macs = result.cum_macs;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

int64_t simulate_schedule_macs(const ArchSpec& a, const SchemeSpec& spec, const TrainConfig& cfg,
                               int train_size) {
  spec.validate();
  if (train_size <= 0) throw ConfigError("simulate_schedule_macs: empty dataset");
  SchemeState state;
  state.seed = cfg.seed;
  int64_t macs = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    state.start_epoch(a, spec, epoch);
    int remaining = train_size;
    while (remaining > 0) {
      const int nb = std::min(remaining, cfg.batch_size);
      for (const SubnetConfig& sc : next_subnets(a, spec, state))
        macs += count_macs_exact(a, sc) * nb * 3;
      remaining -= nb;
    }
  }
  return macs;
}

}  // namespace ofalab
