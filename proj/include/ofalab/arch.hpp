#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofalab/rng.hpp"

namespace ofalab {

// Static architecture description: the elastic search space plus the fixed
// skeleton (stem, block channels, strides). Elastic choices are per-layer
// kernel {3,5,7} and width multiplier {3,4,6}, per-block depth {2,3,4}.
struct ArchSpec {
  std::string id = "cifar-small-v1";
  int input_channels = 3;
  int input_hw = 32;  // square inputs
  int num_classes = 10;
  int stem_channels = 24;                         // stem is 3x3 stride 1 pad 1
  std::vector<int> block_out{12, 20, 20, 40, 48};  // per-block output channels
  std::vector<int> block_stride{2, 2, 2, 2, 1};    // stride of each block's first layer
  int max_depth = 4;
  std::vector<int> depth_choices{2, 3, 4};
  std::vector<int> kernel_choices{3, 5, 7};
  std::vector<int> width_choices{3, 4, 6};
  float dropout = 0.1f;

  int num_blocks() const { return static_cast<int>(block_out.size()); }
  int max_kernel() const { return kernel_choices.back(); }
  int max_width() const { return width_choices.back(); }
  // input channel count of layer l of block b
  int layer_in(int b, int l) const {
    if (l > 0) return block_out[b];
    return b == 0 ? stem_channels : block_out[b - 1];
  }
  int layer_stride(int b, int l) const { return l == 0 ? block_stride[b] : 1; }
  void validate() const;  // throws ConfigError
};

// Built-in architectures. "cifar-small-v1" (3x32x32) is the default spec;
// "mnist-small-v1" (1x28x28) covers the grayscale datasets. Channel counts
// were tuned so the all-min/all-max configs land at ~3.8-4.0 / ~14.9 MFLOPs
// (see the MAC oracle in tests).
ArchSpec arch_preset(const std::string& id);
std::vector<std::string> arch_preset_ids();

// One point of the search space. kernel/width always carry max_depth entries
// per block; entries at l >= depth[b] are inactive (ignored by the network,
// zeroed by canonical()).
struct SubnetConfig {
  std::vector<int> depth;                 // [num_blocks]
  std::vector<std::vector<int>> kernel;   // [num_blocks][max_depth]
  std::vector<std::vector<int>> width;    // [num_blocks][max_depth]

  bool operator==(const SubnetConfig& o) const = default;
};

SubnetConfig uniform_filled_config(const ArchSpec& a, int kernel, int width, int depth);
SubnetConfig all_max_config(const ArchSpec& a);
SubnetConfig all_min_config(const ArchSpec& a);
// kernel=5, width=4, depth=3 everywhere
SubnetConfig middle_config(const ArchSpec& a);

// Every entry drawn independently and uniformly from its choice set, in a
// fixed order: kernels (block-major, then layer), widths, then depths.
// Optional lock pins every width entry to one value (bin-extreme sampling).
SubnetConfig uniform_config(const ArchSpec& a, Rng& rng, int width_lock = 0);

void validate_config(const ArchSpec& a, const SubnetConfig& c);  // throws ConfigError

// Inactive entries zeroed, so functionally identical configs compare and
// hash identically.
SubnetConfig canonical_config(const ArchSpec& a, const SubnetConfig& c);

// FNV-1a over the canonical serialization, rendered as 16 hex digits.
std::string config_hash(const ArchSpec& a, const SubnetConfig& c);

std::string config_to_string(const SubnetConfig& c);

// Exact |search space| = (sum_d (|K|*|W|)^d)^num_blocks as a decimal string;
// the default spec's count exceeds 2^64.
std::string population_size(const ArchSpec& a);

void to_json(nlohmann::json& j, const ArchSpec& a);
void from_json(const nlohmann::json& j, ArchSpec& a);
void to_json(nlohmann::json& j, const SubnetConfig& c);
void from_json(const nlohmann::json& j, SubnetConfig& c);

}  // namespace ofalab
