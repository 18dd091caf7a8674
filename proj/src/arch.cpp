#include "ofalab/arch.hpp"

#include <algorithm>
#include <cstdio>

#include "ofalab/errors.hpp"

namespace ofalab {

void ArchSpec::validate() const {
  if (input_channels <= 0 || input_hw <= 0 || num_classes <= 0 || stem_channels <= 0)
    throw ConfigError("ArchSpec: input/stem/class counts must be positive");
  if (block_out.empty() || block_out.size() != block_stride.size())
    throw ConfigError("ArchSpec: block_out and block_stride must be non-empty and equal length");
  for (int c : block_out)
    if (c <= 0) throw ConfigError("ArchSpec: block channel counts must be positive");
  for (int s : block_stride)
    if (s < 1) throw ConfigError("ArchSpec: strides must be >= 1");
  if (max_depth <= 0) throw ConfigError("ArchSpec: max_depth must be positive");
  auto check_choices = [&](const std::vector<int>& v, const char* what, int hi) {
    if (v.empty()) throw ConfigError(std::string("ArchSpec: empty ") + what + " choices");
    if (!std::is_sorted(v.begin(), v.end()))
      throw ConfigError(std::string("ArchSpec: ") + what + " choices must be ascending");
    for (int x : v)
      if (x <= 0 || x > hi)
        throw ConfigError(std::string("ArchSpec: ") + what + " choice out of range");
  };
  check_choices(depth_choices, "depth", max_depth);
  check_choices(kernel_choices, "kernel", 7);
  check_choices(width_choices, "width", 64);
  for (int k : kernel_choices)
    if (k % 2 == 0) throw ConfigError("ArchSpec: kernel choices must be odd");
  if (dropout < 0.0f || dropout >= 1.0f) throw ConfigError("ArchSpec: dropout must be in [0,1)");
  // spatial sanity: every block output must stay >= 1 pixel
  int r = input_hw;
  for (size_t b = 0; b < block_out.size(); ++b) {
    r = (r - 1) / block_stride[b] + 1;
    if (r < 1) throw ConfigError("ArchSpec: stride plan collapses the feature map");
  }
}

ArchSpec arch_preset(const std::string& id) {
  ArchSpec a;  // default-constructed == cifar-small-v1
  if (id == "cifar-small-v1") {
    a.id = id;
    return a;
  }
  if (id == "mnist-small-v1") {
    a.id = id;
    a.input_channels = 1;
    a.input_hw = 28;
    a.stem_channels = 32;
    a.block_out = {16, 16, 16, 24, 32};
    a.block_stride = {2, 2, 2, 2, 1};
    return a;
  }
  throw ConfigError("unknown arch preset '" + id + "' (known: cifar-small-v1, mnist-small-v1)");
}

std::vector<std::string> arch_preset_ids() { return {"cifar-small-v1", "mnist-small-v1"}; }

SubnetConfig uniform_filled_config(const ArchSpec& a, int kernel, int width, int depth) {
  SubnetConfig c;
  const int nb = a.num_blocks();
  c.depth.assign(nb, depth);
  c.kernel.assign(nb, std::vector<int>(a.max_depth, kernel));
  c.width.assign(nb, std::vector<int>(a.max_depth, width));
  return c;
}

SubnetConfig all_max_config(const ArchSpec& a) {
  return uniform_filled_config(a, a.kernel_choices.back(), a.width_choices.back(),
                               a.depth_choices.back());
}

SubnetConfig all_min_config(const ArchSpec& a) {
  return uniform_filled_config(a, a.kernel_choices.front(), a.width_choices.front(),
                               a.depth_choices.front());
}

SubnetConfig middle_config(const ArchSpec& a) {
  auto mid = [](const std::vector<int>& v) { return v[v.size() / 2]; };
  return uniform_filled_config(a, mid(a.kernel_choices), mid(a.width_choices),
                               mid(a.depth_choices));
}

SubnetConfig uniform_config(const ArchSpec& a, Rng& rng, int width_lock) {
  const int nb = a.num_blocks();
  SubnetConfig c;
  c.depth.assign(nb, 0);
  c.kernel.assign(nb, std::vector<int>(a.max_depth, 0));
  c.width.assign(nb, std::vector<int>(a.max_depth, 0));
  auto pick = [&rng](const std::vector<int>& v) {
    return v[rng.uniform_int(0, static_cast<int>(v.size()) - 1)];
  };
  for (int b = 0; b < nb; ++b)
    for (int l = 0; l < a.max_depth; ++l) c.kernel[b][l] = pick(a.kernel_choices);
  for (int b = 0; b < nb; ++b)
    for (int l = 0; l < a.max_depth; ++l)
      c.width[b][l] = width_lock > 0 ? width_lock : pick(a.width_choices);
  for (int b = 0; b < nb; ++b) c.depth[b] = pick(a.depth_choices);
  return c;
}

void validate_config(const ArchSpec& a, const SubnetConfig& c) {
  const int nb = a.num_blocks();
  if (static_cast<int>(c.depth.size()) != nb || static_cast<int>(c.kernel.size()) != nb ||
      static_cast<int>(c.width.size()) != nb)
    throw ConfigError("SubnetConfig: expected " + std::to_string(nb) + " blocks");
  auto in_set = [](int x, const std::vector<int>& v) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  for (int b = 0; b < nb; ++b) {
    if (!in_set(c.depth[b], a.depth_choices))
      throw ConfigError("SubnetConfig: depth " + std::to_string(c.depth[b]) +
                        " not a valid choice for block " + std::to_string(b));
    if (static_cast<int>(c.kernel[b].size()) != a.max_depth ||
        static_cast<int>(c.width[b].size()) != a.max_depth)
      throw ConfigError("SubnetConfig: kernel/width rows must have max_depth entries");
    for (int l = 0; l < c.depth[b]; ++l) {
      if (!in_set(c.kernel[b][l], a.kernel_choices))
        throw ConfigError("SubnetConfig: kernel " + std::to_string(c.kernel[b][l]) +
                          " not a valid choice at block " + std::to_string(b) + " layer " +
                          std::to_string(l));
      if (!in_set(c.width[b][l], a.width_choices))
        throw ConfigError("SubnetConfig: width " + std::to_string(c.width[b][l]) +
                          " not a valid choice at block " + std::to_string(b) + " layer " +
                          std::to_string(l));
    }
  }
}

SubnetConfig canonical_config(const ArchSpec& a, const SubnetConfig& c) {
  SubnetConfig out = c;
  for (int b = 0; b < a.num_blocks(); ++b)
    for (int l = c.depth[b]; l < a.max_depth; ++l) {
      out.kernel[b][l] = 0;
      out.width[b][l] = 0;
    }
  return out;
}

std::string config_to_string(const SubnetConfig& c) {
  std::string s = "d[";
  for (size_t b = 0; b < c.depth.size(); ++b)
    s += (b ? "," : "") + std::to_string(c.depth[b]);
  s += "] k[";
  for (size_t b = 0; b < c.kernel.size(); ++b) {
    if (b) s += ";";
    for (size_t l = 0; l < c.kernel[b].size(); ++l)
      s += (l ? "," : "") + std::to_string(c.kernel[b][l]);
  }
  s += "] w[";
  for (size_t b = 0; b < c.width.size(); ++b) {
    if (b) s += ";";
    for (size_t l = 0; l < c.width[b].size(); ++l)
      s += (l ? "," : "") + std::to_string(c.width[b][l]);
  }
  s += "]";
  return s;
}

std::string config_hash(const ArchSpec& a, const SubnetConfig& c) {
  const std::string s = config_to_string(canonical_config(a, c));
  const uint64_t h = hash_name(s.c_str());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

// Minimal unsigned bignum (base 1e9 limbs): the population count of the
// default space is ~2.18e19 and does not fit in 64 bits.
struct BigUint {
  std::vector<uint32_t> limbs{0};  // little-endian, base 1e9

  static BigUint one() { return BigUint{{1}}; }
  void mul_small(uint64_t m) {
    uint64_t carry = 0;
    for (auto& limb : limbs) {
      const uint64_t v = static_cast<uint64_t>(limb) * m + carry;
      limb = static_cast<uint32_t>(v % 1000000000ull);
      carry = v / 1000000000ull;
    }
    while (carry) {
      limbs.push_back(static_cast<uint32_t>(carry % 1000000000ull));
      carry /= 1000000000ull;
    }
  }
  std::string to_string() const {
    std::string s = std::to_string(limbs.back());
    for (size_t i = limbs.size() - 1; i-- > 0;) {
      char buf[10];
      std::snprintf(buf, sizeof(buf), "%09u", limbs[i]);
      s += buf;
    }
    return s;
  }
};

}  // namespace

std::string population_size(const ArchSpec& a) {
  const uint64_t per_layer =
      static_cast<uint64_t>(a.kernel_choices.size()) * a.width_choices.size();
  uint64_t per_block = 0;
  for (int d : a.depth_choices) {
    uint64_t p = 1;
    for (int i = 0; i < d; ++i) p *= per_layer;  // fits: 9^4 at the default spec
    per_block += p;
  }
  BigUint total = BigUint::one();
  for (int b = 0; b < a.num_blocks(); ++b) total.mul_small(per_block);
  return total.to_string();
}

void to_json(nlohmann::json& j, const ArchSpec& a) {
  j = nlohmann::json{{"id", a.id},
                     {"input_channels", a.input_channels},
                     {"input_hw", a.input_hw},
                     {"num_classes", a.num_classes},
                     {"stem_channels", a.stem_channels},
                     {"block_out", a.block_out},
                     {"block_stride", a.block_stride},
                     {"max_depth", a.max_depth},
                     {"depth_choices", a.depth_choices},
                     {"kernel_choices", a.kernel_choices},
                     {"width_choices", a.width_choices},
                     {"dropout", a.dropout}};
}

void from_json(const nlohmann::json& j, ArchSpec& a) {
  if (j.contains("id")) {
    a = arch_preset(j.at("id").get<std::string>());  // preset gives the baseline
  }
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) j.at(k).get_to(field);
  };
  get("input_channels", a.input_channels);
  get("input_hw", a.input_hw);
  get("num_classes", a.num_classes);
  get("stem_channels", a.stem_channels);
  get("block_out", a.block_out);
  get("block_stride", a.block_stride);
  get("max_depth", a.max_depth);
  get("depth_choices", a.depth_choices);
  get("kernel_choices", a.kernel_choices);
  get("width_choices", a.width_choices);
  get("dropout", a.dropout);
  a.validate();
}

void to_json(nlohmann::json& j, const SubnetConfig& c) {
  j = nlohmann::json{{"depth", c.depth}, {"kernel", c.kernel}, {"width", c.width}};
}

void from_json(const nlohmann::json& j, SubnetConfig& c) {
  j.at("depth").get_to(c.depth);
  j.at("kernel").get_to(c.kernel);
  j.at("width").get_to(c.width);
}

}  // namespace ofalab
