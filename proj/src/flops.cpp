#include "ofalab/flops.hpp"

#include <cmath>
#include <string>

#include "ofalab/errors.hpp"

namespace ofalab {

int64_t count_macs_exact(const ArchSpec& a, const SubnetConfig& c) {
  validate_config(a, c);
  int64_t macs = 0;
  // stem 3x3 s1 p1
  const int64_t r0 = a.input_hw;
  macs += static_cast<int64_t>(a.stem_channels) * a.input_channels * 9 * r0 * r0;
  int r = a.input_hw;
  for (int b = 0; b < a.num_blocks(); ++b) {
    const int out = a.block_out[b];
    for (int l = 0; l < c.depth[b]; ++l) {
      const int in = a.layer_in(b, l);
      const int stride = a.layer_stride(b, l);
      const int hid = c.width[b][l] * in;
      const int k = c.kernel[b][l];
      const int r_out = conv_out_hw(r, stride);
      macs += static_cast<int64_t>(in) * hid * r * r;             // expand 1x1 (input res)
      macs += static_cast<int64_t>(hid) * k * k * r_out * r_out;  // depthwise
      macs += static_cast<int64_t>(hid) * out * r_out * r_out;    // project 1x1
      r = r_out;
    }
  }
  macs += static_cast<int64_t>(a.block_out.back()) * a.num_classes;  // head dense
  return macs;
}

double count_mflops(const ArchSpec& a, const SubnetConfig& c) {
  return static_cast<double>(count_macs_exact(a, c)) / 1e6;
}

int64_t count_params(const ArchSpec& a, const SubnetConfig& c) {
  validate_config(a, c);
  int64_t p = static_cast<int64_t>(a.stem_channels) * a.input_channels * 9 + 2 * a.stem_channels;
  for (int b = 0; b < a.num_blocks(); ++b) {
    const int out = a.block_out[b];
    for (int l = 0; l < c.depth[b]; ++l) {
      const int in = a.layer_in(b, l);
      const int hid = c.width[b][l] * in;
      const int k = c.kernel[b][l];
      p += static_cast<int64_t>(hid) * in + 2 * hid;  // expand + bn1
      p += static_cast<int64_t>(hid) * k * k + 2 * hid;  // depthwise (derived size) + bn2
      p += static_cast<int64_t>(out) * hid + 2 * out;  // project + bn3
    }
  }
  p += static_cast<int64_t>(a.num_classes) * a.block_out.back() + a.num_classes;
  return p;
}

SubnetConfig sample_in_bin(const ArchSpec& a, double target_mflops, double tol, Rng& rng,
                           int max_tries) {
  if (tol <= 0.0) throw ConfigError("sample_in_bin: tolerance must be positive");
  if (max_tries <= 0) throw ConfigError("sample_in_bin: max_tries must be positive");
  int width_lock = 0;
  if (target_mflops <= 4.0 + 1e-9) width_lock = a.width_choices.front();
  if (target_mflops >= 14.0 - 1e-9) width_lock = a.width_choices.back();
  for (int t = 0; t < max_tries; ++t) {
    SubnetConfig c = uniform_config(a, rng, width_lock);
    if (std::abs(count_mflops(a, c) - target_mflops) <= tol) return c;
  }
  throw SamplingError("sample_in_bin: no subnet within " + std::to_string(target_mflops) +
                      " +/- " + std::to_string(tol) + " MFLOPs after " +
                      std::to_string(max_tries) + " tries");
}

}  // namespace ofalab
