#pragma once

#include <cstdint>

#include "ofalab/arch.hpp"
#include "ofalab/rng.hpp"

namespace ofalab {

// Counting convention: 1 FLOP = 1 multiply-accumulate (the convention of the
// OFA line of work — beware, some papers count 2x). Convs and the final dense
// layer count; BN, activations and pooling do not.

// Exact MAC count of one subnet's forward pass on a single image.
int64_t count_macs_exact(const ArchSpec& a, const SubnetConfig& c);

// Same, reported as MFLOPs = MACs / 1e6.
double count_mflops(const ArchSpec& a, const SubnetConfig& c);

// Deployed-subnet parameter count (conv/dense weights + BN affine of active
// slices; derived depthwise kernels count at their derived size).
int64_t count_params(const ArchSpec& a, const SubnetConfig& c);

// Rejection-sample uniform configs until |MFLOPs - target| <= tol. For the
// extreme bins the width entries are locked (target <= 4 -> min width,
// target >= 14 -> max width) per the sampling protocol. Throws SamplingError
// after max_tries rejections.
SubnetConfig sample_in_bin(const ArchSpec& a, double target_mflops, double tol, Rng& rng,
                           int max_tries = 10000);

// spatial size after one depthwise stride (odd k, pad k/2 keeps size at s=1)
inline int conv_out_hw(int hw, int stride) { return (hw - 1) / stride + 1; }

}  // namespace ofalab
