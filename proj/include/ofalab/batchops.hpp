#pragma once

#include <cstdint>
#include <vector>

#include "ofalab/ops.hpp"
#include "ofalab/tensor.hpp"

// Channel-major kernels for the supernet hot path. Activations are stored
// [C, N, H, W], so each channel is one contiguous row of a [C, N*H*W]
// matrix: pointwise convs become a single GEMM over the whole batch, weight
// gradients reduce over the batch in one fixed serial order, and elastic
// width slicing is just "use the first c rows". Numerics match the NCHW
// reference ops in ops.hpp (see the equivalence tests).

namespace ofalab {

enum class RunMode { kTrain, kEval, kCalibrate };

Tensor nchw_to_cnhw(const Tensor& x);
Tensor cnhw_to_nchw(const Tensor& x);

// Full conv via batchwide im2col + one GEMM; used for the stem (small Cin).
// x [Cin,N,H,W], weight [S,Cin,Kh,Kw] -> [S,N,Ho,Wo]. No grad_input path:
// the stem is the first layer.
Tensor cm_stem_forward(const Tensor& x, const Tensor& weight, int stride, int padding);
Tensor cm_stem_grad_weight(const Tensor& x, const Tensor& weight, const Tensor& grad_out,
                           int stride, int padding);

// Pointwise conv using the top-left [cout, cin] subblock of a
// [Cmax_out, Cmax_in, 1, 1] param. x [cin,N,H,W] -> [cout,N,H,W].
Tensor cm_pw_forward(const Tensor& x, const Tensor& weight, int cout, int cin);
// Accumulates the weight grad into the same subblock of grad_weight and
// returns grad wrt x.
Tensor cm_pw_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, int cout,
                      int cin, Tensor& grad_weight);

// Depthwise k x k; weight [c,1,k,k] is the already-derived per-subnet kernel.
Tensor cm_dw_forward(const Tensor& x, const Tensor& weight, int stride, int padding);
void cm_dw_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, int stride,
                    int padding, Tensor& grad_x, Tensor& grad_weight);

struct CmBNCache {
  std::vector<float> mean;
  std::vector<float> var;  // biased batch variance (calibration aggregates it)
  std::vector<float> inv_std;
  int64_t count = 0;  // elements per channel that produced the stats
};

// BN over the first x.shape[0] channels of `bn`. Train: batch stats, running
// stats updated on the active slice. Eval: running stats. Calibrate: batch
// stats, running stats untouched (caller aggregates cache.mean/var/count).
// Optionally fuses a trailing ReLU.
Tensor cm_bn_forward(const Tensor& x, BNState& bn, RunMode mode, CmBNCache* cache,
                     bool fuse_relu);
// Backward through (optionally fused-ReLU) train-mode BN; y is the forward
// output (mask source when fused). Accumulates gamma/beta grads.
Tensor cm_bn_backward(const Tensor& x, const Tensor& y, const Tensor& grad_y, BNState& bn,
                      const CmBNCache& cache, bool fused_relu);

// y += x (same shape), the block residual.
void cm_add(Tensor& y, const Tensor& x);

// [C,N,H,W] -> [N,C] features for the head, and back.
Tensor cm_gap(const Tensor& x);
Tensor cm_gap_backward(const Tensor& x, const Tensor& grad_feat);

}  // namespace ofalab
