#pragma once

#include <cstdint>
#include <vector>

#include "ofalab/optim.hpp"
#include "ofalab/rng.hpp"
#include "ofalab/tensor.hpp"

// Reference CPU kernels on NCHW activations. These define the numeric
// contract (shapes, reduction order, eps) and back the oracle tests; the
// supernet hot path uses the channel-major variants in batchops.hpp, which
// are cross-checked against these.

namespace ofalab {

enum class Mode { kTrain, kEval };

// ---- convolution ----------------------------------------------------------

// input [N, Cin, H, W], kernel [Cout, Cin/groups, Kh, Kw] -> [N, Cout, Ho, Wo]
// Ho = (H + 2*padding - Kh) / stride + 1 (floor), no bias (BN follows).
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, int stride, int padding,
                      int groups);

struct ConvGrads {
  Tensor grad_input;
  Tensor grad_kernel;
};

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                          int stride, int padding, int groups);

// ---- batchnorm ------------------------------------------------------------

struct BNState {
  Param gamma;  // weight-decay exempt
  Param beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;

  BNState() = default;
  explicit BNState(int channels)
      : gamma({channels}, /*wd_exempt=*/true),
        beta({channels}, /*wd_exempt=*/true),
        running_mean(channels, 0.0f),
        running_var(channels, 1.0f) {
    gamma.value.fill(1.0f);
  }
  int channels() const { return gamma.value.shape.empty() ? 0 : gamma.value.shape[0]; }
};

struct BNCache {
  std::vector<float> mean;
  std::vector<float> inv_std;
};

// Train mode: normalize by batch statistics (biased variance) and update
// running stats, running <- (1 - momentum) * running + momentum * batch.
// Eval mode: normalize by running stats. Works on [N,C,H,W] or [N,C].
Tensor batchnorm_forward(const Tensor& input, BNState& bn, Mode mode, BNCache* cache = nullptr);

// Analytic backward through train-mode normalization; accumulates into
// bn.gamma.grad / bn.beta.grad and returns grad wrt input.
Tensor batchnorm_backward(const Tensor& input, const Tensor& grad_out, BNState& bn,
                          const BNCache& cache);

// ---- pointwise / pooling / head -------------------------------------------

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Tensor& input, const Tensor& grad_out);

// input [N, F], weight [O, F], bias [O] -> [N, O]
Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct DenseGrads {
  Tensor grad_input;
  Tensor grad_weight;
  Tensor grad_bias;
};

DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out);

// Inverted dropout: train mode zeroes with prob `rate` and scales kept
// activations by 1/(1-rate); eval mode is identity (mask left empty).
// Mask draws consume `rng` in element index order.
Tensor dropout_forward(const Tensor& input, float rate, Mode mode, Rng& rng,
                       std::vector<uint8_t>* mask);
Tensor dropout_backward(const Tensor& grad_out, float rate, const std::vector<uint8_t>& mask);

// logits [N, K], labels in [0, K). Mean loss over the batch; grad is
// (softmax - onehot) / N. Log-sum-exp stabilized.
struct CrossEntropyResult {
  double loss = 0.0;
  Tensor grad_logits;
  int correct = 0;  // argmax == label count, for accuracy bookkeeping
};

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace ofalab
