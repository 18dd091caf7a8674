#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ofalab/tensor.hpp"

namespace ofalab {

// A trainable tensor with its gradient and SGD momentum state.
struct Param {
  Tensor value;
  Tensor grad;
  Tensor momentum_buf;
  bool weight_decay_exempt = false;  // BN affine and biases

  Param() = default;
  explicit Param(std::vector<int> shape, bool wd_exempt = false)
      : value(shape), grad(shape), momentum_buf(std::move(shape)), weight_decay_exempt(wd_exempt) {}

  void zero_grad() { grad.zero(); }
};

// Momentum SGD over a set of params:
//   buf <- momentum * buf + (grad + wd * value)   (wd omitted for exempt params)
//   value <- value - lr * buf
// Elements with grad == 0 and buf == 0 are left untouched, so parameter
// regions a subnet never activated stay frozen (no decay drift). Grads are
// zeroed after the step.
void sgd_step(std::vector<Param*>& params, float lr, float momentum = 0.9f,
              float weight_decay = 3e-5f);

// Cosine schedule evaluated at epoch granularity:
//   lr = 0.5 * base_lr * (1 + cos(pi * epoch / total_epochs))
double cosine_lr(int epoch, int total_epochs, double base_lr = 0.01);

}  // namespace ofalab
