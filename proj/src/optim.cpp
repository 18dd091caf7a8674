#include "ofalab/optim.hpp"

#include <cmath>

#include "ofalab/errors.hpp"

namespace ofalab {

void sgd_step(std::vector<Param*>& params, float lr, float momentum, float weight_decay) {
  for (Param* p : params) {
    if (!p) throw ConfigError("sgd_step: null param");
    const size_t n = p->value.data.size();
    if (p->grad.data.size() != n || p->momentum_buf.data.size() != n)
      throw ConfigError("sgd_step: grad/momentum size mismatch for param");
    const float wd = p->weight_decay_exempt ? 0.0f : weight_decay;
    float* v = p->value.data.data();
    float* g = p->grad.data.data();
    float* buf = p->momentum_buf.data.data();
    for (size_t i = 0; i < n; ++i) {
      if (g[i] == 0.0f && buf[i] == 0.0f) continue;  // untouched by any subnet so far
      buf[i] = momentum * buf[i] + (g[i] + wd * v[i]);
      v[i] -= lr * buf[i];
    }
    p->zero_grad();
  }
}

double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs <= 0) throw ConfigError("cosine_lr: total_epochs must be positive");
  if (epoch < 0 || epoch >= total_epochs) throw ConfigError("cosine_lr: epoch out of range");
  const double pi = 3.14159265358979323846;
  return 0.5 * base_lr * (1.0 + std::cos(pi * static_cast<double>(epoch) / total_epochs));
}

}  // namespace ofalab
