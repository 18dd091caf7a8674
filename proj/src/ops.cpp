#include "ofalab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ofalab/errors.hpp"
#include "ofalab/gemm.hpp"

namespace ofalab {

namespace {

struct ConvDims {
  int n, cin, h, w;
  int cout, cpg, kh, kw;
  int ho, wo;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int padding,
                   int groups) {
  if (input.shape.size() != 4 || kernel.shape.size() != 4)
    throw ConfigError("conv2d: input and kernel must be rank 4, got input " + input.shape_str() +
                      " kernel " + kernel.shape_str());
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  if (groups < 1) throw ConfigError("conv2d: groups must be >= 1");
  ConvDims d;
  d.n = input.shape[0];
  d.cin = input.shape[1];
  d.h = input.shape[2];
  d.w = input.shape[3];
  d.cout = kernel.shape[0];
  d.cpg = kernel.shape[1];
  d.kh = kernel.shape[2];
  d.kw = kernel.shape[3];
  if (d.cin % groups != 0 || d.cout % groups != 0)
    throw ConfigError("conv2d: channels not divisible by groups");
  if (d.cpg != d.cin / groups)
    throw ConfigError("conv2d: kernel dim 1 is " + std::to_string(d.cpg) + ", expected Cin/groups = " +
                      std::to_string(d.cin / groups));
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw)
    throw ConfigError("conv2d: kernel larger than padded input");
  return d;
}

// col is [cpg*kh*kw, ho*wo] for one image's group slice.
void im2col(const float* x, int h, int w, int cpg, int kh, int kw, int stride, int padding, int ho,
            int wo, float* col) {
  for (int c = 0; c < cpg; ++c) {
    const float* xc = x + static_cast<size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - padding + ki;
          if (ih < 0 || ih >= h) {
            std::memset(row + static_cast<size_t>(oh) * wo, 0, sizeof(float) * wo);
            continue;
          }
          const float* src = xc + static_cast<size_t>(ih) * w;
          float* dst = row + static_cast<size_t>(oh) * wo;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - padding + kj;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int h, int w, int cpg, int kh, int kw, int stride, int padding,
                int ho, int wo, float* x) {
  for (int c = 0; c < cpg; ++c) {
    float* xc = x + static_cast<size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - padding + ki;
          if (ih < 0 || ih >= h) continue;
          float* dst = xc + static_cast<size_t>(ih) * w;
          const float* src = row + static_cast<size_t>(oh) * wo;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - padding + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, int stride, int padding,
                      int groups) {
  const ConvDims d = conv_dims(input, kernel, stride, padding, groups);
  Tensor out({d.n, d.cout, d.ho, d.wo});
  const size_t in_img = static_cast<size_t>(d.cin) * d.h * d.w;
  const size_t out_img = static_cast<size_t>(d.cout) * d.ho * d.wo;
  const int owo = d.ho * d.wo;

  if (d.kh == 1 && d.kw == 1 && stride == 1 && padding == 0 && groups == 1) {
    // pointwise: one GEMM per image, kernel [Cout,Cin] x plane [Cin,HW]
    for (int n = 0; n < d.n; ++n)
      gemm_nn(out.data.data() + n * out_img, kernel.data.data(), input.data.data() + n * in_img,
              d.cout, owo, d.cin);
    return out;
  }

  if (groups == d.cin && d.cout == d.cin && d.cpg == 1) {
    // depthwise: direct loops, one k x k filter per channel
    for (int n = 0; n < d.n; ++n) {
      for (int c = 0; c < d.cin; ++c) {
        const float* x = input.data.data() + n * in_img + static_cast<size_t>(c) * d.h * d.w;
        const float* k = kernel.data.data() + static_cast<size_t>(c) * d.kh * d.kw;
        float* y = out.data.data() + n * out_img + static_cast<size_t>(c) * owo;
        for (int oh = 0; oh < d.ho; ++oh) {
          for (int ow = 0; ow < d.wo; ++ow) {
            float acc = 0.0f;
            for (int ki = 0; ki < d.kh; ++ki) {
              const int ih = oh * stride - padding + ki;
              if (ih < 0 || ih >= d.h) continue;
              for (int kj = 0; kj < d.kw; ++kj) {
                const int iw = ow * stride - padding + kj;
                if (iw < 0 || iw >= d.w) continue;
                acc += x[ih * d.w + iw] * k[ki * d.kw + kj];
              }
            }
            y[oh * d.wo + ow] = acc;
          }
        }
      }
    }
    return out;
  }

  // general: im2col + GEMM per image and group
  const int coutg = d.cout / groups;
  const int rows = d.cpg * d.kh * d.kw;
  std::vector<float> col(static_cast<size_t>(rows) * owo);
  for (int n = 0; n < d.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const float* x =
          input.data.data() + n * in_img + static_cast<size_t>(g) * d.cpg * d.h * d.w;
      im2col(x, d.h, d.w, d.cpg, d.kh, d.kw, stride, padding, d.ho, d.wo, col.data());
      gemm_nn(out.data.data() + n * out_img + static_cast<size_t>(g) * coutg * owo,
              kernel.data.data() + static_cast<size_t>(g) * coutg * rows, col.data(), coutg, owo,
              rows);
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                          int stride, int padding, int groups) {
  const ConvDims d = conv_dims(input, kernel, stride, padding, groups);
  require_shape(grad_out, {d.n, d.cout, d.ho, d.wo}, "conv2d_backward grad_out");
  ConvGrads g;
  g.grad_input = Tensor(input.shape);
  g.grad_kernel = Tensor(kernel.shape);
  const size_t in_img = static_cast<size_t>(d.cin) * d.h * d.w;
  const size_t out_img = static_cast<size_t>(d.cout) * d.ho * d.wo;
  const int owo = d.ho * d.wo;

  if (d.kh == 1 && d.kw == 1 && stride == 1 && padding == 0 && groups == 1) {
    for (int n = 0; n < d.n; ++n) {
      const float* x = input.data.data() + n * in_img;
      const float* go = grad_out.data.data() + n * out_img;
      // dK += GO [Cout,HW] * X^T [HW,Cin]; dX = K^T [Cin,Cout] * GO
      gemm_nt(g.grad_kernel.data.data(), go, x, d.cout, d.cin, owo, /*accumulate=*/true);
      gemm_tn(g.grad_input.data.data() + n * in_img, kernel.data.data(), go, d.cin, owo, d.cout);
    }
    return g;
  }

  if (groups == d.cin && d.cout == d.cin && d.cpg == 1) {
    for (int n = 0; n < d.n; ++n) {
      for (int c = 0; c < d.cin; ++c) {
        const float* x = input.data.data() + n * in_img + static_cast<size_t>(c) * d.h * d.w;
        const float* k = kernel.data.data() + static_cast<size_t>(c) * d.kh * d.kw;
        const float* go = grad_out.data.data() + n * out_img + static_cast<size_t>(c) * owo;
        float* gx = g.grad_input.data.data() + n * in_img + static_cast<size_t>(c) * d.h * d.w;
        float* gk = g.grad_kernel.data.data() + static_cast<size_t>(c) * d.kh * d.kw;
        for (int oh = 0; oh < d.ho; ++oh) {
          for (int ow = 0; ow < d.wo; ++ow) {
            const float go_v = go[oh * d.wo + ow];
            if (go_v == 0.0f) continue;
            for (int ki = 0; ki < d.kh; ++ki) {
              const int ih = oh * stride - padding + ki;
              if (ih < 0 || ih >= d.h) continue;
              for (int kj = 0; kj < d.kw; ++kj) {
                const int iw = ow * stride - padding + kj;
                if (iw < 0 || iw >= d.w) continue;
                gk[ki * d.kw + kj] += x[ih * d.w + iw] * go_v;
                gx[ih * d.w + iw] += k[ki * d.kw + kj] * go_v;
              }
            }
          }
        }
      }
    }
    return g;
  }

  const int coutg = d.cout / groups;
  const int rows = d.cpg * d.kh * d.kw;
  std::vector<float> col(static_cast<size_t>(rows) * owo);
  std::vector<float> colgrad(static_cast<size_t>(rows) * owo);
  for (int n = 0; n < d.n; ++n) {
    for (int gi = 0; gi < groups; ++gi) {
      const float* x =
          input.data.data() + n * in_img + static_cast<size_t>(gi) * d.cpg * d.h * d.w;
      const float* go = grad_out.data.data() + n * out_img + static_cast<size_t>(gi) * coutg * owo;
      im2col(x, d.h, d.w, d.cpg, d.kh, d.kw, stride, padding, d.ho, d.wo, col.data());
      gemm_nt(g.grad_kernel.data.data() + static_cast<size_t>(gi) * coutg * rows, go, col.data(),
              coutg, rows, owo, /*accumulate=*/true);
      gemm_tn(colgrad.data(), kernel.data.data() + static_cast<size_t>(gi) * coutg * rows, go,
              rows, owo, coutg);
      col2im_add(colgrad.data(), d.h, d.w, d.cpg, d.kh, d.kw, stride, padding, d.ho, d.wo,
                 g.grad_input.data.data() + n * in_img + static_cast<size_t>(gi) * d.cpg * d.h * d.w);
    }
  }
  return g;
}

// ---- batchnorm ------------------------------------------------------------

namespace {

// Accepts [N,C,H,W] or [N,C]; fills n/c/spatial.
void bn_dims(const Tensor& t, int channels, int& n, int& c, int& spatial) {
  if (t.shape.size() == 4) {
    n = t.shape[0];
    c = t.shape[1];
    spatial = t.shape[2] * t.shape[3];
  } else if (t.shape.size() == 2) {
    n = t.shape[0];
    c = t.shape[1];
    spatial = 1;
  } else {
    throw ConfigError("batchnorm: input must be rank 2 or 4, got " + t.shape_str());
  }
  if (c != channels)
    throw ConfigError("batchnorm: input has " + std::to_string(c) + " channels, state has " +
                      std::to_string(channels));
}

}  // namespace

Tensor batchnorm_forward(const Tensor& input, BNState& bn, Mode mode, BNCache* cache) {
  int n, c, spatial;
  bn_dims(input, bn.channels(), n, c, spatial);
  const size_t img = static_cast<size_t>(c) * spatial;
  const double count = static_cast<double>(n) * spatial;

  std::vector<float> mean(c), inv_std(c);
  if (mode == Mode::kTrain) {
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0, s2 = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const float* x = input.data.data() + ni * img + static_cast<size_t>(ci) * spatial;
        for (int si = 0; si < spatial; ++si) {
          const double v = x[si];
          s += v;
          s2 += v * v;
        }
      }
      const double m = s / count;
      double var = s2 / count - m * m;  // biased
      if (var < 0.0) var = 0.0;
      mean[ci] = static_cast<float>(m);
      inv_std[ci] = static_cast<float>(1.0 / std::sqrt(var + bn.eps));
      bn.running_mean[ci] = (1.0f - bn.momentum) * bn.running_mean[ci] +
                            bn.momentum * static_cast<float>(m);
      bn.running_var[ci] = (1.0f - bn.momentum) * bn.running_var[ci] +
                           bn.momentum * static_cast<float>(var);
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = bn.running_mean[ci];
      inv_std[ci] = 1.0f / std::sqrt(bn.running_var[ci] + bn.eps);
    }
  }
  if (cache) {
    cache->mean = mean;
    cache->inv_std = inv_std;
  }

  Tensor out(input.shape);
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float* x = input.data.data() + ni * img + static_cast<size_t>(ci) * spatial;
      float* y = out.data.data() + ni * img + static_cast<size_t>(ci) * spatial;
      const float g = bn.gamma.value.data[ci], b = bn.beta.value.data[ci];
      const float m = mean[ci], is = inv_std[ci];
      for (int si = 0; si < spatial; ++si) y[si] = g * (x[si] - m) * is + b;
    }
  }
  return out;
}

Tensor batchnorm_backward(const Tensor& input, const Tensor& grad_out, BNState& bn,
                          const BNCache& cache) {
  int n, c, spatial;
  bn_dims(input, bn.channels(), n, c, spatial);
  require_shape(grad_out, input.shape, "batchnorm_backward grad_out");
  if (static_cast<int>(cache.mean.size()) != c || static_cast<int>(cache.inv_std.size()) != c)
    throw ConfigError("batchnorm_backward: cache missing batch statistics");
  const size_t img = static_cast<size_t>(c) * spatial;
  const double count = static_cast<double>(n) * spatial;

  Tensor grad_in(input.shape);
  for (int ci = 0; ci < c; ++ci) {
    const float m = cache.mean[ci], is = cache.inv_std[ci];
    const float g = bn.gamma.value.data[ci];
    double sum_go = 0.0, sum_go_xhat = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const float* x = input.data.data() + ni * img + static_cast<size_t>(ci) * spatial;
      const float* go = grad_out.data.data() + ni * img + static_cast<size_t>(ci) * spatial;
      for (int si = 0; si < spatial; ++si) {
        sum_go += go[si];
        sum_go_xhat += go[si] * static_cast<double>((x[si] - m) * is);
      }
    }
    bn.beta.grad.data[ci] += static_cast<float>(sum_go);
    bn.gamma.grad.data[ci] += static_cast<float>(sum_go_xhat);
    const float mean_go = static_cast<float>(sum_go / count);
    const float mean_go_xhat = static_cast<float>(sum_go_xhat / count);
    for (int ni = 0; ni < n; ++ni) {
      const float* x = input.data.data() + ni * img + static_cast<size_t>(ci) * spatial;
      const float* go = grad_out.data.data() + ni * img + static_cast<size_t>(ci) * spatial;
      float* gx = grad_in.data.data() + ni * img + static_cast<size_t>(ci) * spatial;
      for (int si = 0; si < spatial; ++si) {
        const float xhat = (x[si] - m) * is;
        gx[si] = g * is * (go[si] - mean_go - xhat * mean_go_xhat);
      }
    }
  }
  return grad_in;
}

// ---- pointwise / pooling / head -------------------------------------------

Tensor relu(const Tensor& input) {
  Tensor out(input.shape);
  for (size_t i = 0; i < input.data.size(); ++i) out.data[i] = std::max(0.0f, input.data[i]);
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_shape(grad_out, input.shape, "relu_backward grad_out");
  Tensor gx(input.shape);
  for (size_t i = 0; i < input.data.size(); ++i)
    gx.data[i] = input.data[i] > 0.0f ? grad_out.data[i] : 0.0f;
  return gx;
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.shape.size() != 4)
    throw ConfigError("global_avg_pool: expected rank 4, got " + input.shape_str());
  const int n = input.shape[0], c = input.shape[1];
  const int spatial = input.shape[2] * input.shape[3];
  Tensor out({n, c});
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float* x = input.data.data() + (static_cast<size_t>(ni) * c + ci) * spatial;
      double s = 0.0;
      for (int si = 0; si < spatial; ++si) s += x[si];
      out.data[static_cast<size_t>(ni) * c + ci] = static_cast<float>(s / spatial);
    }
  }
  return out;
}

Tensor global_avg_pool_backward(const Tensor& input, const Tensor& grad_out) {
  const int n = input.shape[0], c = input.shape[1];
  const int spatial = input.shape[2] * input.shape[3];
  require_shape(grad_out, {n, c}, "global_avg_pool_backward grad_out");
  Tensor gx(input.shape);
  const float inv = 1.0f / spatial;
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float v = grad_out.data[static_cast<size_t>(ni) * c + ci] * inv;
      float* dst = gx.data.data() + (static_cast<size_t>(ni) * c + ci) * spatial;
      for (int si = 0; si < spatial; ++si) dst[si] = v;
    }
  }
  return gx;
}

Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.shape.size() != 2 || weight.shape.size() != 2 || bias.shape.size() != 1)
    throw ConfigError("dense: input [N,F], weight [O,F], bias [O] required");
  const int n = input.shape[0], f = input.shape[1], o = weight.shape[0];
  if (weight.shape[1] != f || bias.shape[0] != o)
    throw ConfigError("dense: shape mismatch, input " + input.shape_str() + " weight " +
                      weight.shape_str());
  Tensor out({n, o});
  gemm_nt(out.data.data(), input.data.data(), weight.data.data(), n, o, f);
  for (int ni = 0; ni < n; ++ni)
    for (int oi = 0; oi < o; ++oi) out.data[static_cast<size_t>(ni) * o + oi] += bias.data[oi];
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out) {
  const int n = input.shape[0], f = input.shape[1], o = weight.shape[0];
  require_shape(grad_out, {n, o}, "dense_backward grad_out");
  DenseGrads g;
  g.grad_input = Tensor({n, f});
  g.grad_weight = Tensor({o, f});
  g.grad_bias = Tensor({o});
  gemm_nn(g.grad_input.data.data(), grad_out.data.data(), weight.data.data(), n, f, o);
  gemm_tn(g.grad_weight.data.data(), grad_out.data.data(), input.data.data(), o, f, n);
  for (int oi = 0; oi < o; ++oi) {
    double s = 0.0;
    for (int ni = 0; ni < n; ++ni) s += grad_out.data[static_cast<size_t>(ni) * o + oi];
    g.grad_bias.data[oi] = static_cast<float>(s);
  }
  return g;
}

Tensor dropout_forward(const Tensor& input, float rate, Mode mode, Rng& rng,
                       std::vector<uint8_t>* mask) {
  if (rate < 0.0f || rate >= 1.0f) throw ConfigError("dropout: rate must be in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0f) {
    if (mask) mask->clear();
    return input;
  }
  Tensor out(input.shape);
  if (mask) mask->assign(input.data.size(), 0);
  const float scale = 1.0f / (1.0f - rate);
  for (size_t i = 0; i < input.data.size(); ++i) {
    const bool keep = rng.uniform01() >= rate;
    out.data[i] = keep ? input.data[i] * scale : 0.0f;
    if (mask) (*mask)[i] = keep ? 1 : 0;
  }
  return out;
}

Tensor dropout_backward(const Tensor& grad_out, float rate, const std::vector<uint8_t>& mask) {
  if (mask.empty()) return grad_out;  // eval-mode forward was identity
  if (mask.size() != grad_out.data.size())
    throw ConfigError("dropout_backward: mask size mismatch");
  Tensor gx(grad_out.shape);
  const float scale = 1.0f / (1.0f - rate);
  for (size_t i = 0; i < grad_out.data.size(); ++i)
    gx.data[i] = mask[i] ? grad_out.data[i] * scale : 0.0f;
  return gx;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape.size() != 2)
    throw ConfigError("softmax_cross_entropy: logits must be [N,K], got " + logits.shape_str());
  const int n = logits.shape[0], k = logits.shape[1];
  if (static_cast<int>(labels.size()) != n)
    throw ConfigError("softmax_cross_entropy: got " + std::to_string(labels.size()) +
                      " labels for batch of " + std::to_string(n));
  CrossEntropyResult r;
  r.grad_logits = Tensor({n, k});
  double total = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    const int y = labels[ni];
    if (y < 0 || y >= k) throw ConfigError("softmax_cross_entropy: label out of range");
    const float* row = logits.data.data() + static_cast<size_t>(ni) * k;
    float* grow = r.grad_logits.data.data() + static_cast<size_t>(ni) * k;
    float mx = row[0];
    int arg = 0;
    for (int ki = 1; ki < k; ++ki)
      if (row[ki] > mx) { mx = row[ki]; arg = ki; }
    if (arg == y) ++r.correct;
    double se = 0.0;
    for (int ki = 0; ki < k; ++ki) se += std::exp(static_cast<double>(row[ki]) - mx);
    const double lse = mx + std::log(se);
    total += lse - row[y];
    for (int ki = 0; ki < k; ++ki) {
      const double p = std::exp(static_cast<double>(row[ki]) - lse);
      grow[ki] = static_cast<float>((p - (ki == y ? 1.0 : 0.0)) / n);
    }
  }
  r.loss = total / n;
  if (!std::isfinite(r.loss)) throw NumericError("softmax_cross_entropy: non-finite loss");
  return r;
}

}  // namespace ofalab
