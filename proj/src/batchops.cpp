#include "ofalab/batchops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "ofalab/errors.hpp"
#include "ofalab/gemm.hpp"

namespace ofalab {

namespace {

void check_cnhw(const Tensor& x, const char* who) {
  if (x.shape.size() != 4) throw ConfigError(std::string(who) + ": expected [C,N,H,W] tensor");
}

thread_local std::vector<float> g_col;    // batchwide im2col scratch
thread_local std::vector<float> g_wpack;  // sliced-weight pack scratch

// Zero-once scratch plane: fully zeroed only when the shape key changes.
// Per-plane fills overwrite exactly the interior cells for that shape, so the
// ring/slack zeros persist across the thousands of planes of one call.
struct ZeroScratch {
  std::vector<float> buf;
  std::array<int, 6> key{-1, -1, -1, -1, -1, -1};
  float* ensure(std::array<int, 6> k, size_t n) {
    if (key != k || buf.size() != n) {
      buf.assign(n, 0.0f);
      key = k;
    }
    return buf.data();
  }
};

thread_local ZeroScratch g_xpad;    // zero-padded depthwise input plane
thread_local ZeroScratch g_gpad;    // zero-padded grad-out plane (stride 1)
thread_local ZeroScratch g_gdil;    // zero-dilated grad-out plane (stride 2)
thread_local ZeroScratch g_even;    // stride-2 phase-split rows (even cols)
thread_local ZeroScratch g_odd;     // stride-2 phase-split rows (odd cols)
thread_local ZeroScratch g_gosafe;  // grad-out rows with zeroed tile slack

// The depthwise kernels below keep 16-float output tiles in vector registers
// across all kernel taps (four output rows at a time, so the FMA chains stay
// independent). Rows they read carry >= kTile floats of zero slack, letting
// each tap load a whole tile unconditionally; lanes past the true row end see
// zeros (or are discarded by the partial store).
constexpr int kTile = 16;
typedef float v16 __attribute__((vector_size(64)));
typedef float v16u __attribute__((vector_size(64), aligned(1), may_alias));

inline v16 load16(const float* p) { return *reinterpret_cast<const v16u*>(p); }

inline void store_partial(float* dst, const v16& v, int lim) {
  if (lim == kTile) {
    *reinterpret_cast<v16u*>(dst) = v;
  } else {
    const float* vf = reinterpret_cast<const float*>(&v);
    for (int t = 0; t < lim; ++t) dst[t] = vf[t];
  }
}

inline float lane_sum(const v16& v) {
  const float* vf = reinterpret_cast<const float*>(&v);
  float s = 0.0f;
  for (int t = 0; t < kTile; ++t) s += vf[t];
  return s;
}

// Batch-norm reductions accumulate in double across four independent 8-lane
// chains (a single scalar chain is latency-bound and dominates the BN cost).
// Lane merge order is fixed, so results are identical run to run.
typedef double v8d __attribute__((vector_size(64)));
typedef float v8f __attribute__((vector_size(32), aligned(1), may_alias));

inline double lane_sum8(const v8d& v) {
  return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
}

// Sum and sum-of-squares of n floats in one sweep.
inline void sum_sq_sweep(const float* __restrict x, size_t n, double& sum, double& sumsq) {
  v8d s0{}, s1{}, q0{}, q1{};
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const v8d a = __builtin_convertvector(*reinterpret_cast<const v8f*>(x + i), v8d);
    const v8d b = __builtin_convertvector(*reinterpret_cast<const v8f*>(x + i + 8), v8d);
    s0 += a;
    s1 += b;
    q0 += a * a;
    q1 += b * b;
  }
  double ts = 0.0, tq = 0.0;
  for (; i < n; ++i) {
    const double v = x[i];
    ts += v;
    tq += v * v;
  }
  sum = lane_sum8(s0 + s1) + ts;
  sumsq = lane_sum8(q0 + q1) + tq;
}

// Sum of go and of go * xhat where xhat = (x - m) * is and go is grad_y with
// an optional ReLU mask (zero wherever y <= 0; pass y = nullptr to skip).
inline void bn_grad_sweep(const float* __restrict gy, const float* __restrict y,
                          const float* __restrict x, size_t n, float m, float is, double& sum_go,
                          double& sum_go_xhat) {
  v8d s0{}, s1{}, q0{}, q1{};
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    v8f g0 = *reinterpret_cast<const v8f*>(gy + i);
    v8f g1 = *reinterpret_cast<const v8f*>(gy + i + 8);
    if (y) {
      g0 = (*reinterpret_cast<const v8f*>(y + i) > 0.0f) ? g0 : v8f{};
      g1 = (*reinterpret_cast<const v8f*>(y + i + 8) > 0.0f) ? g1 : v8f{};
    }
    const v8f h0 = (*reinterpret_cast<const v8f*>(x + i) - m) * is;
    const v8f h1 = (*reinterpret_cast<const v8f*>(x + i + 8) - m) * is;
    const v8d dg0 = __builtin_convertvector(g0, v8d);
    const v8d dg1 = __builtin_convertvector(g1, v8d);
    s0 += dg0;
    s1 += dg1;
    q0 += dg0 * __builtin_convertvector(h0, v8d);
    q1 += dg1 * __builtin_convertvector(h1, v8d);
  }
  double ts = 0.0, tq = 0.0;
  for (; i < n; ++i) {
    const float go = (y && y[i] <= 0.0f) ? 0.0f : gy[i];
    ts += go;
    tq += go * static_cast<double>((x[i] - m) * is);
  }
  sum_go = lane_sum8(s0 + s1) + ts;
  sum_go_xhat = lane_sum8(q0 + q1) + tq;
}

// Copies one [h,w] plane into the interior of a pre-zeroed [h+2p, w+2p]
// buffer (whose ring and tile slack stay zero) so tap loops need no bounds
// checks.
void pad_plane(const float* src, float* dst, int h, int w, int p) {
  const int wp = w + 2 * p;
  for (int i = 0; i < h; ++i)
    std::memcpy(dst + static_cast<size_t>(p + i) * wp + p, src + static_cast<size_t>(i) * w,
                sizeof(float) * w);
}

size_t padded_size(int h, int w, int p) {
  return static_cast<size_t>(h + 2 * p) * (w + 2 * p) + kTile;
}

// Correlation of a padded plane with a kh x kw kernel at stride 1. Each
// output element accumulates its taps in ascending (ki,kj) order, matching a
// per-pixel reference bit for bit. Overwrites y[ho,wo].
void dw_corr_s1(const float* __restrict xpad, int wp, const float* __restrict k, int kh, int kw,
                float* __restrict y, int ho, int wo) {
  for (int ow0 = 0; ow0 < wo; ow0 += kTile) {
    const int lim = std::min(kTile, wo - ow0);
    int oh = 0;
    for (; oh + 4 <= ho; oh += 4) {
      v16 a0{}, a1{}, a2{}, a3{};
      for (int ki = 0; ki < kh; ++ki) {
        const float* xr = xpad + (static_cast<size_t>(oh) + ki) * wp + ow0;
        for (int kj = 0; kj < kw; ++kj) {
          const float wk = k[ki * kw + kj];
          a0 += wk * load16(xr + kj);
          a1 += wk * load16(xr + wp + kj);
          a2 += wk * load16(xr + 2 * wp + kj);
          a3 += wk * load16(xr + 3 * wp + kj);
        }
      }
      store_partial(y + static_cast<size_t>(oh) * wo + ow0, a0, lim);
      store_partial(y + (static_cast<size_t>(oh) + 1) * wo + ow0, a1, lim);
      store_partial(y + (static_cast<size_t>(oh) + 2) * wo + ow0, a2, lim);
      store_partial(y + (static_cast<size_t>(oh) + 3) * wo + ow0, a3, lim);
    }
    for (; oh < ho; ++oh) {
      v16 a{};
      for (int ki = 0; ki < kh; ++ki) {
        const float* xr = xpad + (static_cast<size_t>(oh) + ki) * wp + ow0;
        for (int kj = 0; kj < kw; ++kj) a += k[ki * kw + kj] * load16(xr + kj);
      }
      store_partial(y + static_cast<size_t>(oh) * wo + ow0, a, lim);
    }
  }
}

// Stride-2 correlation over phase-split rows: column kj of the kernel reads
// the even (odd) half-row shifted by kj/2, so the tile loads stay contiguous.
void dw_corr_s2(const float* __restrict xe, const float* __restrict xo, int wph,
                const float* __restrict k, int kh, int kw, float* __restrict y, int ho, int wo) {
  for (int ow0 = 0; ow0 < wo; ow0 += kTile) {
    const int lim = std::min(kTile, wo - ow0);
    int oh = 0;
    for (; oh + 4 <= ho; oh += 4) {
      v16 a0{}, a1{}, a2{}, a3{};
      for (int ki = 0; ki < kh; ++ki) {
        const size_t row = (static_cast<size_t>(oh) * 2 + ki) * wph + ow0;
        for (int kj = 0; kj < kw; ++kj) {
          const float wk = k[ki * kw + kj];
          const float* xs = ((kj & 1) ? xo : xe) + row + (kj >> 1);
          a0 += wk * load16(xs);
          a1 += wk * load16(xs + 2 * wph);
          a2 += wk * load16(xs + 4 * wph);
          a3 += wk * load16(xs + 6 * wph);
        }
      }
      store_partial(y + static_cast<size_t>(oh) * wo + ow0, a0, lim);
      store_partial(y + (static_cast<size_t>(oh) + 1) * wo + ow0, a1, lim);
      store_partial(y + (static_cast<size_t>(oh) + 2) * wo + ow0, a2, lim);
      store_partial(y + (static_cast<size_t>(oh) + 3) * wo + ow0, a3, lim);
    }
    for (; oh < ho; ++oh) {
      v16 a{};
      for (int ki = 0; ki < kh; ++ki) {
        const size_t row = (static_cast<size_t>(oh) * 2 + ki) * wph + ow0;
        for (int kj = 0; kj < kw; ++kj)
          a += k[ki * kw + kj] * load16(((kj & 1) ? xo : xe) + row + (kj >> 1));
      }
      store_partial(y + static_cast<size_t>(oh) * wo + ow0, a, lim);
    }
  }
}

// Splits padded rows into even/odd column phases (buffers pre-zeroed, so the
// slack past each written prefix stays zero).
void split_phases(const float* xpad, int hp, int wp, float* xe, float* xo, int wph) {
  for (int i = 0; i < hp; ++i) {
    const float* row = xpad + static_cast<size_t>(i) * wp;
    float* re = xe + static_cast<size_t>(i) * wph;
    float* ro = xo + static_cast<size_t>(i) * wph;
    for (int j = 0; j + 1 < wp; j += 2) {
      re[j >> 1] = row[j];
      ro[j >> 1] = row[j + 1];
    }
    if (wp & 1) re[(wp - 1) >> 1] = row[wp - 1];
  }
}

void flip_kernel(const float* k, float* kf, int kh, int kw) {
  for (int i = 0; i < kh; ++i)
    for (int j = 0; j < kw; ++j) kf[i * kw + j] = k[(kh - 1 - i) * kw + (kw - 1 - j)];
}

// Weight gradient, stride 1: four row-interleaved 16-lane accumulators per
// tap, merged and lane-reduced in fixed order. grad-out rows come from the
// zero-slack copy so lanes past the row end contribute exact zeros.
void dw_gw_s1(const float* __restrict xpad, int wp, const float* __restrict go, int gostride,
              float* __restrict gk, int kh, int kw, int ho, int wo) {
  for (int ki = 0; ki < kh; ++ki)
    for (int kj = 0; kj < kw; ++kj) {
      v16 a0{}, a1{}, a2{}, a3{};
      int oh = 0;
      for (; oh + 4 <= ho; oh += 4) {
        const float* xr = xpad + (static_cast<size_t>(oh) + ki) * wp + kj;
        const float* gr = go + static_cast<size_t>(oh) * gostride;
        for (int ow0 = 0; ow0 < wo; ow0 += kTile) {
          a0 += load16(xr + ow0) * load16(gr + ow0);
          a1 += load16(xr + wp + ow0) * load16(gr + gostride + ow0);
          a2 += load16(xr + 2 * wp + ow0) * load16(gr + 2 * gostride + ow0);
          a3 += load16(xr + 3 * wp + ow0) * load16(gr + 3 * gostride + ow0);
        }
      }
      for (; oh < ho; ++oh) {
        const float* xr = xpad + (static_cast<size_t>(oh) + ki) * wp + kj;
        const float* gr = go + static_cast<size_t>(oh) * gostride;
        for (int ow0 = 0; ow0 < wo; ow0 += kTile) a0 += load16(xr + ow0) * load16(gr + ow0);
      }
      gk[ki * kw + kj] += lane_sum((a0 + a1) + (a2 + a3));
    }
}

void dw_gw_s2(const float* __restrict xe, const float* __restrict xo, int wph,
              const float* __restrict go, int gostride, float* __restrict gk, int kh, int kw,
              int ho, int wo) {
  for (int ki = 0; ki < kh; ++ki)
    for (int kj = 0; kj < kw; ++kj) {
      const float* phase = (kj & 1) ? xo : xe;
      const int shift = kj >> 1;
      v16 a0{}, a1{}, a2{}, a3{};
      int oh = 0;
      for (; oh + 4 <= ho; oh += 4) {
        const float* xr = phase + (static_cast<size_t>(oh) * 2 + ki) * wph + shift;
        const float* gr = go + static_cast<size_t>(oh) * gostride;
        for (int ow0 = 0; ow0 < wo; ow0 += kTile) {
          a0 += load16(xr + ow0) * load16(gr + ow0);
          a1 += load16(xr + 2 * wph + ow0) * load16(gr + gostride + ow0);
          a2 += load16(xr + 4 * wph + ow0) * load16(gr + 2 * gostride + ow0);
          a3 += load16(xr + 6 * wph + ow0) * load16(gr + 3 * gostride + ow0);
        }
      }
      for (; oh < ho; ++oh) {
        const float* xr = phase + (static_cast<size_t>(oh) * 2 + ki) * wph + shift;
        const float* gr = go + static_cast<size_t>(oh) * gostride;
        for (int ow0 = 0; ow0 < wo; ow0 += kTile) a0 += load16(xr + ow0) * load16(gr + ow0);
      }
      gk[ki * kw + kj] += lane_sum((a0 + a1) + (a2 + a3));
    }
}

}  // namespace

Tensor nchw_to_cnhw(const Tensor& x) {
  check_cnhw(x, "nchw_to_cnhw");
  const int n = x.shape[0], c = x.shape[1];
  const size_t plane = static_cast<size_t>(x.shape[2]) * x.shape[3];
  Tensor y({c, n, x.shape[2], x.shape[3]});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      std::memcpy(y.data.data() + (static_cast<size_t>(ci) * n + ni) * plane,
                  x.data.data() + (static_cast<size_t>(ni) * c + ci) * plane,
                  plane * sizeof(float));
  return y;
}

Tensor cnhw_to_nchw(const Tensor& x) {
  check_cnhw(x, "cnhw_to_nchw");
  const int c = x.shape[0], n = x.shape[1];
  const size_t plane = static_cast<size_t>(x.shape[2]) * x.shape[3];
  Tensor y({n, c, x.shape[2], x.shape[3]});
  for (int ci = 0; ci < c; ++ci)
    for (int ni = 0; ni < n; ++ni)
      std::memcpy(y.data.data() + (static_cast<size_t>(ni) * c + ci) * plane,
                  x.data.data() + (static_cast<size_t>(ci) * n + ni) * plane,
                  plane * sizeof(float));
  return y;
}

namespace {

// col [Cin*Kh*Kw, N*Ho*Wo] from x [Cin,N,H,W]; column index = (n, oh, ow).
void cm_im2col(const Tensor& x, int kh, int kw, int stride, int padding, int ho, int wo,
               float* col) {
  const int cin = x.shape[0], n = x.shape[1], h = x.shape[2], w = x.shape[3];
  const size_t ncols = static_cast<size_t>(n) * ho * wo;
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * ncols;
        for (int ni = 0; ni < n; ++ni) {
          const float* xp = x.data.data() + (static_cast<size_t>(c) * n + ni) * h * w;
          float* dst = row + static_cast<size_t>(ni) * ho * wo;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride - padding + ki;
            if (ih < 0 || ih >= h) {
              std::memset(dst + static_cast<size_t>(oh) * wo, 0, sizeof(float) * wo);
              continue;
            }
            const float* src = xp + static_cast<size_t>(ih) * w;
            float* d = dst + static_cast<size_t>(oh) * wo;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride - padding + kj;
              d[ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0f;
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor cm_stem_forward(const Tensor& x, const Tensor& weight, int stride, int padding) {
  check_cnhw(x, "cm_stem_forward");
  if (weight.shape.size() != 4 || weight.shape[1] != x.shape[0])
    throw ConfigError("cm_stem_forward: weight " + weight.shape_str() + " vs input " +
                      x.shape_str());
  const int s = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3];
  const int n = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  const int rows = x.shape[0] * kh * kw;
  const size_t ncols = static_cast<size_t>(n) * ho * wo;
  g_col.resize(static_cast<size_t>(rows) * ncols);
  cm_im2col(x, kh, kw, stride, padding, ho, wo, g_col.data());
  Tensor y({s, n, ho, wo});
  gemm_nn(y.data.data(), weight.data.data(), g_col.data(), s, static_cast<int>(ncols), rows);
  return y;
}

Tensor cm_stem_grad_weight(const Tensor& x, const Tensor& weight, const Tensor& grad_out,
                           int stride, int padding) {
  const int s = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3];
  const int n = x.shape[1];
  const int ho = grad_out.shape[2], wo = grad_out.shape[3];
  require_shape(grad_out, {s, n, ho, wo}, "cm_stem_grad_weight grad_out");
  const int rows = x.shape[0] * kh * kw;
  const size_t ncols = static_cast<size_t>(n) * ho * wo;
  g_col.resize(static_cast<size_t>(rows) * ncols);
  cm_im2col(x, kh, kw, stride, padding, ho, wo, g_col.data());
  Tensor gw(weight.shape);
  gemm_nt(gw.data.data(), grad_out.data.data(), g_col.data(), s, rows, static_cast<int>(ncols));
  return gw;
}

Tensor cm_pw_forward(const Tensor& x, const Tensor& weight, int cout, int cin) {
  check_cnhw(x, "cm_pw_forward");
  if (weight.shape.size() != 4 || weight.shape[2] != 1 || weight.shape[3] != 1)
    throw ConfigError("cm_pw_forward: weight must be [Cout,Cin,1,1], got " + weight.shape_str());
  if (cout > weight.shape[0] || cin > weight.shape[1] || x.shape[0] != cin)
    throw ConfigError("cm_pw_forward: slice [" + std::to_string(cout) + "," + std::to_string(cin) +
                      "] out of weight " + weight.shape_str() + " / input " + x.shape_str());
  const int cin_max = weight.shape[1];
  const size_t ncols = static_cast<size_t>(x.shape[1]) * x.shape[2] * x.shape[3];
  g_wpack.resize(static_cast<size_t>(cout) * cin);
  for (int o = 0; o < cout; ++o)
    std::memcpy(g_wpack.data() + static_cast<size_t>(o) * cin,
                weight.data.data() + static_cast<size_t>(o) * cin_max, cin * sizeof(float));
  Tensor y({cout, x.shape[1], x.shape[2], x.shape[3]});
  gemm_nn(y.data.data(), g_wpack.data(), x.data.data(), cout, static_cast<int>(ncols), cin);
  return y;
}

Tensor cm_pw_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, int cout,
                      int cin, Tensor& grad_weight) {
  require_shape(grad_weight, weight.shape, "cm_pw_backward grad_weight");
  require_shape(grad_out, {cout, x.shape[1], x.shape[2], x.shape[3]}, "cm_pw_backward grad_out");
  const int cin_max = weight.shape[1];
  const size_t ncols = static_cast<size_t>(x.shape[1]) * x.shape[2] * x.shape[3];
  // dW subblock = GO [cout,NHW] * X^T [NHW,cin]
  std::vector<float> gw(static_cast<size_t>(cout) * cin);
  gemm_nt(gw.data(), grad_out.data.data(), x.data.data(), cout, cin, static_cast<int>(ncols));
  for (int o = 0; o < cout; ++o) {
    float* dst = grad_weight.data.data() + static_cast<size_t>(o) * cin_max;
    const float* src = gw.data() + static_cast<size_t>(o) * cin;
    for (int i = 0; i < cin; ++i) dst[i] += src[i];
  }
  // dX = W_slice^T [cin,cout] * GO
  g_wpack.resize(static_cast<size_t>(cout) * cin);
  for (int o = 0; o < cout; ++o)
    std::memcpy(g_wpack.data() + static_cast<size_t>(o) * cin,
                weight.data.data() + static_cast<size_t>(o) * cin_max, cin * sizeof(float));
  Tensor gx(x.shape);
  gemm_tn(gx.data.data(), g_wpack.data(), grad_out.data.data(), cin, static_cast<int>(ncols),
          cout);
  return gx;
}

Tensor cm_dw_forward(const Tensor& x, const Tensor& weight, int stride, int padding) {
  check_cnhw(x, "cm_dw_forward");
  const int c = x.shape[0], n = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (weight.shape.size() != 4 || weight.shape[0] != c || weight.shape[1] != 1)
    throw ConfigError("cm_dw_forward: weight " + weight.shape_str() + " vs input " +
                      x.shape_str());
  const int kh = weight.shape[2], kw = weight.shape[3];
  if (stride != 1 && stride != 2)
    throw ConfigError("cm_dw_forward: stride " + std::to_string(stride));
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  Tensor y({c, n, ho, wo});
  const int hp = h + 2 * padding, wp = w + 2 * padding;
  const int wph = wp / 2 + 1 + kTile;
  float* xpad = g_xpad.ensure({h, w, padding, 0, 0, 0}, padded_size(h, w, padding));
  float* xe = nullptr;
  float* xo = nullptr;
  if (stride == 2) {
    xe = g_even.ensure({hp, wp, wph, 0, 0, 0}, static_cast<size_t>(hp) * wph);
    xo = g_odd.ensure({hp, wp, wph, 0, 0, 0}, static_cast<size_t>(hp) * wph);
  }
  for (int ci = 0; ci < c; ++ci) {
    const float* k = weight.data.data() + static_cast<size_t>(ci) * kh * kw;
    for (int ni = 0; ni < n; ++ni) {
      const float* xp = x.data.data() + (static_cast<size_t>(ci) * n + ni) * h * w;
      float* yp = y.data.data() + (static_cast<size_t>(ci) * n + ni) * ho * wo;
      pad_plane(xp, xpad, h, w, padding);
      if (stride == 1) {
        dw_corr_s1(xpad, wp, k, kh, kw, yp, ho, wo);
      } else {
        split_phases(xpad, hp, wp, xe, xo, wph);
        dw_corr_s2(xe, xo, wph, k, kh, kw, yp, ho, wo);
      }
    }
  }
  return y;
}

void cm_dw_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, int stride,
                    int padding, Tensor& grad_x, Tensor& grad_weight) {
  const int c = x.shape[0], n = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int kh = weight.shape[2], kw = weight.shape[3];
  const int ho = grad_out.shape[2], wo = grad_out.shape[3];
  require_shape(grad_out, {c, n, ho, wo}, "cm_dw_backward grad_out");
  if (kh != kw) throw ConfigError("cm_dw_backward: non-square kernel");
  grad_x = Tensor(x.shape);
  grad_weight = Tensor(weight.shape);
  const int hp = h + 2 * padding, wp = w + 2 * padding;
  const int wph = wp / 2 + 1 + kTile;
  const int gostride = (wo + kTile - 1) / kTile * kTile;
  const int pq = kh - 1 - padding;  // grad_x correlation pad (= padding for same-pad)
  float* xpad = g_xpad.ensure({h, w, padding, 0, 0, 0}, padded_size(h, w, padding));
  float* gosafe = g_gosafe.ensure({ho, wo, gostride, 0, 0, 0}, static_cast<size_t>(ho) * gostride);
  // The input gradient is itself a correlation with the flipped kernel: at
  // stride 1 directly over the padded grad-out plane, at stride 2 over its
  // zero-dilated embedding (grad-out values at even positions).
  const int hd = h + kh - 1, wd = w + kh - 1;  // dilated plane extents
  float* gpad = nullptr;
  float* gdil = nullptr;
  float* xe = nullptr;
  float* xo = nullptr;
  if (stride == 1) {
    gpad = g_gpad.ensure({ho, wo, pq, 0, 0, 0}, padded_size(ho, wo, pq));
  } else {
    xe = g_even.ensure({hp, wp, wph, 0, 0, 0}, static_cast<size_t>(hp) * wph);
    xo = g_odd.ensure({hp, wp, wph, 0, 0, 0}, static_cast<size_t>(hp) * wph);
    gdil = g_gdil.ensure({hd, wd, pq, ho, wo, 0}, static_cast<size_t>(hd) * wd + kTile);
  }
  std::vector<float> kflip(static_cast<size_t>(kh) * kw);
  for (int ci = 0; ci < c; ++ci) {
    const float* k = weight.data.data() + static_cast<size_t>(ci) * kh * kw;
    float* gk = grad_weight.data.data() + static_cast<size_t>(ci) * kh * kw;
    flip_kernel(k, kflip.data(), kh, kw);
    for (int ni = 0; ni < n; ++ni) {
      const float* xp = x.data.data() + (static_cast<size_t>(ci) * n + ni) * h * w;
      const float* gop = grad_out.data.data() + (static_cast<size_t>(ci) * n + ni) * ho * wo;
      float* gxp = grad_x.data.data() + (static_cast<size_t>(ci) * n + ni) * h * w;
      pad_plane(xp, xpad, h, w, padding);
      for (int oh = 0; oh < ho; ++oh)
        std::memcpy(gosafe + static_cast<size_t>(oh) * gostride,
                    gop + static_cast<size_t>(oh) * wo, sizeof(float) * wo);
      if (stride == 1) {
        dw_gw_s1(xpad, wp, gosafe, gostride, gk, kh, kw, ho, wo);
        pad_plane(gop, gpad, ho, wo, pq);
        dw_corr_s1(gpad, wo + 2 * pq, kflip.data(), kh, kw, gxp, h, w);
      } else {
        split_phases(xpad, hp, wp, xe, xo, wph);
        dw_gw_s2(xe, xo, wph, gosafe, gostride, gk, kh, kw, ho, wo);
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j)
            gdil[(static_cast<size_t>(pq) + 2 * i) * wd + pq + 2 * j] = gop[i * wo + j];
        dw_corr_s1(gdil, wd, kflip.data(), kh, kw, gxp, h, w);
      }
    }
  }
}

Tensor cm_bn_forward(const Tensor& x, BNState& bn, RunMode mode, CmBNCache* cache,
                     bool fuse_relu) {
  check_cnhw(x, "cm_bn_forward");
  const int c = x.shape[0];
  if (c > bn.channels())
    throw ConfigError("cm_bn_forward: " + std::to_string(c) + " channels vs BN state " +
                      std::to_string(bn.channels()));
  const size_t plane = static_cast<size_t>(x.shape[1]) * x.shape[2] * x.shape[3];
  const double count = static_cast<double>(plane);

  std::vector<float> mean(c), var(c), inv_std(c);
  if (mode == RunMode::kEval) {
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = bn.running_mean[ci];
      var[ci] = bn.running_var[ci];
      inv_std[ci] = 1.0f / std::sqrt(var[ci] + bn.eps);
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      const float* xp = x.data.data() + static_cast<size_t>(ci) * plane;
      double s = 0.0, s2 = 0.0;
      sum_sq_sweep(xp, plane, s, s2);
      const double m = s / count;
      double v = s2 / count - m * m;
      if (v < 0.0) v = 0.0;
      mean[ci] = static_cast<float>(m);
      var[ci] = static_cast<float>(v);
      inv_std[ci] = static_cast<float>(1.0 / std::sqrt(v + bn.eps));
      if (mode == RunMode::kTrain) {
        bn.running_mean[ci] = (1.0f - bn.momentum) * bn.running_mean[ci] + bn.momentum * mean[ci];
        bn.running_var[ci] = (1.0f - bn.momentum) * bn.running_var[ci] + bn.momentum * var[ci];
      }
    }
  }
  if (cache) {
    cache->mean = mean;
    cache->var = var;
    cache->inv_std = inv_std;
    cache->count = static_cast<int64_t>(plane);
  }

  Tensor y(x.shape);
  for (int ci = 0; ci < c; ++ci) {
    const float* xp = x.data.data() + static_cast<size_t>(ci) * plane;
    float* yp = y.data.data() + static_cast<size_t>(ci) * plane;
    const float g = bn.gamma.value.data[ci], b = bn.beta.value.data[ci];
    const float m = mean[ci], is = inv_std[ci];
    if (fuse_relu) {
      for (size_t i = 0; i < plane; ++i) yp[i] = std::max(0.0f, g * (xp[i] - m) * is + b);
    } else {
      for (size_t i = 0; i < plane; ++i) yp[i] = g * (xp[i] - m) * is + b;
    }
  }
  return y;
}

Tensor cm_bn_backward(const Tensor& x, const Tensor& y, const Tensor& grad_y, BNState& bn,
                      const CmBNCache& cache, bool fused_relu) {
  const int c = x.shape[0];
  require_shape(grad_y, x.shape, "cm_bn_backward grad_y");
  if (fused_relu) require_shape(y, x.shape, "cm_bn_backward y");
  if (static_cast<int>(cache.mean.size()) < c)
    throw ConfigError("cm_bn_backward: cache has fewer channels than input");
  const size_t plane = static_cast<size_t>(x.shape[1]) * x.shape[2] * x.shape[3];
  const double count = static_cast<double>(plane);

  Tensor gx(x.shape);
  for (int ci = 0; ci < c; ++ci) {
    const float m = cache.mean[ci], is = cache.inv_std[ci];
    const float g = bn.gamma.value.data[ci];
    const float* xp = x.data.data() + static_cast<size_t>(ci) * plane;
    const float* yp = fused_relu ? y.data.data() + static_cast<size_t>(ci) * plane : nullptr;
    const float* gyp = grad_y.data.data() + static_cast<size_t>(ci) * plane;
    double sum_go = 0.0, sum_go_xhat = 0.0;
    bn_grad_sweep(gyp, yp, xp, plane, m, is, sum_go, sum_go_xhat);
    bn.beta.grad.data[ci] += static_cast<float>(sum_go);
    bn.gamma.grad.data[ci] += static_cast<float>(sum_go_xhat);
    const float mean_go = static_cast<float>(sum_go / count);
    const float mean_go_xhat = static_cast<float>(sum_go_xhat / count);
    float* gxp = gx.data.data() + static_cast<size_t>(ci) * plane;
    if (fused_relu) {
      for (size_t i = 0; i < plane; ++i) {
        const float go = yp[i] <= 0.0f ? 0.0f : gyp[i];
        const float xhat = (xp[i] - m) * is;
        gxp[i] = g * is * (go - mean_go - xhat * mean_go_xhat);
      }
    } else {
      for (size_t i = 0; i < plane; ++i) {
        const float xhat = (xp[i] - m) * is;
        gxp[i] = g * is * (gyp[i] - mean_go - xhat * mean_go_xhat);
      }
    }
  }
  return gx;
}

void cm_add(Tensor& y, const Tensor& x) {
  require_shape(x, y.shape, "cm_add x");
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
}

Tensor cm_gap(const Tensor& x) {
  check_cnhw(x, "cm_gap");
  const int c = x.shape[0], n = x.shape[1];
  const int spatial = x.shape[2] * x.shape[3];
  Tensor feat({n, c});
  for (int ci = 0; ci < c; ++ci) {
    for (int ni = 0; ni < n; ++ni) {
      const float* xp = x.data.data() + (static_cast<size_t>(ci) * n + ni) * spatial;
      double s = 0.0;
      for (int si = 0; si < spatial; ++si) s += xp[si];
      feat.data[static_cast<size_t>(ni) * c + ci] = static_cast<float>(s / spatial);
    }
  }
  return feat;
}

Tensor cm_gap_backward(const Tensor& x, const Tensor& grad_feat) {
  const int c = x.shape[0], n = x.shape[1];
  const int spatial = x.shape[2] * x.shape[3];
  require_shape(grad_feat, {n, c}, "cm_gap_backward grad_feat");
  Tensor gx(x.shape);
  const float inv = 1.0f / spatial;
  for (int ci = 0; ci < c; ++ci) {
    for (int ni = 0; ni < n; ++ni) {
      const float v = grad_feat.data[static_cast<size_t>(ni) * c + ci] * inv;
      float* dst = gx.data.data() + (static_cast<size_t>(ci) * n + ni) * spatial;
      for (int si = 0; si < spatial; ++si) dst[si] = v;
    }
  }
  return gx;
}

}  // namespace ofalab
