#include "ofalab/gemm.hpp"

#include <algorithm>
#include <vector>

namespace ofalab {
namespace {

// Microkernels keep an MR x NR tile of C in explicit vector registers while
// streaming over a K block (GCC reliably registerizes named vector variables;
// an acc[][] array can end up on the stack, which costs an order of
// magnitude through store-forward latency). The k loop stays serial per
// element, so every C element accumulates its products in ascending-k order
// no matter how the surrounding loops are blocked or which tile width runs.
constexpr int kMR = 4;
constexpr int kNR = 48;

// Cache blocking: the B panel touched by one (j0, k0) block is kKB x kNB
// floats (~450 KB), small enough to stay resident while the i loop sweeps
// over it. Without this, tall-M / wide-N shapes re-stream all of B from
// memory once per row tile.
constexpr int kNB = 480;
constexpr int kKB = 240;

typedef float v16 __attribute__((vector_size(64)));
typedef float v16u __attribute__((vector_size(64), aligned(1), may_alias));

inline v16 ld16(const float* p) { return *reinterpret_cast<const v16u*>(p); }
inline void st16(float* p, const v16& v) { *reinterpret_cast<v16u*>(p) = v; }

inline void tile_4x48(float* __restrict C, const float* __restrict A, const float* __restrict B,
                      int N, int kb, int lda, bool accumulate) {
  v16 c00, c01, c02, c10, c11, c12, c20, c21, c22, c30, c31, c32;
  if (accumulate) {
    float* r = C;
    c00 = ld16(r), c01 = ld16(r + 16), c02 = ld16(r + 32), r += N;
    c10 = ld16(r), c11 = ld16(r + 16), c12 = ld16(r + 32), r += N;
    c20 = ld16(r), c21 = ld16(r + 16), c22 = ld16(r + 32), r += N;
    c30 = ld16(r), c31 = ld16(r + 16), c32 = ld16(r + 32);
  } else {
    c00 = c01 = c02 = c10 = c11 = c12 = c20 = c21 = c22 = c30 = c31 = c32 = v16{};
  }
  const float *a0 = A, *a1 = A + lda, *a2 = a1 + lda, *a3 = a2 + lda;
  for (int k = 0; k < kb; ++k) {
    const float* brow = B + static_cast<std::size_t>(k) * N;
    const v16 r0 = ld16(brow), r1 = ld16(brow + 16), r2 = ld16(brow + 32);
    c00 += a0[k] * r0, c01 += a0[k] * r1, c02 += a0[k] * r2;
    c10 += a1[k] * r0, c11 += a1[k] * r1, c12 += a1[k] * r2;
    c20 += a2[k] * r0, c21 += a2[k] * r1, c22 += a2[k] * r2;
    c30 += a3[k] * r0, c31 += a3[k] * r1, c32 += a3[k] * r2;
  }
  st16(C, c00), st16(C + 16, c01), st16(C + 32, c02), C += N;
  st16(C, c10), st16(C + 16, c11), st16(C + 32, c12), C += N;
  st16(C, c20), st16(C + 16, c21), st16(C + 32, c22), C += N;
  st16(C, c30), st16(C + 16, c31), st16(C + 32, c32);
}

inline void tile_4x16(float* __restrict C, const float* __restrict A, const float* __restrict B,
                      int N, int kb, int lda, bool accumulate) {
  v16 c0, c1, c2, c3;
  if (accumulate) {
    c0 = ld16(C), c1 = ld16(C + N), c2 = ld16(C + 2 * N), c3 = ld16(C + 3 * N);
  } else {
    c0 = c1 = c2 = c3 = v16{};
  }
  const float *a0 = A, *a1 = A + lda, *a2 = a1 + lda, *a3 = a2 + lda;
  for (int k = 0; k < kb; ++k) {
    const v16 r = ld16(B + static_cast<std::size_t>(k) * N);
    c0 += a0[k] * r;
    c1 += a1[k] * r;
    c2 += a2[k] * r;
    c3 += a3[k] * r;
  }
  st16(C, c0), st16(C + N, c1), st16(C + 2 * N, c2), st16(C + 3 * N, c3);
}

// Fallback for edge tiles: plain i-k-j with the same per-element k order.
inline void kernel_edge(float* __restrict C, const float* __restrict A, const float* __restrict B,
                        int mr, int nr, int N, int kb, int lda, bool accumulate) {
  for (int mi = 0; mi < mr; ++mi) {
    float* crow = C + static_cast<std::size_t>(mi) * N;
    if (!accumulate) {
      for (int j = 0; j < nr; ++j) crow[j] = 0.0f;
    }
    const float* arow = A + static_cast<std::size_t>(mi) * lda;
    for (int k = 0; k < kb; ++k) {
      const float a = arow[k];
      const float* __restrict brow = B + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < nr; ++j) crow[j] += a * brow[j];
    }
  }
}

thread_local std::vector<float> g_scratch;

}  // namespace

void gemm_nn(float* C, const float* A, const float* B, int M, int N, int K, bool accumulate) {
  for (int j0 = 0; j0 < N; j0 += kNB) {
    const int jb = std::min(kNB, N - j0);
    for (int k0 = 0; k0 < K; k0 += kKB) {
      const int kb = std::min(kKB, K - k0);
      const bool acc = accumulate || k0 > 0;
      const float* Bb = B + static_cast<std::size_t>(k0) * N + j0;
      int i = 0;
      for (; i + kMR <= M; i += kMR) {
        const float* Ab = A + static_cast<std::size_t>(i) * K + k0;
        float* Cb = C + static_cast<std::size_t>(i) * N + j0;
        int j = 0;
        for (; j + kNR <= jb; j += kNR) {
          tile_4x48(Cb + j, Ab, Bb + j, N, kb, K, acc);
        }
        for (; j + 16 <= jb; j += 16) {
          tile_4x16(Cb + j, Ab, Bb + j, N, kb, K, acc);
        }
        if (j < jb) {
          kernel_edge(Cb + j, Ab, Bb + j, kMR, jb - j, N, kb, K, acc);
        }
      }
      if (i < M) {
        kernel_edge(C + static_cast<std::size_t>(i) * N + j0,
                    A + static_cast<std::size_t>(i) * K + k0, Bb, M - i, jb, N, kb, K, acc);
      }
    }
  }
}

void transpose(float* out, const float* in, int rows, int cols) {
  constexpr int kBlk = 32;
  for (int r0 = 0; r0 < rows; r0 += kBlk) {
    const int r1 = r0 + kBlk < rows ? r0 + kBlk : rows;
    for (int c0 = 0; c0 < cols; c0 += kBlk) {
      const int c1 = c0 + kBlk < cols ? c0 + kBlk : cols;
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          out[static_cast<std::size_t>(c) * rows + r] = in[static_cast<std::size_t>(r) * cols + c];
        }
      }
    }
  }
}

void gemm_tn(float* C, const float* A, const float* B, int M, int N, int K, bool accumulate) {
  // Transpose A ([K,M] -> [M,K]) into scratch, then run the nn kernel.
  g_scratch.resize(static_cast<std::size_t>(M) * K);
  transpose(g_scratch.data(), A, K, M);
  gemm_nn(C, g_scratch.data(), B, M, N, K, accumulate);
}

void gemm_nt(float* C, const float* A, const float* B, int M, int N, int K, bool accumulate) {
  // Transpose B ([N,K] -> [K,N]) into scratch, then run the nn kernel.
  g_scratch.resize(static_cast<std::size_t>(K) * N);
  transpose(g_scratch.data(), B, N, K);
  gemm_nn(C, A, g_scratch.data(), M, N, K, accumulate);
}

}  // namespace ofalab
