#pragma once

#include <cstddef>

namespace ofalab {

// Single-precision GEMM on row-major packed matrices.
//
// Every C element accumulates its K products in ascending k order, so results
// are bit-identical across runs and independent of tiling. Reductions are
// never split across the K dimension.

// C[M,N] = (accumulate ? C : 0) + A[M,K] * B[K,N]
void gemm_nn(float* C, const float* A, const float* B, int M, int N, int K, bool accumulate = false);

// C[M,N] = (accumulate ? C : 0) + A^T * B, with A stored [K,M]
void gemm_tn(float* C, const float* A, const float* B, int M, int N, int K, bool accumulate = false);

// C[M,N] = (accumulate ? C : 0) + A * B^T, with B stored [N,K]
void gemm_nt(float* C, const float* A, const float* B, int M, int N, int K, bool accumulate = false);

// out[cols,rows] = transpose of in[rows,cols]
void transpose(float* out, const float* in, int rows, int cols);

}  // namespace ofalab
