#pragma once

#include <cstdint>

// Raw strided GEMM kernels shared by the tensor ops and the attention paths.
//
// Every output element is accumulated in float starting from +0.0f and adds
// the products in ascending order of the contracted index. The build disables
// floating-point contraction, so these kernels are bit-identical to a naive
// triple loop with the same order.
namespace mi2v::kernels {

using Index = std::int64_t;

// C[m, n] = sum_k A[m, k] * B[k, n]
void gemm_nn(Index m, Index n, Index k, const float* a, Index lda, const float* b, Index ldb,
             float* c, Index ldc);

// C[m, n] = sum_k A[k, m] * B[k, n]
void gemm_tn(Index m, Index n, Index k, const float* a, Index lda, const float* b, Index ldb,
             float* c, Index ldc);

// C[m, n] = sum_k A[m, k] * B[n, k]
void gemm_nt(Index m, Index n, Index k, const float* a, Index lda, const float* b, Index ldb,
             float* c, Index ldc);

// dst[c, r] = src[r, c] for an (rows x cols) source with leading dimension ld_src.
void transpose(Index rows, Index cols, const float* src, Index ld_src, float* dst, Index ld_dst);

}  // namespace mi2v::kernels
