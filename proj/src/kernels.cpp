#include "mi2v/kernels.hpp"

#include <algorithm>

namespace mi2v::kernels {

namespace {

// Output columns per tile: four rows of this width stay resident in L1 while
// the reduction runs. Blocking columns leaves each element's summation order
// (p = 0, 1, ..., k-1) untouched, so results do not depend on the tile width.
constexpr Index kColBlock = 256;

// c[r][j] = sum_p a(r, p) * b[p][j] for four rows r and columns [j0, j1).
// `a_at(r, p)` abstracts over the storage order of A.
template <typename AAt>
inline void four_rows(Index j0, Index j1, Index k, AAt a_at, const float* b, Index ldb, float* c0, float* c1,
                      float* c2, float* c3) {
  const Index n = j1 - j0;
  float* __restrict r0 = c0 + j0;
  float* __restrict r1 = c1 + j0;
  float* __restrict r2 = c2 + j0;
  float* __restrict r3 = c3 + j0;
  std::fill(r0, r0 + n, 0.0f);
  std::fill(r1, r1 + n, 0.0f);
  std::fill(r2, r2 + n, 0.0f);
  std::fill(r3, r3 + n, 0.0f);
  for (Index p = 0; p < k; ++p) {
    const float a0 = a_at(0, p), a1 = a_at(1, p), a2 = a_at(2, p), a3 = a_at(3, p);
    const float* __restrict brow = b + p * ldb + j0;
    for (Index j = 0; j < n; ++j) {
      const float bv = brow[j];
      r0[j] += a0 * bv;
      r1[j] += a1 * bv;
      r2[j] += a2 * bv;
      r3[j] += a3 * bv;
    }
  }
}

template <typename AAt>
inline void one_row(Index j0, Index j1, Index k, AAt a_at, const float* b, Index ldb, float* c) {
  float* __restrict row = c + j0;
  const Index n = j1 - j0;
  std::fill(row, row + n, 0.0f);
  for (Index p = 0; p < k; ++p) {
    const float av = a_at(p);
    const float* __restrict brow = b + p * ldb + j0;
    for (Index j = 0; j < n; ++j) row[j] += av * brow[j];
  }
}

}  // namespace

void gemm_nn(Index m, Index n, Index k, const float* a, Index lda, const float* b, Index ldb,
             float* c, Index ldc) {
  for (Index j0 = 0; j0 < n; j0 += kColBlock) {
    const Index j1 = std::min(n, j0 + kColBlock);
    Index i = 0;
    for (; i + 4 <= m; i += 4) {
      const float* ai = a + i * lda;
      four_rows(j0, j1, k, [&](Index r, Index p) { return ai[r * lda + p]; }, b, ldb, c + i * ldc,
                c + (i + 1) * ldc, c + (i + 2) * ldc, c + (i + 3) * ldc);
    }
    for (; i < m; ++i) {
      const float* ai = a + i * lda;
      one_row(j0, j1, k, [&](Index p) { return ai[p]; }, b, ldb, c + i * ldc);
    }
  }
}

void gemm_tn(Index m, Index n, Index k, const float* a, Index lda, const float* b, Index ldb,
             float* c, Index ldc) {
  for (Index j0 = 0; j0 < n; j0 += kColBlock) {
    const Index j1 = std::min(n, j0 + kColBlock);
    Index i = 0;
    for (; i + 4 <= m; i += 4) {
      const float* ai = a + i;
      four_rows(j0, j1, k, [&](Index r, Index p) { return ai[p * lda + r]; }, b, ldb, c + i * ldc,
                c + (i + 1) * ldc, c + (i + 2) * ldc, c + (i + 3) * ldc);
    }
    for (; i < m; ++i) {
      const float* ai = a + i;
      one_row(j0, j1, k, [&](Index p) { return ai[p * lda]; }, b, ldb, c + i * ldc);
    }
  }
}

void gemm_nt(Index m, Index n, Index k, const float* a, Index lda, const float* b, Index ldb,
             float* c, Index ldc) {
  for (Index i = 0; i < m; ++i) {
    const float* arow = a + i * lda;
    for (Index j = 0; j < n; ++j) {
      const float* brow = b + j * ldb;
      float acc = 0.0f;
      for (Index p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * ldc + j] = acc;
    }
  }
}

void transpose(Index rows, Index cols, const float* src, Index ld_src, float* dst, Index ld_dst) {
  constexpr Index kBlock = 32;
  for (Index r0 = 0; r0 < rows; r0 += kBlock) {
    const Index r1 = std::min(rows, r0 + kBlock);
    for (Index c0 = 0; c0 < cols; c0 += kBlock) {
      const Index c1 = std::min(cols, c0 + kBlock);
      for (Index r = r0; r < r1; ++r)
        for (Index cc = c0; cc < c1; ++cc) dst[cc * ld_dst + r] = src[r * ld_src + cc];
    }
  }
}

}  // namespace mi2v::kernels
