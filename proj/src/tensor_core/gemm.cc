// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "longctx/error.h"
#include "longctx/kernels.h"

namespace longctx {
namespace {

constexpr std::size_t kMb = 128;  // rows of A kept hot while sweeping B panels

// Portable path; also the reference for per-element arithmetic.
[[maybe_unused]] void gemm_scalar(const float* a, std::size_t lda, const float* b,
                                  std::size_t ldb, float* c,
                 std::size_t ldc, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    std::fill(crow, crow + n, 0.0f);
    for (std::size_t t = 0; t < k; ++t) {
      const float av = a[i * lda + t];
      const float* brow = b + t * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

#if defined(__AVX512F__)

// MR rows x NV*16 columns register tile. Lanes outside `last_mask` in the last
// vector are masked off.
template <std::size_t MR, std::size_t NV>
inline void tile_avx512(const float* a, std::size_t lda, const float* b, std::size_t ldb,
                        float* c, std::size_t ldc, std::size_t k, __mmask16 last_mask) {
  __m512 acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = _mm512_setzero_ps();
  for (std::size_t t = 0; t < k; ++t) {
    const float* brow = b + t * ldb;
    __m512 bv[NV];
    for (std::size_t v = 0; v < NV; ++v) {
      const __mmask16 mk = v + 1 == NV ? last_mask : __mmask16(0xFFFF);
      bv[v] = _mm512_maskz_loadu_ps(mk, brow + v * 16);
    }
    for (std::size_t r = 0; r < MR; ++r) {
      const __m512 av = _mm512_set1_ps(a[r * lda + t]);
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] = _mm512_fmadd_ps(av, bv[v], acc[r][v]);
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) {
      const __mmask16 mk = v + 1 == NV ? last_mask : __mmask16(0xFFFF);
      _mm512_mask_storeu_ps(c + r * ldc + v * 16, mk, acc[r][v]);
    }
}

template <std::size_t MR>
void row_group_avx512(const float* a, std::size_t lda, const float* b, std::size_t ldb,
                      float* c, std::size_t ldc, std::size_t n, std::size_t k) {
  std::size_t j = 0;
  for (; j + 64 <= n; j += 64) tile_avx512<MR, 4>(a, lda, b + j, ldb, c + j, ldc, k, 0xFFFF);
  for (; j + 32 <= n; j += 32) tile_avx512<MR, 2>(a, lda, b + j, ldb, c + j, ldc, k, 0xFFFF);
  for (; j + 16 <= n; j += 16) tile_avx512<MR, 1>(a, lda, b + j, ldb, c + j, ldc, k, 0xFFFF);
  if (j < n) {
    const auto mask = static_cast<__mmask16>((1u << (n - j)) - 1u);
    tile_avx512<MR, 1>(a, lda, b + j, ldb, c + j, ldc, k, mask);
  }
}

void gemm_blocked(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                  std::size_t ldc, std::size_t m, std::size_t n, std::size_t k) {
  constexpr std::size_t kNb = 512;  // B panel width swept per A block
  for (std::size_t i0 = 0; i0 < m; i0 += kMb) {
    const std::size_t i1 = std::min(m, i0 + kMb);
    for (std::size_t j0 = 0; j0 < n; j0 += kNb) {
      const std::size_t w = std::min(kNb, n - j0);
      std::size_t i = i0;
      for (; i + 6 <= i1; i += 6)
        row_group_avx512<6>(a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc, w, k);
      for (; i + 4 <= i1; i += 4)
        row_group_avx512<4>(a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc, w, k);
      for (; i < i1; ++i)
        row_group_avx512<1>(a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc, w, k);
    }
  }
}

#else

void gemm_blocked(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                  std::size_t ldc, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i0 = 0; i0 < m; i0 += kMb) {
    const std::size_t i1 = std::min(m, i0 + kMb);
    gemm_scalar(a + i0 * lda, lda, b, ldb, c + i0 * ldc, ldc, i1 - i0, n, k);
  }
}

#endif

}  // namespace

ConstMatrixView view(const Tensor& t) {
  return {t.data().data(), t.rows(), t.cols(), t.cols()};
}

MatrixView view(Tensor& t) { return {t.data().data(), t.rows(), t.cols(), t.cols()}; }

void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView c) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols) {
    throw DimensionError("gemm shape mismatch: [" + std::to_string(a.rows) + " x " +
                         std::to_string(a.cols) + "] * [" + std::to_string(b.rows) + " x " +
                         std::to_string(b.cols) + "] -> [" + std::to_string(c.rows) + " x " +
                         std::to_string(c.cols) + "]");
  }
  const std::size_t m = a.rows;
  const std::size_t n = b.cols;
  const std::size_t k = a.cols;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c.data + i * c.ld, c.data + i * c.ld + n, 0.0f);
    return;
  }
  gemm_blocked(a.data, a.ld, b.data, b.ld, c.data, c.ld, m, n, k);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul inner extents differ: " + a.shape_string() + " x " +
                         b.shape_string());
  }
  Tensor c({a.rows(), b.cols()});
  gemm(view(a), view(b), view(c));
  return c;
}

void add_row_bias(Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  if (bias.size() != n) throw DimensionError("bias width mismatch");
  const float* bv = bias.data().data();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    float* r = x.row(i).data();
    for (std::size_t j = 0; j < n; ++j) r[j] += bv[j];
  }
}

}  // namespace longctx
