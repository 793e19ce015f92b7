// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

#include "longctx/tensor.h"

namespace longctx {

// Non-owning strided matrix views used by the raw kernels. `ld` is the
// distance in elements between consecutive rows.
struct ConstMatrixView {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t ld = 0;
};

struct MatrixView {
  float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t ld = 0;

  operator ConstMatrixView() const noexcept { return {data, rows, cols, ld}; }
};

ConstMatrixView view(const Tensor& t);
MatrixView view(Tensor& t);

// c = a * b. Every output element is an fma chain over the inner index in
// ascending order starting from +0.0f, independent of blocking, so any row
// computed alone is bit-identical to the same row computed in a batch.
void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView c);

Tensor matmul(const Tensor& a, const Tensor& b);

// x[i, :] += bias for every row.
void add_row_bias(Tensor& x, const Tensor& bias);

// Row softmax. With a {0,1} mask, disallowed entries are replaced by a large
// negative score before normalisation and come out as exactly 0.
Tensor softmax_rows(const Tensor& x, const Tensor* mask = nullptr);

// y = x / sqrt(mean(x^2) + eps) * gain, row-wise.
Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps = 1e-6f);

// Exact (erf) GELU, elementwise in place.
void gelu_inplace(Tensor& x);

struct RopeConfig {
  double base = 1'000'000.0;
  std::size_t head_dim = 0;

  void validate() const;
};

// Rotates adjacent pairs (2i, 2i+1) of every head by position * base^(-2i/head_dim).
// `x` is [tokens x (heads * head_dim)]; with heads == 1 it is a single head.
Tensor apply_rope(const Tensor& x, std::span<const std::size_t> positions,
                  const RopeConfig& cfg);
void apply_rope_inplace(Tensor& x, std::span<const std::size_t> positions,
                        const RopeConfig& cfg);

// Greedy choice; ties resolve to the lowest index.
std::size_t argmax(std::span<const float> values);

// exp(x) for x <= 0 via range reduction and a degree-6 polynomial in fma
// steps; branch free so loops over it vectorise. Relative error below 2e-7,
// and exactly 0 for x < -87.
inline float exp_nonpositive(float x) noexcept {
  constexpr float kLog2e = 1.44269504088896341f;
  const float xc = std::max(x, -87.0f);
  const float n = std::nearbyint(xc * kLog2e);
  float r = std::fma(n, -0.693359375f, xc);
  r = std::fma(n, 2.12194440e-4f, r);
  float p = 1.9875691500e-4f;
  p = std::fma(p, r, 1.3981999507e-3f);
  p = std::fma(p, r, 8.3334519073e-3f);
  p = std::fma(p, r, 4.1665795894e-2f);
  p = std::fma(p, r, 1.6666665459e-1f);
  p = std::fma(p, r, 5.0000001201e-1f);
  p = std::fma(p, r * r, r) + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  const float y = p * std::bit_cast<float>(bits);
  return x < -87.0f ? 0.0f : y;
}

}  // namespace longctx
