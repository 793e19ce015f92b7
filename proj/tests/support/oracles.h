// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

// Test-only reference implementations. These deliberately avoid the engine's
// kernels so they can serve as independent oracles.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "longctx/tensor.h"

namespace longctx::testing {

inline Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, float lo = -1.0f,
                            float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = dist(rng);
  return t;
}

// Triple loop with an fma chain in ascending inner index from +0.0f.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      float acc = 0.0f;
      for (std::size_t t = 0; t < a.cols(); ++t) acc = std::fma(a.at(i, t), b.at(t, j), acc);
      c.at(i, j) = acc;
    }
  return c;
}

// Direct softmax(Q K^T * scale) V in double for one head. `allowed(i, j)`
// uses global indices q_start + i, k_start + j.
inline Tensor direct_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               const std::function<bool(std::size_t, std::size_t)>& allowed,
                               std::size_t q_start = 0, std::size_t k_start = 0) {
  const std::size_t m = q.rows(), n = k.rows(), d = q.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out({m, v.cols()});
  std::vector<double> s(n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (!allowed(q_start + i, k_start + j)) continue;
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += static_cast<double>(q.at(i, t)) * k.at(j, t);
      s[j] = dot * scale;
      mx = std::max(mx, s[j]);
    }
    double den = 0.0;
    std::vector<double> o(v.cols(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (!allowed(q_start + i, k_start + j)) continue;
      const double p = std::exp(s[j] - mx);
      den += p;
      for (std::size_t c = 0; c < v.cols(); ++c) o[c] += p * v.at(j, c);
    }
    for (std::size_t c = 0; c < v.cols(); ++c) out.at(i, c) = static_cast<float>(o[c] / den);
  }
  return out;
}

// Multi-head version over [L x heads*head_dim] inputs with column-sliced heads.
inline Tensor direct_multihead(const Tensor& q, const Tensor& k, const Tensor& v,
                               std::size_t heads,
                               const std::function<bool(std::size_t, std::size_t)>& allowed) {
  const std::size_t hd = q.cols() / heads;
  Tensor out({q.rows(), q.cols()});
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor o = direct_attention(q.slice_cols(h * hd, (h + 1) * hd),
                                      k.slice_cols(h * hd, (h + 1) * hd),
                                      v.slice_cols(h * hd, (h + 1) * hd), allowed);
    for (std::size_t i = 0; i < q.rows(); ++i)
      for (std::size_t c = 0; c < hd; ++c) out.at(i, h * hd + c) = o.at(i, c);
  }
  return out;
}

inline bool causal_rule(std::size_t i, std::size_t j) { return j <= i; }

}  // namespace longctx::testing
