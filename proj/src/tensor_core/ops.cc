// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "longctx/error.h"
#include "longctx/kernels.h"

namespace longctx {
namespace {

// Stand-in for -inf on disallowed entries; keeps every value finite.
constexpr double kMaskedScore = -1e9;

}  // namespace

Tensor softmax_rows(const Tensor& x, const Tensor* mask) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (mask && mask->shape() != x.shape()) {
    throw DimensionError("softmax mask " + mask->shape_string() + " vs scores " +
                         x.shape_string());
  }
  Tensor out({m, n});
  std::vector<double> e(n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto xr = x.row(i);
    double row_max = kMaskedScore;
    bool any_allowed = false;
    for (std::size_t j = 0; j < n; ++j) {
      const bool allowed = !mask || mask->at(i, j) != 0.0f;
      if (mask && mask->at(i, j) != 0.0f && mask->at(i, j) != 1.0f) {
        throw ConfigError("softmax mask entries must be 0 or 1");
      }
      e[j] = allowed ? static_cast<double>(xr[j]) : kMaskedScore;
      if (allowed) {
        row_max = any_allowed ? std::max(row_max, e[j]) : e[j];
        any_allowed = true;
      }
    }
    if (!any_allowed) {
      throw DegenerateRowError("softmax row " + std::to_string(i) + " is fully masked");
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool allowed = !mask || mask->at(i, j) != 0.0f;
      e[j] = allowed ? std::exp(e[j] - row_max) : 0.0;
      denom += e[j];
    }
    auto orow = out.row(i);
    for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(e[j] / denom);
  }
  return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps) {
  const std::size_t n = x.cols();
  if (gain.size() != n) throw DimensionError("rms_norm gain width mismatch");
  Tensor out({x.rows(), n});
  const float* g = gain.data().data();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const float* xr = x.row(i).data();
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += static_cast<double>(xr[j]) * xr[j];
    const auto inv = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(n) + eps));
    float* orow = out.row(i).data();
    for (std::size_t j = 0; j < n; ++j) orow[j] = xr[j] * inv * g[j];
  }
  return out;
}

void gelu_inplace(Tensor& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  for (float& v : x.data()) v = 0.5f * v * (1.0f + std::erf(v * kInvSqrt2));
}

void RopeConfig::validate() const {
  if (!(base > 0.0) || !std::isfinite(base)) throw ConfigError("rope base must be positive");
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rope head_dim must be even and positive, got " + std::to_string(head_dim));
  }
}

void apply_rope_inplace(Tensor& x, std::span<const std::size_t> positions,
                        const RopeConfig& cfg) {
  cfg.validate();
  const std::size_t tokens = x.rows();
  const std::size_t width = x.cols();
  if (positions.size() != tokens) {
    throw DimensionError("rope got " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(tokens) + " tokens");
  }
  if (width % cfg.head_dim != 0) throw DimensionError("rope width not a multiple of head_dim");
  const std::size_t half = cfg.head_dim / 2;
  std::vector<double> inv_freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    inv_freq[i] = std::pow(cfg.base, -2.0 * static_cast<double>(i) /
                                         static_cast<double>(cfg.head_dim));
  }
  std::vector<float> cs(half), sn(half);
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto pos = static_cast<double>(positions[t]);
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = pos * inv_freq[i];
      cs[i] = static_cast<float>(std::cos(angle));
      sn[i] = static_cast<float>(std::sin(angle));
    }
    float* r = x.row(t).data();
    for (std::size_t h = 0; h < width; h += cfg.head_dim) {
      for (std::size_t i = 0; i < half; ++i) {
        const float a = r[h + 2 * i];
        const float b = r[h + 2 * i + 1];
        r[h + 2 * i] = a * cs[i] - b * sn[i];
        r[h + 2 * i + 1] = a * sn[i] + b * cs[i];
      }
    }
  }
}

Tensor apply_rope(const Tensor& x, std::span<const std::size_t> positions,
                  const RopeConfig& cfg) {
  Tensor out = x;
  apply_rope_inplace(out, positions, cfg);
  return out;
}

std::size_t argmax(std::span<const float> values) {
  if (values.empty()) throw EmptySelectionError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace longctx
