// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include "longctx/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "longctx/error.h"

namespace longctx {
namespace {

std::size_t checked_volume(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > Tensor::kMaxRank) {
    throw DimensionError("tensor rank must be in [1, 4], got " +
                         std::to_string(shape.size()));
  }
  std::size_t volume = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive");
    volume *= e;
  }
  return volume;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_volume(shape_), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_volume(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string() + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::from_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty() || rows.front().empty()) {
    throw DimensionError("from_rows needs at least one non-empty row");
  }
  const std::size_t n = rows.front().size();
  std::vector<float> data;
  data.reserve(rows.size() * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged rows in from_rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), n}, std::move(data));
}

Tensor Tensor::filled(std::vector<std::size_t> shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range");
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string());
  return shape_[1];
}

std::span<float> Tensor::row(std::size_t i) {
  const std::size_t n = cols();
  if (i >= shape_[0]) throw IndexError("row index out of range");
  return {data_.data() + i * n, n};
}

std::span<const float> Tensor::row(std::size_t i) const {
  const std::size_t n = cols();
  if (i >= shape_[0]) throw IndexError("row index out of range");
  return {data_.data() + i * n, n};
}

float& Tensor::at(std::size_t i, std::size_t j) {
  if (i >= rows() || j >= shape_[1]) throw IndexError("element index out of range");
  return data_[i * shape_[1] + j];
}

float Tensor::at(std::size_t i, std::size_t j) const {
  if (i >= rows() || j >= shape_[1]) throw IndexError("element index out of range");
  return data_[i * shape_[1] + j];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  const std::size_t n = cols();
  if (begin >= end || end > shape_[0]) throw IndexError("bad row slice");
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * n),
                         data_.begin() + static_cast<std::ptrdiff_t>(end * n));
  return Tensor({end - begin, n}, std::move(out));
}

Tensor Tensor::slice_cols(std::size_t begin, std::size_t end) const {
  const std::size_t m = rows();
  const std::size_t n = shape_[1];
  if (begin >= end || end > n) throw IndexError("bad column slice");
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i) {
    std::memcpy(out.data_.data() + i * w, data_.data() + i * n + begin, w * sizeof(float));
  }
  return out;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows column mismatch");
    m += p.rows();
  }
  std::vector<float> data;
  data.reserve(m * n);
  for (const Tensor& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor({m, n}, std::move(data));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shape mismatch: " + a.shape_string() + " vs " +
                         b.shape_string());
  }
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

}  // namespace longctx
