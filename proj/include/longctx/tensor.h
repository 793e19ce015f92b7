// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace longctx {

// Dense row-major float32 array of rank 1..4. Value type; copies are deep.
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Tensor() = default;
  // Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);
  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  // 2-D convenience constructor from nested rows; all rows must match.
  static Tensor from_rows(const std::vector<std::vector<float>>& rows);
  static Tensor filled(std::vector<std::size_t> shape, float value);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix views; require rank 2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

  float& at(std::size_t i, std::size_t j);
  float at(std::size_t i, std::size_t j) const;
  float& operator[](std::size_t flat) { return data_[flat]; }
  float operator[](std::size_t flat) const { return data_[flat]; }

  // Same data, new shape with identical element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;
  // Rows [begin, end) of a rank-2 tensor.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  // Columns [begin, end) of a rank-2 tensor.
  Tensor slice_cols(std::size_t begin, std::size_t end) const;

  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

// Row-wise concatenation of rank-2 tensors with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);

// Largest |a - b| over all elements; shapes must match.
float max_abs_diff(const Tensor& a, const Tensor& b);

// True iff both tensors have the same shape and identical bit patterns.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace longctx
