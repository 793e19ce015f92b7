// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "longctx/kernels.h"
#include "longctx/tensor.h"

namespace longctx {

// Segment id reserved for padding. Pad tokens attend only to themselves and
// are never attended to.
inline constexpr std::uint32_t kPadSegment = 0xFFFFFFFFu;

// Which (query, key) pairs of an L x L attention pattern are allowed, by
// global token index. Structured kinds avoid materialising L x L storage.
class AttentionMask {
 public:
  enum class Kind { kNone, kCausal, kSegmentCausal, kDense };
  enum class Cover { kEmpty, kFull, kPartial };

  static AttentionMask none(std::size_t length);
  static AttentionMask causal(std::size_t length);
  // Causal within runs of equal segment id; kPadSegment marks padding.
  static AttentionMask segment_causal(std::vector<std::uint32_t> segments);
  // Causal over [0, valid_length); everything after is padding.
  static AttentionMask causal_with_padding(std::size_t length, std::size_t valid_length);
  // Arbitrary L x L tensor of {0, 1}.
  static AttentionMask dense(const Tensor& allowed);

  Kind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return length_; }
  bool allowed(std::size_t query, std::size_t key) const;
  bool is_pad(std::size_t index) const;

  // Classifies the tile [q0, q1) x [k0, k1). kFull means every pair is
  // allowed, kEmpty means none is.
  Cover classify(std::size_t q0, std::size_t q1, std::size_t k0, std::size_t k1) const;

  // Every structured kind allows a contiguous key range [begin, end) per
  // query; dense masks have no such guarantee and return nullopt.
  struct KeySpan {
    std::size_t begin = 0;
    std::size_t end = 0;
  };
  std::optional<KeySpan> key_span(std::size_t query) const;

  std::span<const std::uint32_t> segments() const noexcept { return segments_; }
  Tensor to_dense() const;

 private:
  Kind kind_ = Kind::kNone;
  std::size_t length_ = 0;
  std::vector<std::uint32_t> segments_;
  std::vector<std::size_t> run_start_;
  std::vector<std::uint8_t> dense_;
};

// Online-softmax partial state for a block of query rows: unnormalised
// output, running row max, running denominator. A row with denominator 0 has
// seen no allowed key yet.
struct SoftmaxAccumulator {
  Tensor partial_out;    // [tokens x head_dim]
  Tensor running_max;    // [tokens]
  Tensor running_denom;  // [tokens]

  static SoftmaxAccumulator empty(std::size_t tokens, std::size_t head_dim);
  std::size_t tokens() const { return partial_out.rows(); }
  std::size_t head_dim() const { return partial_out.cols(); }
};

// Attention of query rows q (global indices q_start..) over key/value rows
// k, v (global indices k_start..) for a single head, as mergeable state.
SoftmaxAccumulator attend_block(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v,
                                std::size_t q_start, std::size_t k_start,
                                const AttentionMask& mask, float scale);
SoftmaxAccumulator attend_block(const Tensor& q, const Tensor& k, const Tensor& v,
                                std::size_t q_start, std::size_t k_start,
                                const AttentionMask& mask, float scale);

// State equivalent to processing both key blocks jointly. Rows empty in one
// input are copied bit-exactly from the other.
SoftmaxAccumulator merge_accumulators(const SoftmaxAccumulator& a, const SoftmaxAccumulator& b);

// partial_out / denominator. Throws DegenerateRowError for rows that never
// saw an allowed key.
Tensor finalize(const SoftmaxAccumulator& acc);

// Single-device multi-head attention; q, k, v are [L x heads*head_dim]. The
// whole key range is one block, so this is the reference a one-worker ring
// reproduces bit for bit.
Tensor local_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                       const AttentionMask& mask);

inline float attention_scale(std::size_t head_dim) {
  return 1.0f / std::sqrt(static_cast<float>(head_dim));
}

}  // namespace longctx
