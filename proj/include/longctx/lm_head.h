// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "longctx/tensor.h"
#include "longctx/tokens.h"

namespace longctx {

inline constexpr std::size_t kDefaultChunkLen = 32768;

// Which rows of the hidden states get projected to the vocabulary, and how.
class HeadStrategy {
 public:
  enum class Kind { kFull, kChunked, kLogitsMasked };

  static HeadStrategy full() { return HeadStrategy(Kind::kFull, 0, {}); }
  static HeadStrategy chunked(std::size_t chunk_len = kDefaultChunkLen);
  // Positions must be strictly increasing.
  static HeadStrategy logits_masked(std::vector<std::size_t> positions);

  Kind kind() const { return kind_; }
  std::size_t chunk_len() const { return chunk_len_; }
  const std::vector<std::size_t>& positions() const { return positions_; }
  std::string name() const;

  // Checks the strategy against a sequence of `seq_len` rows.
  void validate(std::size_t seq_len) const;
  // Rows whose logits are produced for a sequence of `seq_len` rows.
  std::size_t selected_rows(std::size_t seq_len) const;

 private:
  HeadStrategy(Kind k, std::size_t chunk, std::vector<std::size_t> pos)
      : kind_(k), chunk_len_(chunk), positions_(std::move(pos)) {}
  Kind kind_;
  std::size_t chunk_len_;
  std::vector<std::size_t> positions_;
};

// "full", "chunked", "masked".
HeadStrategy::Kind parse_head_kind(const std::string& s);

// Counts live logit rows across every buffer the head allocates. The
// default instance is process wide; tests may pass their own.
class LogitRowMeter {
 public:
  void acquire(std::size_t rows);
  void release(std::size_t rows);
  std::size_t live() const { return live_.load(); }
  std::size_t peak() const { return peak_.load(); }
  void reset_peak() { peak_.store(live_.load()); }

 private:
  std::atomic<std::size_t> live_{0};
  std::atomic<std::size_t> peak_{0};
};

struct HeadStats {
  std::size_t passes = 0;
  std::size_t peak_logit_rows = 0;  // largest logit buffer alive at once
  std::uint64_t flops = 0;          // 2 * rows * d * V over the head matmul
};

struct HeadOutput {
  Tensor logits;                  // [rows.size() x V]
  std::vector<std::size_t> rows;  // sequence index of each logit row
  HeadStats stats;
};

// Head matmul FLOPs for `rows` rows; exact.
std::uint64_t head_flops(std::size_t rows, std::size_t d_model, std::size_t vocab);

// Hands each pass's logits to `sink` and frees them before the next pass.
// The chunk tensor covers sequence rows [first_row, first_row + chunk.rows())
// except under kLogitsMasked, where it holds the selected rows in order.
HeadStats stream_logits(const Tensor& hidden, const Tensor& unembed, const HeadStrategy& strategy,
                        const std::function<void(std::size_t first_row, const Tensor& chunk)>& sink,
                        LogitRowMeter* meter = nullptr);

// Materialises the selected logit rows. Every row is bit-identical to the
// same row under the full strategy.
HeadOutput compute_logits(const Tensor& hidden, const Tensor& unembed,
                          const HeadStrategy& strategy, LogitRowMeter* meter = nullptr);

// Greedy next token at each selected row without keeping the logits.
std::vector<TokenId> head_argmax(const Tensor& hidden, const Tensor& unembed,
                                 const HeadStrategy& strategy, HeadStats* stats = nullptr);

inline constexpr std::uint64_t kBytesPerGigabyte = 1'000'000'000;

struct MemoryEstimate {
  std::uint64_t logit_bytes = 0;
  double reduction_factor = 1.0;  // reference bytes / logit_bytes

  double gigabytes() const;
};

// rows * vocab * bytes_per, exactly. The reduction is measured against a
// full head over `reference_rows` rows (defaults to `rows`).
MemoryEstimate estimate_logit_memory(std::uint64_t rows, std::uint64_t vocab,
                                     std::uint64_t bytes_per, std::uint64_t reference_rows = 0);

// Mean cross entropy of `targets` at the trailing targets.size() == window
// rows, computed through the masked head.
double loss_over_window(const Tensor& hidden, const Tensor& unembed,
                        std::span<const TokenId> targets, std::size_t window);

// Cross entropy of each logit row against its target, in double.
std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const TokenId> targets);

}  // namespace longctx
