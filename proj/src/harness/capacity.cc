// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "longctx/error.h"
#include "longctx/harness.h"

namespace longctx {
namespace {

using u128 = unsigned __int128;

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return a / b + (a % b != 0); }

u128 footprint_wide(std::uint64_t seq_len, std::uint64_t workers, HeadStrategy::Kind head,
                    const CapacityConfig& cfg) {
  const u128 tokens = ceil_div(seq_len, workers);
  const u128 head_rows = head_rows_per_worker(seq_len, workers, head, cfg);
  return tokens * cfg.activation_bytes_per_token +
         head_rows * cfg.vocab_size * cfg.bytes_per_logit;
}

void check(std::uint64_t workers, const CapacityConfig& cfg) {
  if (workers == 0) throw ConfigError("capacity model needs at least one worker");
  if (cfg.chunk_len == 0) throw ConfigError("chunk_len must be >= 1");
}

}  // namespace

std::uint64_t head_rows_per_worker(std::uint64_t seq_len, std::uint64_t workers,
                                   HeadStrategy::Kind head, const CapacityConfig& cfg) {
  check(workers, cfg);
  // The busiest worker holds ceil(L / W) rows; the last token lives on it
  // or on a worker that is no larger.
  const std::uint64_t rows = ceil_div(seq_len, workers);
  switch (head) {
    case HeadStrategy::Kind::kFull:
      return rows;
    case HeadStrategy::Kind::kChunked:
      return std::min(rows, cfg.chunk_len);
    case HeadStrategy::Kind::kLogitsMasked:
      return seq_len == 0 ? 0 : 1;
  }
  return rows;
}

std::uint64_t worker_footprint_bytes(std::uint64_t seq_len, std::uint64_t workers,
                                     HeadStrategy::Kind head, const CapacityConfig& cfg) {
  check(workers, cfg);
  const u128 f = footprint_wide(seq_len, workers, head, cfg);
  if (f > UINT64_MAX) throw RangeError("worker footprint exceeds 2^64 bytes");
  return static_cast<std::uint64_t>(f);
}

std::uint64_t max_seq_len(std::uint64_t budget_bytes, std::uint64_t workers,
                          HeadStrategy::Kind head, const CapacityConfig& cfg) {
  check(workers, cfg);
  if (budget_bytes == 0) throw RangeError("memory budget must be positive");
  auto fits = [&](std::uint64_t len) {
    return footprint_wide(len, workers, head, cfg) <= u128{budget_bytes};
  };
  if (!fits(1)) {
    throw RangeError("budget of " + std::to_string(budget_bytes) +
                     " bytes is below the one-token footprint");
  }
  constexpr std::uint64_t kCeiling = std::uint64_t{1} << 62;
  std::uint64_t lo = 1;
  while (lo < kCeiling && fits(lo * 2)) lo *= 2;
  if (lo >= kCeiling) return kCeiling;
  std::uint64_t hi = lo * 2;  // fits(lo) && !fits(hi)
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  return lo;
}

CapacityCalibration calibrate_capacity(std::uint64_t full_cap, std::uint64_t masked_cap,
                                       std::uint64_t workers, std::uint64_t vocab_size,
                                       std::uint64_t bytes_per_logit) {
  if (workers == 0 || vocab_size == 0 || bytes_per_logit == 0) {
    throw ConfigError("calibration needs positive workers, vocab and element size");
  }
  const std::uint64_t f = ceil_div(full_cap, workers), m = ceil_div(masked_cap, workers);
  if (f == 0 || m <= f) throw ConfigError("masked cap must exceed the full-head cap");
  // Full:   f * (a + h) = B
  // Masked: m * a + h   = B      =>  a = h * (f - 1) / (m - f)
  const long double h = static_cast<long double>(vocab_size) * bytes_per_logit;
  const long double a = h * static_cast<long double>(f - 1) / static_cast<long double>(m - f);
  CapacityCalibration c;
  c.activation_bytes_per_token = static_cast<std::uint64_t>(std::llround(a));
  const u128 budget = u128{f} * (u128{c.activation_bytes_per_token} + u128{vocab_size} *
                                                                         bytes_per_logit);
  if (budget > UINT64_MAX) throw RangeError("calibrated budget exceeds 2^64 bytes");
  c.budget_bytes = static_cast<std::uint64_t>(budget);
  return c;
}

}  // namespace longctx
