// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include "longctx/lm_head.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "longctx/error.h"
#include "longctx/kernels.h"

namespace longctx {
namespace {

LogitRowMeter& default_meter() {
  static LogitRowMeter m;
  return m;
}

// A logit buffer registered with a meter for its lifetime.
class MeteredRows {
 public:
  MeteredRows(LogitRowMeter& meter, std::size_t rows, std::size_t vocab)
      : meter_(meter), rows_(rows) {
    meter_.acquire(rows_);
    try {
      t_ = Tensor({rows, vocab});
    } catch (...) {
      meter_.release(rows_);
      throw;
    }
  }
  ~MeteredRows() { meter_.release(rows_); }
  MeteredRows(const MeteredRows&) = delete;
  MeteredRows& operator=(const MeteredRows&) = delete;
  Tensor& tensor() { return t_; }

 private:
  LogitRowMeter& meter_;
  std::size_t rows_;
  Tensor t_;
};

void check_shapes(const Tensor& hidden, const Tensor& unembed) {
  if (hidden.rank() != 2 || unembed.rank() != 2 || hidden.cols() != unembed.rows()) {
    throw DimensionError("head expects hidden [L x d] and unembed [d x V], got " +
                         hidden.shape_string() + " and " + unembed.shape_string());
  }
}

// Runs the head pass by pass. `take` receives each freshly computed buffer
// and may move the tensor out of it.
template <typename Take>
HeadStats run_passes(const Tensor& hidden, const Tensor& unembed, const HeadStrategy& strategy,
                     LogitRowMeter* meter, Take&& take) {
  check_shapes(hidden, unembed);
  const std::size_t len = hidden.rows(), d = hidden.cols(), vocab = unembed.cols();
  strategy.validate(len);
  LogitRowMeter& m = meter ? *meter : default_meter();
  const std::size_t base_peak = m.live();
  std::size_t local_peak = 0;
  HeadStats stats;
  const ConstMatrixView w = view(unembed);

  auto pass = [&](ConstMatrixView a, std::size_t first_row) {
    MeteredRows buf(m, a.rows, vocab);
    local_peak = std::max(local_peak, m.live() - base_peak);
    gemm(a, w, view(buf.tensor()));
    ++stats.passes;
    take(first_row, buf.tensor());
  };

  const float* h = hidden.data().data();
  switch (strategy.kind()) {
    case HeadStrategy::Kind::kFull:
      if (len > 0) pass({h, len, d, d}, 0);
      break;
    case HeadStrategy::Kind::kChunked:
      for (std::size_t r = 0; r < len; r += strategy.chunk_len()) {
        const std::size_t n = std::min(strategy.chunk_len(), len - r);
        pass({h + r * d, n, d, d}, r);
      }
      break;
    case HeadStrategy::Kind::kLogitsMasked: {
      const auto& pos = strategy.positions();
      Tensor picked({pos.size(), d});
      for (std::size_t i = 0; i < pos.size(); ++i) {
        std::memcpy(picked.row(i).data(), hidden.row(pos[i]).data(), d * sizeof(float));
      }
      pass(view(picked), pos.front());
      break;
    }
  }
  stats.peak_logit_rows = local_peak;
  stats.flops = head_flops(strategy.selected_rows(len), d, vocab);
  return stats;
}

}  // namespace

HeadStrategy HeadStrategy::chunked(std::size_t chunk_len) {
  if (chunk_len == 0) throw ConfigError("chunk_len must be >= 1");
  return HeadStrategy(Kind::kChunked, chunk_len, {});
}

HeadStrategy HeadStrategy::logits_masked(std::vector<std::size_t> positions) {
  if (positions.empty()) throw EmptySelectionError("logits-masked head needs at least one position");
  for (std::size_t i = 1; i < positions.size(); ++i) {
    if (positions[i] <= positions[i - 1]) {
      throw ConfigError("logits-masked positions must be strictly increasing");
    }
  }
  return HeadStrategy(Kind::kLogitsMasked, 0, std::move(positions));
}

std::string HeadStrategy::name() const {
  switch (kind_) {
    case Kind::kFull:
      return "full";
    case Kind::kChunked:
      return "chunked";
    case Kind::kLogitsMasked:
      return "masked";
  }
  return "?";
}

HeadStrategy::Kind parse_head_kind(const std::string& s) {
  if (s == "full") return HeadStrategy::Kind::kFull;
  if (s == "chunked") return HeadStrategy::Kind::kChunked;
  if (s == "masked") return HeadStrategy::Kind::kLogitsMasked;
  throw ConfigError("unknown head strategy '" + s + "' (full|chunked|masked)");
}

void HeadStrategy::validate(std::size_t seq_len) const {
  if (kind_ == Kind::kChunked && chunk_len_ == 0) throw ConfigError("chunk_len must be >= 1");
  if (kind_ != Kind::kLogitsMasked) return;
  if (positions_.empty()) throw EmptySelectionError("logits-masked head needs at least one position");
  if (positions_.back() >= seq_len) {
    throw IndexError("logits-masked position " + std::to_string(positions_.back()) +
                     " outside a sequence of " + std::to_string(seq_len));
  }
}

std::size_t HeadStrategy::selected_rows(std::size_t seq_len) const {
  return kind_ == Kind::kLogitsMasked ? positions_.size() : seq_len;
}

void LogitRowMeter::acquire(std::size_t rows) {
  const std::size_t now = live_.fetch_add(rows) + rows;
  std::size_t prev = peak_.load();
  while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
  }
}

void LogitRowMeter::release(std::size_t rows) { live_.fetch_sub(rows); }

std::uint64_t head_flops(std::size_t rows, std::size_t d_model, std::size_t vocab) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(std::uint64_t{rows}, std::uint64_t{d_model}, &out) ||
      __builtin_mul_overflow(out, std::uint64_t{vocab}, &out) ||
      __builtin_mul_overflow(out, std::uint64_t{2}, &out)) {
    throw RangeError("head FLOP count overflows 64 bits");
  }
  return out;
}

HeadStats stream_logits(const Tensor& hidden, const Tensor& unembed, const HeadStrategy& strategy,
                        const std::function<void(std::size_t, const Tensor&)>& sink,
                        LogitRowMeter* meter) {
  return run_passes(hidden, unembed, strategy, meter,
                    [&](std::size_t first, Tensor& chunk) { sink(first, chunk); });
}

HeadOutput compute_logits(const Tensor& hidden, const Tensor& unembed,
                          const HeadStrategy& strategy, LogitRowMeter* meter) {
  HeadOutput out;
  const bool chunked = strategy.kind() == HeadStrategy::Kind::kChunked;
  if (chunked) {
    check_shapes(hidden, unembed);
    out.logits = Tensor({hidden.rows(), unembed.cols()});
  }
  out.stats = run_passes(hidden, unembed, strategy, meter, [&](std::size_t first, Tensor& chunk) {
    if (chunked) {
      std::memcpy(out.logits.row(first).data(), chunk.data().data(), chunk.size() * sizeof(float));
    } else {
      out.logits = std::move(chunk);
    }
  });
  if (strategy.kind() == HeadStrategy::Kind::kLogitsMasked) {
    out.rows = strategy.positions();
  } else {
    out.rows.resize(hidden.rows());
    for (std::size_t i = 0; i < out.rows.size(); ++i) out.rows[i] = i;
  }
  if (out.logits.empty()) out.logits = Tensor({0, unembed.cols()});
  return out;
}

std::vector<TokenId> head_argmax(const Tensor& hidden, const Tensor& unembed,
                                 const HeadStrategy& strategy, HeadStats* stats) {
  std::vector<TokenId> ids;
  ids.reserve(strategy.selected_rows(hidden.rank() == 2 ? hidden.rows() : 0));
  const HeadStats s = stream_logits(hidden, unembed, strategy, [&](std::size_t, const Tensor& c) {
    for (std::size_t i = 0; i < c.rows(); ++i) ids.push_back(static_cast<TokenId>(argmax(c.row(i))));
  });
  if (stats) *stats = s;
  return ids;
}

double MemoryEstimate::gigabytes() const {
  return static_cast<double>(logit_bytes) / static_cast<double>(kBytesPerGigabyte);
}

MemoryEstimate estimate_logit_memory(std::uint64_t rows, std::uint64_t vocab,
                                     std::uint64_t bytes_per, std::uint64_t reference_rows) {
  if (rows == 0 || vocab == 0 || bytes_per == 0) {
    throw RangeError("logit memory needs positive rows, vocab and element size");
  }
  auto product = [&](std::uint64_t r) {
    std::uint64_t out = 0;
    if (__builtin_mul_overflow(r, vocab, &out) || __builtin_mul_overflow(out, bytes_per, &out)) {
      throw RangeError("logit byte count exceeds 2^64");
    }
    return out;
  };
  MemoryEstimate e;
  e.logit_bytes = product(rows);
  const std::uint64_t ref_rows = reference_rows == 0 ? rows : reference_rows;
  product(ref_rows);  // the reference must be representable too
  // Both byte counts share the vocab * bytes_per factor, so the ratio is the
  // row ratio, which is exact whenever it is representable.
  e.reduction_factor = static_cast<double>(ref_rows) / static_cast<double>(rows);
  return e;
}

std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const TokenId> targets) {
  if (logits.rank() != 2 || logits.rows() != targets.size()) {
    throw DimensionError("one target per logit row required");
  }
  std::vector<double> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto row = logits.row(i);
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= row.size()) {
      throw IndexError("target " + std::to_string(targets[i]) + " outside the vocabulary");
    }
    double mx = row[0];
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
    out[i] = mx + std::log(sum) - static_cast<double>(row[static_cast<std::size_t>(targets[i])]);
  }
  return out;
}

double loss_over_window(const Tensor& hidden, const Tensor& unembed,
                        std::span<const TokenId> targets, std::size_t window) {
  if (window == 0) throw EmptyWindowError("loss window must cover at least one position");
  check_shapes(hidden, unembed);
  const std::size_t len = hidden.rows();
  if (window > len) {
    throw RangeError("loss window " + std::to_string(window) + " exceeds sequence length " +
                     std::to_string(len));
  }
  if (targets.size() != window) throw DimensionError("need exactly one target per window row");
  std::vector<std::size_t> pos(window);
  for (std::size_t i = 0; i < window; ++i) pos[i] = len - window + i;
  const HeadOutput head = compute_logits(hidden, unembed, HeadStrategy::logits_masked(pos));
  const std::vector<double> ce = cross_entropy_rows(head.logits, targets);
  double total = 0.0;
  for (double v : ce) total += v;
  return total / static_cast<double>(window);
}

}  // namespace longctx
