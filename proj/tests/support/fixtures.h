// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

// Shared plumbing for tests that drive the ring.

#pragma once

#include <random>
#include <vector>

#include "longctx/context_parallel.h"
#include "longctx/decode.h"

namespace longctx::testing {

inline std::vector<QkvRows> split_qkv(const Tensor& q, const Tensor& k, const Tensor& v,
                                      const ShardPlan& plan) {
  std::vector<QkvRows> shards;
  for (const TokenRange& r : plan.ranges) {
    shards.push_back({q.slice_rows(r.start, r.end), k.slice_rows(r.start, r.end),
                      v.slice_rows(r.start, r.end)});
  }
  return shards;
}

inline Tensor ring_full(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        std::size_t world, const AttentionMask& mask, RingTransport& transport,
                        Schedule schedule = Schedule::kThreaded) {
  const ShardPlan plan = plan_shards(q.rows(), world);
  const auto parts = ring_attention(plan, split_qkv(q, k, v, plan), heads, mask, transport,
                                    schedule);
  return concat_rows(parts);
}

// Fills every pad slot with junk before delegating.
class PadScrambler final : public DecodeModel {
 public:
  PadScrambler(DecodeModel& inner, std::uint64_t seed) : inner_(inner), rng_(seed) {}
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  Tensor fixed_logits(std::span<const TokenId> buffer, std::size_t valid_len, std::size_t row,
                      const ShardPlan& plan, RingTransport& transport) override {
    TokenList junk(buffer.begin(), buffer.end());
    for (std::size_t i = valid_len; i < junk.size(); ++i)
      junk[i] = static_cast<TokenId>(rng_() % inner_.vocab_size());
    return inner_.fixed_logits(junk, valid_len, row, plan, transport);
  }
  void reset_cache(std::size_t c) override { inner_.reset_cache(c); }
  Tensor extend(std::span<const TokenId> t) override { return inner_.extend(t); }
  Tensor recompute(std::span<const TokenId> p) override { return inner_.recompute(p); }

 private:
  DecodeModel& inner_;
  std::mt19937_64 rng_;
};

}  // namespace longctx::testing
