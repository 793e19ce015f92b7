// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "longctx/context_parallel.h"
#include "longctx/model.h"
#include "longctx/tokens.h"

namespace longctx {

struct GenerationRequest {
  TokenList prompt;
  std::size_t max_new = 1;
  TokenId eos_token = kEosToken;

  void validate() const;
};

// Prompt followed by pads up to the full output length (and any shard
// alignment slack). Slots from `frontier` on always hold pad_token.
class FixedLengthBuffer {
 public:
  // total_len defaults to prompt + max_new; a larger value adds trailing
  // pads that never get written.
  FixedLengthBuffer(const GenerationRequest& req, TokenId pad_token = kPadToken,
                    std::size_t total_len = 0);

  std::span<const TokenId> tokens() const { return tokens_; }
  std::size_t prompt_len() const { return prompt_len_; }
  std::size_t frontier() const { return frontier_; }
  std::size_t limit() const { return prompt_len_ + max_new_; }
  TokenId pad_token() const { return pad_; }
  TokenId eos_token() const { return eos_; }
  bool full() const { return frontier_ == limit(); }

  // Writes at the frontier and advances it. Overrun is a bug in the caller.
  void write(TokenId token);
  std::vector<TokenId> generated() const;
  void check_invariants() const;

 private:
  TokenList tokens_;
  std::size_t prompt_len_, max_new_, frontier_;
  TokenId pad_, eos_;
};

// What the decoding loops need from a language model. Implementations count
// every forward they perform.
class DecodeModel {
 public:
  virtual ~DecodeModel() = default;
  virtual std::size_t vocab_size() const = 0;

  // Logits [1 x V] at `row` of a context-parallel forward over the whole
  // buffer, where slots >= valid_len are pads hidden from attention.
  virtual Tensor fixed_logits(std::span<const TokenId> buffer, std::size_t valid_len,
                              std::size_t row, const ShardPlan& plan,
                              RingTransport& transport) = 0;

  // Incremental interface: reset, then feed tokens; each call returns the
  // logits after its last token.
  virtual void reset_cache(std::size_t capacity) = 0;
  virtual Tensor extend(std::span<const TokenId> tokens) = 0;

  // Logits after the last token of `prefix`, recomputed from scratch.
  virtual Tensor recompute(std::span<const TokenId> prefix) = 0;

  std::size_t forwards() const { return forwards_; }
  void reset_forwards() { forwards_ = 0; }

 protected:
  void count_forward() { ++forwards_; }

 private:
  std::size_t forwards_ = 0;
};

// The toy transformer behind the decode interface; logits always come from
// the logits-masked head.
class ToyDecodeModel final : public DecodeModel {
 public:
  explicit ToyDecodeModel(const Model& model) : model_(model) {}
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  Tensor fixed_logits(std::span<const TokenId> buffer, std::size_t valid_len, std::size_t row,
                      const ShardPlan& plan, RingTransport& transport) override;
  void reset_cache(std::size_t capacity) override;
  Tensor extend(std::span<const TokenId> tokens) override;
  Tensor recompute(std::span<const TokenId> prefix) override;

 private:
  const Model& model_;
  std::optional<KvCache> cache_;
};

// Emits script[k] on its k-th forward (eos once the script runs out).
class ScriptedModel final : public DecodeModel {
 public:
  ScriptedModel(std::vector<TokenId> script, std::size_t vocab, TokenId eos = kEosToken)
      : script_(std::move(script)), vocab_(vocab), eos_(eos) {}
  std::size_t vocab_size() const override { return vocab_; }
  Tensor fixed_logits(std::span<const TokenId>, std::size_t, std::size_t, const ShardPlan&,
                      RingTransport&) override {
    return next();
  }
  void reset_cache(std::size_t) override {}
  Tensor extend(std::span<const TokenId>) override { return next(); }
  Tensor recompute(std::span<const TokenId>) override { return next(); }

 private:
  Tensor next();
  std::vector<TokenId> script_;
  std::size_t vocab_;
  TokenId eos_;
};

// Smallest plan over which a request's buffer can be sharded: prompt +
// max_new tokens split across `world_size` ranks.
ShardPlan plan_for_request(const GenerationRequest& req, std::size_t world_size);

// Greedy generation over a fixed-length padded buffer, re-running the full
// context-parallel forward every step. The plan may be longer than
// prompt + max_new; the extra slots stay pads.
std::vector<TokenId> generate_fixed(DecodeModel& model, const GenerationRequest& req,
                                    const ShardPlan& plan, RingTransport& transport);

// Greedy generation on one worker; with use_cache each step feeds only the
// newest token, otherwise the whole prefix is recomputed.
std::vector<TokenId> generate_incremental(DecodeModel& model, const GenerationRequest& req,
                                          bool use_cache = true);

}  // namespace longctx
