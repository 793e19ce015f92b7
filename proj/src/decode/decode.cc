// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include "longctx/decode.h"

#include <string>

#include "longctx/error.h"
#include "longctx/kernels.h"
#include "longctx/lm_head.h"

namespace longctx {
namespace {

TokenId greedy(const Tensor& logits) {
  if (logits.rank() != 2 || logits.rows() != 1) {
    throw DimensionError("decode expects a single logit row, got " + logits.shape_string());
  }
  return static_cast<TokenId>(argmax(logits.row(0)));
}

std::vector<std::size_t> iota(std::size_t n, std::size_t start = 0) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = start + i;
  return p;
}

}  // namespace

void GenerationRequest::validate() const {
  if (prompt.empty()) throw ConfigError("generation prompt must be non-empty");
  if (max_new == 0) throw ConfigError("max_new must be >= 1");
}

FixedLengthBuffer::FixedLengthBuffer(const GenerationRequest& req, TokenId pad_token,
                                     std::size_t total_len)
    : prompt_len_(req.prompt.size()),
      max_new_(req.max_new),
      frontier_(req.prompt.size()),
      pad_(pad_token),
      eos_(req.eos_token) {
  req.validate();
  const std::size_t need = prompt_len_ + max_new_;
  if (total_len == 0) total_len = need;
  if (total_len < need) {
    throw DimensionError("buffer of " + std::to_string(total_len) + " slots cannot hold " +
                         std::to_string(need) + " tokens");
  }
  tokens_.assign(total_len, pad_);
  std::copy(req.prompt.begin(), req.prompt.end(), tokens_.begin());
}

void FixedLengthBuffer::write(TokenId token) {
  if (frontier_ >= limit()) {
    throw InvariantError("fixed-length buffer overrun at slot " + std::to_string(frontier_));
  }
  tokens_[frontier_++] = token;
}

std::vector<TokenId> FixedLengthBuffer::generated() const {
  return {tokens_.begin() + static_cast<std::ptrdiff_t>(prompt_len_),
          tokens_.begin() + static_cast<std::ptrdiff_t>(frontier_)};
}

void FixedLengthBuffer::check_invariants() const {
  if (frontier_ < prompt_len_ || frontier_ > limit()) {
    throw InvariantError("frontier " + std::to_string(frontier_) + " outside [" +
                         std::to_string(prompt_len_) + ", " + std::to_string(limit()) + "]");
  }
  for (std::size_t i = frontier_; i < tokens_.size(); ++i) {
    if (tokens_[i] != pad_) throw InvariantError("non-pad token past the frontier");
  }
}

Tensor ToyDecodeModel::fixed_logits(std::span<const TokenId> buffer, std::size_t valid_len,
                                    std::size_t row, const ShardPlan& plan,
                                    RingTransport& transport) {
  count_forward();
  DistributedForwardOptions opt;
  opt.mask = AttentionMask::causal_with_padding(buffer.size(), valid_len);
  // Pads keep counting positions after the valid prefix.
  opt.positions = iota(buffer.size());
  const Tensor hidden = run_distributed_forward(model_, buffer, plan, transport, opt);
  return compute_logits(hidden, model_.weights().unembed, HeadStrategy::logits_masked({row}))
      .logits;
}

void ToyDecodeModel::reset_cache(std::size_t capacity) { cache_ = model_.make_cache(capacity); }

Tensor ToyDecodeModel::extend(std::span<const TokenId> tokens) {
  if (!cache_) throw InvariantError("extend called before reset_cache");
  if (tokens.empty()) throw DimensionError("extend needs at least one token");
  count_forward();
  const Tensor h = model_.step(model_.embed(tokens), *cache_);
  return compute_logits(h, model_.weights().unembed,
                        HeadStrategy::logits_masked({tokens.size() - 1}))
      .logits;
}

Tensor ToyDecodeModel::recompute(std::span<const TokenId> prefix) {
  if (prefix.empty()) throw DimensionError("recompute needs a non-empty prefix");
  count_forward();
  const Tensor h = model_.forward(model_.embed(prefix), AttentionMask::causal(prefix.size()),
                                  iota(prefix.size()));
  return compute_logits(h, model_.weights().unembed,
                        HeadStrategy::logits_masked({prefix.size() - 1}))
      .logits;
}

Tensor ScriptedModel::next() {
  const std::size_t k = forwards();
  count_forward();
  const TokenId tok = k < script_.size() ? script_[k] : eos_;
  if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_) {
    throw IndexError("scripted token " + std::to_string(tok) + " outside the vocabulary");
  }
  Tensor logits({1, vocab_});
  logits.at(0, static_cast<std::size_t>(tok)) = 1.0f;
  return logits;
}

ShardPlan plan_for_request(const GenerationRequest& req, std::size_t world_size) {
  req.validate();
  return plan_shards(req.prompt.size() + req.max_new, world_size);
}

std::vector<TokenId> generate_fixed(DecodeModel& model, const GenerationRequest& req,
                                    const ShardPlan& plan, RingTransport& transport) {
  plan.validate();
  FixedLengthBuffer buf(req, kPadToken, plan.seq_len());
  while (!buf.full()) {
    // The next token is predicted from the last filled slot.
    const Tensor logits = model.fixed_logits(buf.tokens(), buf.frontier(), buf.frontier() - 1,
                                             plan, transport);
    const TokenId tok = greedy(logits);
    if (tok == req.eos_token) break;
    buf.write(tok);
  }
  buf.check_invariants();
  return buf.generated();
}

std::vector<TokenId> generate_incremental(DecodeModel& model, const GenerationRequest& req,
                                          bool use_cache) {
  req.validate();
  TokenList seq = req.prompt;
  std::vector<TokenId> out;
  if (use_cache) model.reset_cache(req.prompt.size() + req.max_new);
  Tensor logits = use_cache ? model.extend(seq) : model.recompute(seq);
  while (true) {
    const TokenId tok = greedy(logits);
    if (tok == req.eos_token) break;
    out.push_back(tok);
    seq.push_back(tok);
    if (out.size() == req.max_new) break;
    logits = use_cache ? model.extend(std::span(seq).last(1)) : model.recompute(seq);
  }
  return out;
}

}  // namespace longctx
