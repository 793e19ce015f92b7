// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

// Fast cross-implementation checks behind `longctx verify`. The unit and
// acceptance tests hold the independent oracles; these catch a broken build
// or machine without needing the test tree.

#include <chrono>
#include <functional>

#include "longctx/context_parallel.h"
#include "longctx/decode.h"
#include "longctx/error.h"
#include "longctx/harness.h"
#include "longctx/packing.h"
#include "longctx/random.h"
#include "longctx/vision.h"

namespace longctx {
namespace {

struct Failure {
  std::string why;
};

void expect(bool ok, const std::string& why) {
  if (!ok) throw Failure{why};
}

ModelConfig small_model() {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.head_dim = 16;
  c.vocab_size = 48;
  c.seed = 17;
  return c;
}

TokenList random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  TokenList t(n);
  for (auto& x : t) x = static_cast<TokenId>(kFirstContentToken + rng.below(vocab - 3));
  return t;
}

Tensor ring_run(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                std::size_t world, const AttentionMask& mask, RingTransport& t) {
  const ShardPlan plan = plan_shards(q.rows(), world);
  std::vector<QkvRows> shards;
  for (const auto& r : plan.ranges) {
    shards.push_back({q.slice_rows(r.start, r.end), k.slice_rows(r.start, r.end),
                      v.slice_rows(r.start, r.end)});
  }
  return concat_rows(ring_attention(plan, shards, heads, mask, t));
}

void suite_ring() {
  Rng rng(1);
  for (std::size_t w : {1u, 2u, 3u, 4u}) {
    const Tensor q = uniform_tensor({64, 32}, rng, -1.0f, 1.0f), k = uniform_tensor({64, 32}, rng, -1.0f, 1.0f),
                 v = uniform_tensor({64, 32}, rng, -1.0f, 1.0f);
    InProcTransport t(w);
    const auto mask = AttentionMask::causal(64);
    const float err = max_abs_diff(ring_run(q, k, v, 2, w, mask, t),
                                   local_attention(q, k, v, 2, mask));
    expect(err <= 1e-5f, "ring vs local attention differs by " + std::to_string(err) +
                             " at W=" + std::to_string(w));
  }
}

void suite_head() {
  Rng rng(2);
  for (int c = 0; c < 20; ++c) {
    const std::size_t len = 1 + rng.below(32), d = 1 + rng.below(16), vocab = 1 + rng.below(32);
    const Tensor h = uniform_tensor({len, d}, rng, -1.0f, 1.0f), w = uniform_tensor({d, vocab}, rng, -1.0f, 1.0f);
    const Tensor full = compute_logits(h, w, HeadStrategy::full()).logits;
    const std::size_t chunk = 1 + rng.below(len);
    expect(bitwise_equal(compute_logits(h, w, HeadStrategy::chunked(chunk)).logits, full),
           "chunked head differs from full");
    const Tensor last = compute_logits(h, w, HeadStrategy::logits_masked({len - 1})).logits;
    expect(bitwise_equal(last, full.slice_rows(len - 1, len)), "masked head differs from full");
  }
}

void suite_memory() {
  const auto big = estimate_logit_memory(1'000'000, 100'000, 4);
  const auto one = estimate_logit_memory(1, 100'000, 4, 1'000'000);
  expect(big.logit_bytes == 400'000'000'000ull && big.gigabytes() == 400.0, "400 GB estimate");
  expect(one.logit_bytes == 400'000ull && one.gigabytes() == 0.0004 &&
             one.reduction_factor == 1e6,
         "0.0004 GB estimate");
  const auto cal = calibrate_capacity(100'000, 417'000, 8, 100'000, 4);
  CapacityConfig cc{cal.activation_bytes_per_token, 100'000, 4, kDefaultChunkLen};
  const auto full = max_seq_len(cal.budget_bytes, 8, HeadStrategy::Kind::kFull, cc);
  const auto masked = max_seq_len(cal.budget_bytes, 8, HeadStrategy::Kind::kLogitsMasked, cc);
  expect(full == 100'000, "calibrated full cap is " + std::to_string(full));
  expect(masked >= 4 * full, "masked cap " + std::to_string(masked) + " under 4x");
  expect(max_seq_len(cal.budget_bytes, 16, HeadStrategy::Kind::kLogitsMasked, cc) == 2 * masked,
         "capacity does not double with workers");
}

void suite_packing() {
  const Model m(small_model());
  Rng rng(3);
  const TokenList a = random_tokens(rng, 7, 48), b = random_tokens(rng, 5, 48);
  const auto packs = pack_samples({{a, "x", {}}, {b, "x", {}}}, 16, PackingMode::kResetIsolated);
  expect(packs.size() == 1, "samples did not share a pack");
  const auto& p = packs[0];
  const Tensor packed = m.forward(m.embed(p.tokens), build_attention_mask(p), p.position_ids);
  std::vector<std::size_t> pos(b.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  const Tensor alone = m.forward(m.embed(b), AttentionMask::causal(b.size()), pos);
  const float err = max_abs_diff(packed.slice_rows(7, 12), alone);
  expect(err <= 1e-5f, "reset packing leaks across segments: " + std::to_string(err));
}

void suite_decode() {
  const Model m(small_model());
  ToyDecodeModel toy(m);
  Rng rng(4);
  for (int i = 0; i < 4; ++i) {
    const GenerationRequest req{random_tokens(rng, 3 + rng.below(6), 48), 5, kEosToken};
    const auto inc = generate_incremental(toy, req);
    for (std::size_t w : {1u, 2u}) {
      InProcTransport t(w);
      expect(generate_fixed(toy, req, plan_for_request(req, w), t) == inc,
             "fixed-length decode differs from incremental at W=" + std::to_string(w));
    }
  }
}

void suite_vision() {
  const TileGrid g = select_tile_grid(1344, 896, kMaxGridTiles);
  expect(g.rows * g.cols == 6 && g.include_thumbnail, "tile grid for 1344x896");
  const VisionEncoder enc{VisionConfig{}};
  const VisualTokens vt = enc.encode_image(Image::filled(900, 600, 0.2f, 0.4f, 0.6f));
  const TileGrid g2 = select_tile_grid(900, 600, kMaxGridTiles);
  expect(vt.features.rows() == g2.total_tiles() * kTokensPerTile, "visual token count");
  expect(frame_token_budget(4096) == 1'048'576, "frame budget for 4096 frames");
}

void suite_wire() {
  Rng rng(5);
  const Tensor q = uniform_tensor({48, 16}, rng, -1.0f, 1.0f), k = uniform_tensor({48, 16}, rng, -1.0f, 1.0f),
               v = uniform_tensor({48, 16}, rng, -1.0f, 1.0f);
  const auto mask = AttentionMask::causal(48);
  InProcTransport inproc(3);
  TcpTransport tcp(3);
  CapturingTransport cap(tcp);
  expect(bitwise_equal(ring_run(q, k, v, 1, 3, mask, inproc), ring_run(q, k, v, 1, 3, mask, cap)),
         "tcp and inproc rings disagree");
  const auto frames = cap.captured();
  expect(frames.size() == 6, "expected W(W-1) frames");
  for (const auto& f : frames) expect(encode_frame(decode_frame(f)) == f, "frame round trip");
}

void suite_fault() {
  Rng rng(6);
  const Tensor x = uniform_tensor({24, 16}, rng, -1.0f, 1.0f);
  InProcTransport inner(4);
  FaultyTransport faulty(inner, 2, 0);
  try {
    ring_run(x, x, x, 1, 4, AttentionMask::causal(24), faulty);
  } catch (const RingBrokenError& e) {
    expect(e.dead_rank() == 2, "ring failure blamed rank " + std::to_string(e.dead_rank()));
    return;
  }
  throw Failure{"dead rank went unnoticed"};
}

void suite_checkpoint() {
  const Model m(small_model());
  auto bytes = encode_checkpoint(m);
  expect(encode_checkpoint(decode_checkpoint(bytes)) == bytes, "checkpoint round trip");
  bytes.resize(bytes.size() - 5);
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError&) {
    return;
  }
  throw Failure{"truncated checkpoint was accepted"};
}

}  // namespace

std::vector<SuiteResult> run_verify_suites() {
  const std::vector<std::pair<std::string, std::function<void()>>> suites{
      {"ring_attention", suite_ring},     {"lm_head", suite_head},
      {"memory_model", suite_memory},     {"packing", suite_packing},
      {"decode", suite_decode},           {"vision", suite_vision},
      {"wire_format", suite_wire},        {"fault_injection", suite_fault},
      {"checkpoint", suite_checkpoint},
  };
  std::vector<SuiteResult> out;
  for (const auto& [name, fn] : suites) {
    SuiteResult r{name, false, "", 0};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn();
      r.passed = true;
    } catch (const Failure& f) {
      r.detail = f.why;
    } catch (const std::exception& e) {
      r.detail = std::string("unexpected error: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace longctx
