// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "longctx/context_parallel.h"
#include "longctx/error.h"
#include "support/fixtures.h"
#include "support/oracles.h"

using namespace longctx;
using namespace longctx::testing;

namespace {

struct Qkv {
  Tensor q, k, v;
};

Qkv random_qkv(std::size_t len, std::size_t width, std::uint64_t seed) {
  return {random_tensor({len, width}, seed), random_tensor({len, width}, seed + 1),
          random_tensor({len, width}, seed + 2)};
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.head_dim = 16;
  c.vocab_size = 50;
  return c;
}

}  // namespace

TEST_CASE("shard plans") {
  const auto even = plan_shards(8, 2);
  CHECK(even.ranges == std::vector<TokenRange>{{0, 4}, {4, 8}});
  const auto odd = plan_shards(9, 2);
  CHECK(odd.ranges == std::vector<TokenRange>{{0, 5}, {5, 9}});
  const auto big = plan_shards(1048576, 8);
  for (std::size_t r = 0; r < 8; ++r) CHECK(big.ranges[r].size() == 131072);
  const auto lumpy = plan_shards(11, 4);
  CHECK(lumpy.ranges == std::vector<TokenRange>{{0, 3}, {3, 6}, {6, 9}, {9, 11}});
  CHECK_THROWS_AS(plan_shards(3, 4), UnderfullError);
  CHECK_THROWS_AS(plan_shards(3, 0), ConfigError);
}

TEST_CASE("frame wire layout is byte exact") {
  RingFrame f{3, 2, {10, 12}, Tensor::from_rows({{1.0f, 2.0f}, {3.0f, 4.0f}}),
              Tensor::from_rows({{-1.0f, 0.5f}, {8.0f, 9.0f}})};
  const auto bytes = encode_frame(f);
  REQUIRE(bytes.size() == 25 + 32);
  auto rd = [&](std::size_t off, std::size_t n) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t{bytes[off + i]} << (8 * i);
    return v;
  };
  CHECK(rd(0, 4) == 21 + 32);
  CHECK(rd(4, 1) == 1);
  CHECK(rd(5, 2) == 3);
  CHECK(rd(7, 2) == 2);
  CHECK(rd(9, 8) == 10);
  CHECK(rd(17, 8) == 12);
  float first_k, first_v;
  std::memcpy(&first_k, &bytes[25], 4);
  std::memcpy(&first_v, &bytes[25 + 16], 4);
  CHECK(first_k == 1.0f);
  CHECK(first_v == -1.0f);

  const RingFrame back = decode_frame(bytes);
  CHECK(back.origin_rank == 3);
  CHECK(back.hop == 2);
  CHECK(back.range == TokenRange{10, 12});
  CHECK(bitwise_equal(back.k_block, f.k_block));
  CHECK(bitwise_equal(back.v_block, f.v_block));
  CHECK(encode_frame(back) == bytes);

  auto bad = bytes;
  bad[4] = 7;
  CHECK_THROWS_AS(decode_frame(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_frame(bad), FormatError);
  bad = bytes;
  bad[17] = 11;  // range of 1 row but payload for 2 rows of width 2 -> width 4, still valid
  CHECK(decode_frame(bad).k_block.shape() == std::vector<std::size_t>{1, 4});
  bad[17] = 13;  // 3 rows do not divide the payload
  CHECK_THROWS_AS(decode_frame(bad), FormatError);
  f.v_block = Tensor({3, 2});
  CHECK_THROWS_AS(encode_frame(f), DimensionError);
}

TEST_CASE("ring attention matches the direct oracle") {
  for (std::size_t len : {8u, 64u, 256u}) {
    const Qkv x = random_qkv(len, 32, len);
    const Tensor want_causal = direct_multihead(x.q, x.k, x.v, 2, causal_rule);
    const Tensor want_full =
        direct_multihead(x.q, x.k, x.v, 2, [](std::size_t, std::size_t) { return true; });
    for (std::size_t w : {1u, 2u, 3u, 4u, 8u}) {
      InProcTransport t(w);
      CAPTURE(len);
      CAPTURE(w);
      CHECK(max_abs_diff(ring_full(x.q, x.k, x.v, 2, w, AttentionMask::causal(len), t),
                         want_causal) <= 1e-5f);
      CHECK(max_abs_diff(ring_full(x.q, x.k, x.v, 2, w, AttentionMask::none(len), t), want_full) <=
            1e-5f);
    }
  }
}

TEST_CASE("one-rank ring is local attention bit for bit") {
  const Qkv x = random_qkv(100, 64, 3);
  InProcTransport t(1);
  for (const auto& mask : {AttentionMask::causal(100), AttentionMask::none(100)}) {
    CHECK(bitwise_equal(ring_full(x.q, x.k, x.v, 4, 1, mask, t),
                        local_attention(x.q, x.k, x.v, 4, mask)));
  }
}

TEST_CASE("schedules, world sizes and transports agree") {
  const Qkv x = random_qkv(96, 32, 5);
  const auto mask = AttentionMask::causal(96);
  InProcTransport t4(4), t2(2);
  const Tensor threaded = ring_full(x.q, x.k, x.v, 2, 4, mask, t4, Schedule::kThreaded);
  const Tensor rr = ring_full(x.q, x.k, x.v, 2, 4, mask, t4, Schedule::kRoundRobin);
  CHECK(bitwise_equal(threaded, rr));
  CHECK(max_abs_diff(threaded, ring_full(x.q, x.k, x.v, 2, 2, mask, t2)) <= 1e-5f);
  TcpTransport tcp(4);
  CHECK(bitwise_equal(threaded, ring_full(x.q, x.k, x.v, 2, 4, mask, tcp)));
  CHECK(bitwise_equal(threaded, ring_full(x.q, x.k, x.v, 2, 4, mask, tcp, Schedule::kRoundRobin)));
}

TEST_CASE("frame count and trajectories") {
  for (std::size_t w : {1u, 2u, 3u, 5u}) {
    const Qkv x = random_qkv(20, 16, w);
    InProcTransport inner(w);
    TracingTransport trace(inner);
    ring_full(x.q, x.k, x.v, 1, w, AttentionMask::causal(20), trace);
    const auto traces = trace.traces();
    CHECK(traces.size() == w * (w - 1));
    const ShardPlan plan = plan_shards(20, w);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const FrameTrace& f : traces) {
      CHECK(f.to == (f.from + 1) % w);
      CHECK((f.origin + f.hop) % w == f.from);
      CHECK(f.range == plan.ranges[f.origin]);
      // Continuing the same trajectory for one more hop would land on the origin.
      CHECK((f.origin + (f.hop + 1) + (w - 1 - f.hop)) % w == f.origin);
      seen.insert({f.origin, f.hop});
    }
    CHECK(seen.size() == w * (w - 1));
  }
}

TEST_CASE("ring output is causal in global indices") {
  const std::size_t len = 48;
  Qkv x = random_qkv(len, 32, 9);
  InProcTransport t(3);
  const Tensor base = ring_full(x.q, x.k, x.v, 2, 3, AttentionMask::causal(len), t);
  for (std::size_t j = len / 2; j < len; ++j) {
    for (Tensor* m : {&x.q, &x.k, &x.v})
      for (float& f : m->row(j)) f += 3.0f;
  }
  const Tensor after = ring_full(x.q, x.k, x.v, 2, 3, AttentionMask::causal(len), t);
  CHECK(bitwise_equal(base.slice_rows(0, len / 2), after.slice_rows(0, len / 2)));
  CHECK_FALSE(bitwise_equal(base.slice_rows(len / 2, len), after.slice_rows(len / 2, len)));
}

TEST_CASE("segment masks pass through the ring") {
  std::vector<std::uint32_t> segs{0, 0, 0, 1, 1, 1, 1, 2, 2, kPadSegment, kPadSegment, 3};
  const AttentionMask mask = AttentionMask::segment_causal(segs);
  const Qkv x = random_qkv(segs.size(), 16, 2);
  const Tensor want = direct_multihead(x.q, x.k, x.v, 1, [&](std::size_t i, std::size_t j) {
    return mask.allowed(i, j);
  });
  InProcTransport t(4);
  CHECK(max_abs_diff(ring_full(x.q, x.k, x.v, 1, 4, mask, t), want) <= 1e-5f);
}

TEST_CASE("broken rings name the dead rank") {
  const Qkv x = random_qkv(32, 16, 4);
  for (Schedule s : {Schedule::kThreaded, Schedule::kRoundRobin}) {
    for (std::size_t budget : {0u, 1u}) {
      InProcTransport inner(4);
      FaultyTransport faulty(inner, 2, budget);
      try {
        ring_full(x.q, x.k, x.v, 1, 4, AttentionMask::causal(32), faulty, s);
        FAIL("ring should have failed");
      } catch (const RingBrokenError& e) {
        CHECK(e.dead_rank() == 2);
      }
    }
  }
  TcpTransport tcp(3);
  FaultyTransport faulty(tcp, 1, 0);
  try {
    ring_full(x.q, x.k, x.v, 1, 3, AttentionMask::causal(32), faulty);
    FAIL("ring should have failed");
  } catch (const RingBrokenError& e) {
    CHECK(e.dead_rank() == 1);
  }
}

TEST_CASE("plan mismatches are dimension errors") {
  const Qkv x = random_qkv(16, 16, 1);
  InProcTransport t(2);
  const ShardPlan plan = plan_shards(16, 2);
  auto shards = split_qkv(x.q, x.k, x.v, plan);
  CHECK_THROWS_AS(ring_attention(plan_shards(16, 4), shards, 1, true, t), DimensionError);
  shards[1].k = random_tensor({7, 16}, 3);
  CHECK_THROWS_AS(ring_attention(plan, shards, 1, true, t), DimensionError);
  InProcTransport t3(3);
  CHECK_THROWS_AS(ring_attention(plan, split_qkv(x.q, x.k, x.v, plan), 1, true, t3),
                  DimensionError);
}

TEST_CASE("distributed forward matches one worker") {
  const Model m(tiny_model());
  std::mt19937_64 rng(1);
  TokenList toks(64);
  for (auto& t : toks) t = static_cast<TokenId>(3 + rng() % 47);
  InProcTransport t1(1), t4(4);
  const Tensor one = run_distributed_forward(m, toks, plan_shards(64, 1), t1);
  const Tensor four = run_distributed_forward(m, toks, plan_shards(64, 4), t4);
  CHECK(max_abs_diff(one, four) <= 1e-4f);
  CHECK(bitwise_equal(four, run_distributed_forward(m, toks, plan_shards(64, 4), t4)));
  std::vector<std::size_t> pos(64);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  CHECK(bitwise_equal(one, m.forward(m.embed(toks), AttentionMask::causal(64), pos)));

  DistributedForwardOptions opt;
  opt.output_rows = {63, 0, 17};
  const Tensor picked = run_distributed_forward(m, toks, plan_shards(64, 4), t4, opt);
  CHECK(bitwise_equal(picked.slice_rows(0, 1), four.slice_rows(63, 64)));
  CHECK(bitwise_equal(picked.slice_rows(1, 2), four.slice_rows(0, 1)));
  CHECK(bitwise_equal(picked.slice_rows(2, 3), four.slice_rows(17, 18)));

  CHECK_THROWS_AS(run_distributed_forward(m, toks, plan_shards(60, 4), t4), DimensionError);
}

TEST_CASE("pad suffix never reaches the frontier") {
  const Model m(tiny_model());
  TokenList toks(40, kPadToken);
  for (std::size_t i = 0; i < 25; ++i) toks[i] = static_cast<TokenId>(3 + i);
  DistributedForwardOptions opt;
  opt.mask = AttentionMask::causal_with_padding(40, 25);
  opt.output_rows = {24};
  InProcTransport t(4);
  const Tensor a = run_distributed_forward(m, toks, plan_shards(40, 4), t, opt);
  for (std::size_t i = 25; i < 40; ++i) toks[i] = static_cast<TokenId>(3 + (i * 7) % 40);
  CHECK(bitwise_equal(a, run_distributed_forward(m, toks, plan_shards(40, 4), t, opt)));
}
