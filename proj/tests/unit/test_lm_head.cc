// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "longctx/error.h"
#include "longctx/lm_head.h"
#include "support/oracles.h"

using namespace longctx;
using longctx::testing::naive_matmul;
using longctx::testing::random_tensor;

namespace {

// Full-head cross entropy at the given rows, straight from the naive product.
double brute_loss(const Tensor& hidden, const Tensor& unembed, std::span<const TokenId> targets,
                  std::size_t first_row) {
  const Tensor logits = naive_matmul(hidden, unembed);
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto row = logits.row(first_row + i);
    double mx = -INFINITY;
    for (float v : row) mx = std::max(mx, double{v});
    double s = 0.0;
    for (float v : row) s += std::exp(double{v} - mx);
    total += std::log(s) + mx - row[static_cast<std::size_t>(targets[i])];
  }
  return total / static_cast<double>(targets.size());
}

}  // namespace

TEST_CASE("hand sized head against the naive product") {
  const Tensor h = Tensor::from_rows({{1, 2}, {0, -1}, {0.5f, 0.25f}, {3, 0}});
  const Tensor w = Tensor::from_rows({{1, 0, -2}, {0.5f, 4, 1}});
  const HeadOutput out = compute_logits(h, w, HeadStrategy::full());
  CHECK(out.logits == Tensor::from_rows({{2, 8, 0}, {-0.5f, -4, -1}, {0.625f, 1, -0.75f},
                                         {3, 0, -6}}));
  CHECK(out.logits == naive_matmul(h, w));
  CHECK(out.stats.passes == 1);
  CHECK(out.stats.flops == 2 * 4 * 2 * 3);
}

TEST_CASE("chunked and masked reproduce the full head bit for bit") {
  std::mt19937_64 rng(11);
  int cases = 0;
  for (; cases < 120; ++cases) {
    const std::size_t len = 1 + rng() % 64, d = 1 + rng() % 48, vocab = 1 + rng() % 64;
    const Tensor h = random_tensor({len, d}, rng()), w = random_tensor({d, vocab}, rng());
    const HeadOutput full = compute_logits(h, w, HeadStrategy::full());
    REQUIRE(max_abs_diff(full.logits, naive_matmul(h, w)) <= 1e-5f);
    for (std::size_t c = 1; c <= len; ++c) {
      const HeadOutput ch = compute_logits(h, w, HeadStrategy::chunked(c));
      REQUIRE(bitwise_equal(ch.logits, full.logits));
      REQUIRE(ch.stats.passes == (len + c - 1) / c);
    }
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < len; ++i)
      if (rng() % 3 == 0) pos.push_back(i);
    if (pos.empty()) pos.push_back(len - 1);
    const HeadOutput m = compute_logits(h, w, HeadStrategy::logits_masked(pos));
    REQUIRE(m.rows == pos);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      REQUIRE(bitwise_equal(m.logits.slice_rows(i, i + 1),
                            full.logits.slice_rows(pos[i], pos[i] + 1)));
    }
  }
  CHECK(cases >= 100);
}

TEST_CASE("degenerate strategies") {
  const Tensor h = random_tensor({5, 8}, 1), w = random_tensor({8, 7}, 2);
  const HeadOutput full = compute_logits(h, w, HeadStrategy::full());
  CHECK(bitwise_equal(compute_logits(h, w, HeadStrategy::chunked(1)).logits, full.logits));
  CHECK(bitwise_equal(compute_logits(h, w, HeadStrategy::logits_masked({4})).logits,
                      full.logits.slice_rows(4, 5)));
  CHECK_THROWS_AS(HeadStrategy::logits_masked({}), EmptySelectionError);
  CHECK_THROWS_AS(HeadStrategy::logits_masked({2, 2}), ConfigError);
  CHECK_THROWS_AS(HeadStrategy::chunked(0), ConfigError);
  CHECK_THROWS_AS(compute_logits(h, w, HeadStrategy::logits_masked({5})), IndexError);
  CHECK_THROWS_AS(compute_logits(h, random_tensor({7, 7}, 3), HeadStrategy::full()),
                  DimensionError);
  CHECK(parse_head_kind("masked") == HeadStrategy::Kind::kLogitsMasked);
  CHECK_THROWS_AS(parse_head_kind("half"), ConfigError);
}

TEST_CASE("peak live logit rows") {
  const Tensor h = random_tensor({50, 8}, 4), w = random_tensor({8, 16}, 5);
  for (std::size_t c : {1u, 7u, 50u, 64u}) {
    LogitRowMeter meter;
    const HeadOutput out = compute_logits(h, w, HeadStrategy::chunked(c), &meter);
    CHECK(meter.peak() == std::min<std::size_t>(c, 50));
    CHECK(out.stats.peak_logit_rows == std::min<std::size_t>(c, 50));
    CHECK(meter.live() == 0);
  }
  LogitRowMeter meter;
  std::size_t seen = 0;
  stream_logits(h, w, HeadStrategy::logits_masked({3, 10, 49}), [&](std::size_t, const Tensor& t) {
    seen += t.rows();
    CHECK(meter.live() == 3);
  }, &meter);
  CHECK(seen == 3);
  CHECK(meter.peak() == 3);
  LogitRowMeter full_meter;
  compute_logits(h, w, HeadStrategy::full(), &full_meter);
  CHECK(full_meter.peak() == 50);
}

TEST_CASE("head cost ratio is exact") {
  const std::size_t len = 16384, d = 128, vocab = 32768;
  const std::uint64_t full = head_flops(len, d, vocab), masked = head_flops(1, d, vocab);
  CHECK(full == 2ull * len * d * vocab);
  CHECK(masked * len == full);
  CHECK(HeadStrategy::logits_masked({len - 1}).selected_rows(len) == 1);
  CHECK_THROWS_AS(head_flops(1ull << 40, 1ull << 20, 1ull << 10), RangeError);
}

TEST_CASE("logit memory arithmetic") {
  const MemoryEstimate big = estimate_logit_memory(1'000'000, 100'000, 4);
  CHECK(big.logit_bytes == 400'000'000'000ull);
  CHECK(big.gigabytes() == 400.0);
  CHECK(big.reduction_factor == 1.0);
  const MemoryEstimate one = estimate_logit_memory(1, 100'000, 4, 1'000'000);
  CHECK(one.logit_bytes == 400'000ull);
  CHECK(one.gigabytes() == 0.0004);
  CHECK(one.reduction_factor == 1e6);
  CHECK(estimate_logit_memory(1, 1, 1).logit_bytes == 1);
  CHECK_THROWS_AS(estimate_logit_memory(0, 1, 1), RangeError);
  CHECK_THROWS_AS(estimate_logit_memory(1ull << 32, 1ull << 32, 1), RangeError);
  CHECK(estimate_logit_memory(1ull << 31, 1ull << 32, 1).logit_bytes == 1ull << 63);
  CHECK_THROWS_AS(estimate_logit_memory(1ull << 31, 1ull << 32, 2), RangeError);
}

TEST_CASE("windowed loss") {
  std::mt19937_64 rng(3);
  const Tensor h = random_tensor({6, 8}, 7), w = random_tensor({8, 11}, 8);
  const std::vector<TokenId> tail{4, 9};
  CHECK(std::abs(loss_over_window(h, w, tail, 2) - brute_loss(h, w, tail, 4)) <= 1e-6);
  std::vector<TokenId> all(6);
  for (auto& t : all) t = static_cast<TokenId>(rng() % 11);
  CHECK(std::abs(loss_over_window(h, w, all, 6) - brute_loss(h, w, all, 0)) <= 1e-6);

  // Hidden rows that point hard at the target give near zero loss.
  Tensor sharp({2, 3});
  sharp.at(0, 0) = 40.0f;
  sharp.at(1, 2) = 40.0f;
  const Tensor eye = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const std::vector<TokenId> hit{0, 2};
  CHECK(loss_over_window(sharp, eye, hit, 2) < 1e-12);

  CHECK_THROWS_AS(loss_over_window(h, w, {}, 0), EmptyWindowError);
  CHECK_THROWS_AS(loss_over_window(h, w, all, 7), RangeError);
  CHECK_THROWS_AS(loss_over_window(h, w, tail, 3), DimensionError);
  const std::vector<TokenId> bad{4, 11};
  CHECK_THROWS_AS(loss_over_window(h, w, bad, 2), IndexError);
}
