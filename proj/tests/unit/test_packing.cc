// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "longctx/error.h"
#include "longctx/packing.h"

using namespace longctx;

namespace {

Sample make_sample(std::size_t len, const std::string& src = "a", TokenId first = 10) {
  Sample s;
  s.source_id = src;
  for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(first + static_cast<TokenId>(i));
  return s;
}

using Sizes = std::vector<std::size_t>;
using Segs = std::vector<std::uint32_t>;

}  // namespace

TEST_CASE("reset and shared packing of [5, 3] into 8") {
  const std::vector<Sample> in{make_sample(5), make_sample(3)};
  const auto reset = pack_samples(in, 8, PackingMode::kResetIsolated);
  REQUIRE(reset.size() == 1);
  CHECK(reset[0].position_ids == Sizes{0, 1, 2, 3, 4, 0, 1, 2});
  CHECK(reset[0].segment_ids == Segs{0, 0, 0, 0, 0, 1, 1, 1});
  CHECK(reset[0].pad_count == 0);

  const auto shared = pack_samples(in, 8, PackingMode::kContinuousShared);
  REQUIRE(shared.size() == 1);
  CHECK(shared[0].position_ids == Sizes{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(shared[0].segment_ids == Segs(8, 0));
}

TEST_CASE("first fit opens a new pack and pads") {
  const auto packs = pack_samples({make_sample(6), make_sample(6)}, 8, PackingMode::kResetIsolated);
  REQUIRE(packs.size() == 2);
  for (const auto& p : packs) {
    CHECK(p.pad_count == 2);
    CHECK(p.tokens[6] == kPadToken);
    CHECK(p.segment_ids[7] == kPadSegment);
    CHECK(p.position_ids[7] == 7);
  }
  // First fit backfills earlier packs: [6, 6, 2] puts the 2 in pack 0.
  const auto bf = pack_samples({make_sample(6), make_sample(6), make_sample(2)}, 8,
                               PackingMode::kResetIsolated);
  REQUIRE(bf.size() == 2);
  CHECK(bf[0].members == Sizes{0, 2});
  CHECK(bf[0].pad_count == 0);
}

TEST_CASE("oversize sample and same-source rule") {
  CHECK_THROWS_AS(pack_samples({make_sample(9)}, 8, PackingMode::kResetIsolated),
                  OversizeSampleError);
  const std::vector<Sample> mixed{make_sample(2, "a"), make_sample(2, "b"), make_sample(2, "a")};
  const auto reset = pack_samples(mixed, 8, PackingMode::kResetIsolated);
  REQUIRE(reset.size() == 2);
  CHECK(reset[0].members == Sizes{0, 2});
  CHECK(reset[1].members == Sizes{1});
  CHECK(pack_samples(mixed, 8, PackingMode::kContinuousShared).size() == 1);
}

TEST_CASE("every token lands exactly once") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Sample> in;
    TokenId next = 3;
    const std::size_t target = 4 + rng() % 40;
    for (int i = 0; i < 30; ++i) {
      Sample s = make_sample(1 + rng() % target, rng() % 2 ? "x" : "y", next);
      next += static_cast<TokenId>(s.tokens.size());
      in.push_back(s);
    }
    for (PackingMode mode : {PackingMode::kResetIsolated, PackingMode::kContinuousShared}) {
      std::vector<TokenId> seen;
      for (const auto& p : pack_samples(in, target, mode)) {
        p.validate();
        for (std::size_t i = 0; i < target; ++i)
          if (p.segment_ids[i] != kPadSegment) seen.push_back(p.tokens[i]);
      }
      std::sort(seen.begin(), seen.end());
      REQUIRE(seen.size() == static_cast<std::size_t>(next - 3));
      for (std::size_t i = 0; i < seen.size(); ++i) REQUIRE(seen[i] == static_cast<TokenId>(3 + i));
    }
  }
}

TEST_CASE("attention masks for the two regimes") {
  const std::vector<Sample> in{make_sample(2), make_sample(2)};
  const auto reset = build_attention_mask(pack_samples(in, 6, PackingMode::kResetIsolated)[0]);
  CHECK_FALSE(reset.allowed(2, 0));
  CHECK(reset.allowed(3, 2));
  CHECK_FALSE(reset.allowed(2, 3));
  const auto shared = build_attention_mask(pack_samples(in, 6, PackingMode::kContinuousShared)[0]);
  CHECK(shared.allowed(2, 0));
  CHECK_FALSE(shared.allowed(0, 2));
  for (const auto& m : {reset, shared}) {
    // Pads: self only, never a key for anyone else.
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(m.allowed(4, j) == (j == 4));
      CHECK(m.allowed(5, j) == (j == 5));
      if (j != 4) {
        CHECK_FALSE(m.allowed(j, 4));
      }
    }
  }
  // One sample: both regimes give the same mask.
  const std::vector<Sample> one{make_sample(5)};
  CHECK(build_attention_mask(pack_samples(one, 7, PackingMode::kResetIsolated)[0]).to_dense() ==
        build_attention_mask(pack_samples(one, 7, PackingMode::kContinuousShared)[0]).to_dense());
}

TEST_CASE("mixture sampling") {
  MixtureSpec one{{{"only", 100, 1.0, std::nullopt}}};
  for (const auto& id : sample_mixture(one, 1, 100)) CHECK(id == "only");

  MixtureSpec zero{{{"a", 100, 1.0, std::nullopt}, {"b", 100, 0.0, std::nullopt}}};
  const auto z = sample_mixture(zero, 2, 1000);
  CHECK(std::count(z.begin(), z.end(), "b") == 0);

  MixtureSpec skew{{{"a", 500, 0.1, std::nullopt}, {"b", 500, 1.0, std::nullopt}}};
  const auto s = sample_mixture(skew, 3, 10000);
  const double freq = static_cast<double>(std::count(s.begin(), s.end(), "b")) / 10000.0;
  CHECK(std::abs(freq - 10.0 / 11.0) <= 0.03);
  CHECK(sample_mixture(skew, 3, 500) == sample_mixture(skew, 3, 500));

  MixtureSpec capped{{{"a", 1000, 1.0, std::nullopt}, {"b", 1000, std::nullopt, 5}}};
  const auto c = sample_mixture(capped, 4, 2000);
  CHECK(std::count(c.begin(), c.end(), "b") == 5);

  MixtureSpec none{{{"a", 10, 0.0, std::nullopt}, {"b", 10, 0.0, std::nullopt}}};
  CHECK_THROWS_AS(sample_mixture(none, 1, 1), EmptyMixtureError);
  MixtureSpec drained{{{"a", 10, std::nullopt, 2}}};
  CHECK_THROWS_AS(sample_mixture(drained, 1, 3), EmptyMixtureError);
}

TEST_CASE("packed text format round trip") {
  const std::vector<Sample> in{make_sample(5), make_sample(3), make_sample(7)};
  for (PackingMode mode : {PackingMode::kResetIsolated, PackingMode::kContinuousShared}) {
    const auto packs = pack_samples(in, 9, mode);
    std::stringstream ss;
    write_packed(ss, packs);
    const auto back = read_packed(ss);
    REQUIRE(back.size() == packs.size());
    for (std::size_t i = 0; i < packs.size(); ++i) {
      CHECK(back[i].tokens == packs[i].tokens);
      CHECK(back[i].position_ids == packs[i].position_ids);
      CHECK(back[i].segment_ids == packs[i].segment_ids);
      CHECK(back[i].pad_count == packs[i].pad_count);
      CHECK(back[i].mode == mode);
    }
  }
  std::stringstream first;
  write_packed(first, pack_samples({make_sample(2)}, 3, PackingMode::kResetIsolated));
  CHECK(first.str() == "3\treset\t10,11,0\t0,1,2\t0,0,4294967295\n");
  std::stringstream bad("3\treset\t10,x,0\t0,1,2\t0,0,4294967295\n");
  CHECK_THROWS_AS(read_packed(bad), FormatError);
}
