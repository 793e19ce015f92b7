// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "longctx/decode.h"
#include "longctx/error.h"
#include "support/fixtures.h"

using namespace longctx;
using longctx::testing::PadScrambler;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.head_dim = 16;
  c.vocab_size = 40;
  c.seed = 21;
  return c;
}

GenerationRequest random_request(std::mt19937_64& rng, std::size_t vocab) {
  GenerationRequest req;
  req.prompt.resize(1 + rng() % 12);
  for (auto& t : req.prompt) t = static_cast<TokenId>(kFirstContentToken + rng() % (vocab - 3));
  req.max_new = 1 + rng() % 8;
  return req;
}

}  // namespace

TEST_CASE("fixed-length buffer") {
  GenerationRequest req{{5, 6}, 3, kEosToken};
  FixedLengthBuffer buf(req, kPadToken, 7);
  CHECK(buf.tokens().size() == 7);
  CHECK(buf.frontier() == 2);
  CHECK(buf.tokens()[2] == kPadToken);
  buf.write(9);
  buf.write(10);
  buf.write(11);
  CHECK(buf.full());
  CHECK(buf.generated() == std::vector<TokenId>{9, 10, 11});
  CHECK_NOTHROW(buf.check_invariants());
  CHECK_THROWS_AS(buf.write(12), InvariantError);
  CHECK_THROWS_AS(FixedLengthBuffer(req, kPadToken, 4), DimensionError);
  CHECK_THROWS_AS(FixedLengthBuffer(GenerationRequest{{}, 3, kEosToken}), ConfigError);
  CHECK_THROWS_AS(FixedLengthBuffer(GenerationRequest{{4}, 0, kEosToken}), ConfigError);
}

TEST_CASE("scripted generation") {
  InProcTransport t(1);
  const GenerationRequest req{{4, 5, 6}, 5, kEosToken};
  const ShardPlan plan = plan_for_request(req, 1);
  {
    ScriptedModel m({kEosToken}, 16);
    CHECK(generate_fixed(m, req, plan, t).empty());
    CHECK(m.forwards() == 1);
  }
  {
    ScriptedModel m({7, 8, kEosToken}, 16);
    CHECK(generate_fixed(m, req, plan, t) == std::vector<TokenId>{7, 8});
    CHECK(m.forwards() == 3);
  }
  {
    ScriptedModel m(std::vector<TokenId>(10, 9), 16);
    const GenerationRequest two{{4}, 2, kEosToken};
    CHECK(generate_fixed(m, two, plan_for_request(two, 1), t) == std::vector<TokenId>{9, 9});
    CHECK(m.forwards() == 2);
  }
  {
    ScriptedModel m({7, 8, kEosToken}, 16);
    CHECK(generate_incremental(m, req) == std::vector<TokenId>{7, 8});
    CHECK(m.forwards() == 3);
  }
  {
    ScriptedModel m({kEosToken}, 16);
    CHECK(generate_incremental(m, req).empty());
  }
}

TEST_CASE("fixed-length decoding equals incremental decoding") {
  const Model model(toy_config());
  ToyDecodeModel toy(model);
  std::mt19937_64 rng(5);
  std::size_t produced = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const GenerationRequest req = random_request(rng, 40);
    toy.reset_forwards();
    const auto cached = generate_incremental(toy, req, true);
    CHECK(toy.forwards() <= req.max_new);
    const auto uncached = generate_incremental(toy, req, false);
    REQUIRE(cached == uncached);
    produced += cached.size();
    for (std::size_t w : {1u, 2u, 4u}) {
      if (req.prompt.size() + req.max_new < w) continue;
      InProcTransport t(w);
      toy.reset_forwards();
      CAPTURE(trial);
      CAPTURE(w);
      REQUIRE(generate_fixed(toy, req, plan_for_request(req, w), t) == cached);
      CHECK(toy.forwards() <= req.max_new);
    }
  }
  CHECK(produced > 20);
}

TEST_CASE("pad contents never change the output") {
  const Model model(toy_config());
  ToyDecodeModel toy(model);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 8; ++trial) {
    GenerationRequest req = random_request(rng, 40);
    req.max_new += 4;
    InProcTransport t(2);
    // Shard slack beyond prompt + max_new is padding too.
    const ShardPlan plan = plan_shards(req.prompt.size() + req.max_new + 3, 2);
    const auto want = generate_fixed(toy, req, plan, t);
    CHECK(want == generate_fixed(toy, req, plan_for_request(req, 2), t));
    PadScrambler scrambled(toy, rng());
    CHECK(generate_fixed(scrambled, req, plan, t) == want);
  }
}

TEST_CASE("plans too short for the request are rejected") {
  const Model model(toy_config());
  ToyDecodeModel toy(model);
  InProcTransport t(2);
  const GenerationRequest req{{4, 5, 6}, 5, kEosToken};
  CHECK_THROWS_AS(generate_fixed(toy, req, plan_shards(6, 2), t), DimensionError);
}
