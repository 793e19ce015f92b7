// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "longctx/attention.h"
#include "longctx/tokens.h"

namespace longctx {

enum class PackingMode {
  kResetIsolated,     // fresh segment and positions per sample
  kContinuousShared,  // one causal stream, positions 0..L-1
};

const char* to_string(PackingMode mode);
PackingMode parse_packing_mode(const std::string& s);  // "reset" | "shared"

enum class Modality { kText, kVision };

struct ModalitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  Modality modality = Modality::kText;
  friend bool operator==(const ModalitySpan&, const ModalitySpan&) = default;
};

struct Sample {
  TokenList tokens;
  std::string source_id;
  std::vector<ModalitySpan> spans;  // sorted, disjoint, within [0, tokens.size())

  void validate() const;
};

struct PackedSequence {
  std::size_t target_len = 0;
  PackingMode mode = PackingMode::kResetIsolated;
  TokenList tokens;
  std::vector<std::size_t> position_ids;
  std::vector<std::uint32_t> segment_ids;  // kPadSegment on padding
  std::size_t pad_count = 0;
  // Bookkeeping, not serialized: input indices in pack order and spans in
  // packed coordinates.
  std::vector<std::size_t> members;
  std::vector<ModalitySpan> spans;

  std::size_t used() const { return target_len - pad_count; }
  void validate() const;
};

struct MixtureSource {
  std::string id;
  std::size_t size = 0;                    // items available
  std::optional<double> sampling_ratio;    // in [0, 1]
  std::optional<std::size_t> max_number;   // hard cap on draws
};

struct MixtureSpec {
  std::vector<MixtureSource> sources;
  void validate() const;
};

// n draws, each with probability proportional to the source's remaining
// weight. Weight is ratio * size, or min(size, max_number) for count-only
// sources. A source whose max_number is reached leaves the pool.
std::vector<std::string> sample_mixture(const MixtureSpec& spec, std::uint64_t rng_seed,
                                        std::size_t n);

// Greedy first-fit in input order. In kResetIsolated mode a pack only
// accepts samples from the source of its first sample.
std::vector<PackedSequence> pack_samples(const std::vector<Sample>& samples,
                                         std::size_t target_len, PackingMode mode,
                                         TokenId pad_token = kPadToken);

// allow(i, j) = i == j, or j < i within one non-pad segment. In shared mode
// every real token sits in segment 0, giving plain causal over non-pads.
AttentionMask build_attention_mask(const PackedSequence& p);

// One record per line, tab separated:
//   target_len  mode  tokens  positions  segments
// with comma-separated integer arrays. Pad segments are written as
// 4294967295.
void write_packed(std::ostream& out, const std::vector<PackedSequence>& packs);
std::vector<PackedSequence> read_packed(std::istream& in);

}  // namespace longctx
