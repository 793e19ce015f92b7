// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include "longctx/packing.h"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "longctx/error.h"
#include "longctx/random.h"

namespace longctx {

const char* to_string(PackingMode mode) {
  return mode == PackingMode::kResetIsolated ? "reset" : "shared";
}

PackingMode parse_packing_mode(const std::string& s) {
  if (s == "reset") return PackingMode::kResetIsolated;
  if (s == "shared") return PackingMode::kContinuousShared;
  throw ConfigError("unknown packing mode '" + s + "' (expected reset or shared)");
}

void Sample::validate() const {
  std::size_t prev_end = 0;
  for (const ModalitySpan& s : spans) {
    if (s.start >= s.end || s.end > tokens.size() || s.start < prev_end) {
      throw LayoutError("sample '" + source_id + "' has an invalid modality span [" +
                        std::to_string(s.start) + ", " + std::to_string(s.end) + ")");
    }
    prev_end = s.end;
  }
}

void PackedSequence::validate() const {
  const std::size_t n = target_len;
  if (tokens.size() != n || position_ids.size() != n || segment_ids.size() != n) {
    throw LayoutError("packed sequence arrays must all have length " + std::to_string(n));
  }
  const auto pads = static_cast<std::size_t>(
      std::count(segment_ids.begin(), segment_ids.end(), kPadSegment));
  if (pads != pad_count) throw LayoutError("pad_count disagrees with pad segments");
  for (std::size_t i = 0; i < n; ++i) {
    if (mode == PackingMode::kContinuousShared) {
      if (position_ids[i] != i) throw LayoutError("shared mode positions must be 0..L-1");
      if (segment_ids[i] != 0 && segment_ids[i] != kPadSegment) {
        throw LayoutError("shared mode uses segment 0 only");
      }
    } else if (segment_ids[i] != kPadSegment) {
      const bool starts = i == 0 || segment_ids[i - 1] != segment_ids[i];
      const std::size_t want = starts ? 0 : position_ids[i - 1] + 1;
      if (position_ids[i] != want) {
        throw LayoutError("reset mode positions must restart at each segment");
      }
    }
  }
}

void MixtureSpec::validate() const {
  if (sources.empty()) throw EmptyMixtureError("mixture has no sources");
  bool any = false;
  for (const MixtureSource& s : sources) {
    if (!s.sampling_ratio && !s.max_number) {
      throw ConfigError("source '" + s.id + "' needs a sampling ratio or a max number");
    }
    if (s.sampling_ratio && !(*s.sampling_ratio >= 0.0 && *s.sampling_ratio <= 1.0)) {
      throw ConfigError("source '" + s.id + "' ratio must lie in [0, 1]");
    }
    const double w = s.sampling_ratio ? *s.sampling_ratio * static_cast<double>(s.size)
                                      : static_cast<double>(std::min(s.size, *s.max_number));
    const bool capped_out = s.max_number && *s.max_number == 0;
    any = any || (w > 0.0 && !capped_out);
  }
  if (!any) throw EmptyMixtureError("every source has zero sampling weight");
}

std::vector<std::string> sample_mixture(const MixtureSpec& spec, std::uint64_t rng_seed,
                                        std::size_t n) {
  spec.validate();
  const std::size_t k = spec.sources.size();
  std::vector<double> weight(k);
  std::vector<std::size_t> drawn(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    const MixtureSource& s = spec.sources[i];
    weight[i] = s.sampling_ratio ? *s.sampling_ratio * static_cast<double>(s.size)
                                 : static_cast<double>(std::min(s.size, *s.max_number));
  }
  Rng rng(rng_seed);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t draw = 0; draw < n; ++draw) {
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += weight[i];
    if (!(total > 0.0)) {
      throw EmptyMixtureError("mixture exhausted after " + std::to_string(draw) + " of " +
                              std::to_string(n) + " draws (max_number caps reached)");
    }
    const double u = rng.uniform() * total;
    std::size_t pick = k;
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (weight[i] <= 0.0) continue;
      acc += weight[i];
      pick = i;
      if (u < acc) break;
    }
    out.push_back(spec.sources[pick].id);
    const auto& cap = spec.sources[pick].max_number;
    if (cap && ++drawn[pick] >= *cap) weight[pick] = 0.0;
  }
  return out;
}

std::vector<PackedSequence> pack_samples(const std::vector<Sample>& samples,
                                         std::size_t target_len, PackingMode mode,
                                         TokenId pad_token) {
  if (target_len == 0) throw ConfigError("target_len must be positive");
  struct Open {
    PackedSequence seq;
    std::string source;
    std::uint32_t next_segment = 0;
  };
  std::vector<Open> packs;
  for (std::size_t idx = 0; idx < samples.size(); ++idx) {
    const Sample& s = samples[idx];
    s.validate();
    if (s.tokens.size() > target_len) {
      throw OversizeSampleError("sample " + std::to_string(idx) + " has " +
                                std::to_string(s.tokens.size()) + " tokens, target_len is " +
                                std::to_string(target_len));
    }
    if (s.tokens.empty()) continue;
    Open* dest = nullptr;
    for (Open& p : packs) {
      const bool fits = p.seq.tokens.size() + s.tokens.size() <= target_len;
      const bool same = mode != PackingMode::kResetIsolated || p.source == s.source_id;
      if (fits && same) {
        dest = &p;
        break;
      }
    }
    if (!dest) {
      packs.emplace_back();
      dest = &packs.back();
      dest->source = s.source_id;
      dest->seq.target_len = target_len;
      dest->seq.mode = mode;
    }
    PackedSequence& q = dest->seq;
    const std::size_t base = q.tokens.size();
    const std::uint32_t seg = mode == PackingMode::kResetIsolated ? dest->next_segment++ : 0;
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      q.tokens.push_back(s.tokens[t]);
      q.position_ids.push_back(mode == PackingMode::kResetIsolated ? t : base + t);
      q.segment_ids.push_back(seg);
    }
    for (ModalitySpan span : s.spans) {
      span.start += base;
      span.end += base;
      q.spans.push_back(span);
    }
    q.members.push_back(idx);
  }
  std::vector<PackedSequence> out;
  out.reserve(packs.size());
  for (Open& p : packs) {
    PackedSequence& q = p.seq;
    q.pad_count = target_len - q.tokens.size();
    // Pad positions keep counting so position ids stay monotone per row.
    std::size_t next_pos = q.position_ids.empty() ? 0 : q.position_ids.back() + 1;
    if (mode == PackingMode::kContinuousShared) next_pos = q.tokens.size();
    while (q.tokens.size() < target_len) {
      q.tokens.push_back(pad_token);
      q.position_ids.push_back(next_pos++);
      q.segment_ids.push_back(kPadSegment);
    }
    out.push_back(std::move(q));
  }
  return out;
}

AttentionMask build_attention_mask(const PackedSequence& p) {
  p.validate();
  return AttentionMask::segment_causal(p.segment_ids);
}

namespace {

template <typename T>
void write_array(std::ostream& out, const std::vector<T>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    out << v[i];
  }
}

template <typename T>
std::vector<T> parse_array(const std::string& field, std::size_t line_no) {
  std::vector<T> v;
  if (field.empty()) return v;
  const char* p = field.data();
  const char* end = p + field.size();
  while (true) {
    T x{};
    auto [next, ec] = std::from_chars(p, end, x);
    if (ec != std::errc() || next == p) {
      throw FormatError("packed record line " + std::to_string(line_no) + ": bad integer");
    }
    v.push_back(x);
    if (next == end) break;
    if (*next != ',') {
      throw FormatError("packed record line " + std::to_string(line_no) + ": expected ','");
    }
    p = next + 1;
  }
  return v;
}

}  // namespace

void write_packed(std::ostream& out, const std::vector<PackedSequence>& packs) {
  for (const PackedSequence& p : packs) {
    out << p.target_len << '\t' << to_string(p.mode) << '\t';
    write_array(out, p.tokens);
    out << '\t';
    write_array(out, p.position_ids);
    out << '\t';
    write_array(out, p.segment_ids);
    out << '\n';
  }
}

std::vector<PackedSequence> read_packed(std::istream& in) {
  std::vector<PackedSequence> packs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 5) {
      throw FormatError("packed record line " + std::to_string(line_no) + ": expected 5 fields");
    }
    PackedSequence p;
    const auto len = parse_array<std::size_t>(fields[0], line_no);
    if (len.size() != 1) throw FormatError("packed record: bad target_len");
    p.target_len = len[0];
    try {
      p.mode = parse_packing_mode(fields[1]);
    } catch (const ConfigError& e) {
      throw FormatError(std::string("packed record: ") + e.what());
    }
    p.tokens = parse_array<TokenId>(fields[2], line_no);
    p.position_ids = parse_array<std::size_t>(fields[3], line_no);
    p.segment_ids = parse_array<std::uint32_t>(fields[4], line_no);
    p.pad_count = static_cast<std::size_t>(
        std::count(p.segment_ids.begin(), p.segment_ids.end(), kPadSegment));
    p.validate();
    packs.push_back(std::move(p));
  }
  return packs;
}

}  // namespace longctx
