// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <limits>

#include "longctx/bytes.h"
#include "longctx/context_parallel.h"
#include "longctx/error.h"

namespace longctx {

void ShardPlan::validate() const {
  if (world_size == 0 || ranges.size() != world_size) {
    throw DimensionError("shard plan has " + std::to_string(ranges.size()) + " ranges for world " +
                         std::to_string(world_size));
  }
  std::size_t expect = 0;
  std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
  for (const TokenRange& r : ranges) {
    if (r.start != expect || r.end <= r.start) {
      throw DimensionError("shard ranges must be contiguous, non-empty and start at 0");
    }
    expect = r.end;
    lo = std::min(lo, r.size());
    hi = std::max(hi, r.size());
  }
  if (hi - lo > 1) throw DimensionError("shard plan is not balanced");
}

ShardPlan plan_shards(std::size_t seq_len, std::size_t world_size) {
  if (world_size == 0) throw ConfigError("world_size must be >= 1");
  if (world_size > 0xFFFF) throw ConfigError("world_size must fit the 16-bit rank field");
  if (seq_len < world_size) {
    throw UnderfullError("cannot split " + std::to_string(seq_len) + " tokens over " +
                         std::to_string(world_size) + " workers");
  }
  ShardPlan plan;
  plan.world_size = world_size;
  const std::size_t base = seq_len / world_size;
  const std::size_t extra = seq_len % world_size;
  std::size_t start = 0;
  for (std::size_t r = 0; r < world_size; ++r) {
    const std::size_t len = base + (r < extra ? 1 : 0);
    plan.ranges.push_back({start, start + len});
    start += len;
  }
  return plan;
}

std::vector<std::uint8_t> encode_frame(const RingFrame& frame) {
  const std::size_t rows = frame.range.size();
  if (frame.range.end <= frame.range.start || frame.k_block.rank() != 2 ||
      frame.k_block.shape() != frame.v_block.shape() || frame.k_block.rows() != rows) {
    throw DimensionError("ring frame blocks must be [range x width] and agree");
  }
  const std::uint64_t payload = 8ull * frame.k_block.size();
  const std::uint64_t length = kFrameHeaderBytes - 4 + payload;
  if (length > 0xFFFFFFFFull) throw RangeError("ring frame exceeds the u32 length field");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(length));
  w.u8(kFrameTypeKv);
  w.u16(frame.origin_rank);
  w.u16(frame.hop);
  w.u64(frame.range.start);
  w.u64(frame.range.end);
  w.f32s(frame.k_block.data());
  w.f32s(frame.v_block.data());
  return w.take();
}

RingFrame decode_frame(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "ring frame");
  const std::uint32_t length = r.u32();
  if (length != r.remaining()) {
    throw FormatError("ring frame: length field " + std::to_string(length) + " but " +
                      std::to_string(r.remaining()) + " bytes follow");
  }
  if (length < kFrameHeaderBytes - 4) throw FormatError("ring frame: shorter than its header");
  const std::uint8_t type = r.u8();
  if (type != kFrameTypeKv) throw FormatError("ring frame: unknown type " + std::to_string(type));
  RingFrame f;
  f.origin_rank = r.u16();
  f.hop = r.u16();
  f.range.start = r.u64();
  f.range.end = r.u64();
  if (f.range.end <= f.range.start) throw FormatError("ring frame: empty or inverted range");
  const std::uint64_t rows = f.range.size();
  const std::uint64_t payload = r.remaining();
  if (rows > payload / 8 || payload % (8 * rows) != 0) {
    throw FormatError("ring frame: payload does not match range length");
  }
  const std::size_t width = payload / (8 * rows);
  f.k_block = Tensor({rows, width});
  f.v_block = Tensor({rows, width});
  r.f32s(f.k_block.data());
  r.f32s(f.v_block.data());
  return f;
}

}  // namespace longctx
