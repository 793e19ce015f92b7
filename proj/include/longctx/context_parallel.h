// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "longctx/attention.h"
#include "longctx/model.h"
#include "longctx/tensor.h"

namespace longctx {

struct TokenRange {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - start; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct ShardPlan {
  std::size_t world_size = 0;
  std::vector<TokenRange> ranges;

  std::size_t seq_len() const { return ranges.empty() ? 0 : ranges.back().end; }
  void validate() const;
};

// Contiguous balanced split; the first seq_len % world_size ranks get one
// extra token.
ShardPlan plan_shards(std::size_t seq_len, std::size_t world_size);

// Wire unit of the ring: a KV block on its way around.
struct RingFrame {
  std::uint16_t origin_rank = 0;
  std::uint16_t hop = 0;
  TokenRange range;
  Tensor k_block;  // [range.size() x width]
  Tensor v_block;
};

inline constexpr std::uint8_t kFrameTypeKv = 1;
inline constexpr std::size_t kFrameHeaderBytes = 4 + 1 + 2 + 2 + 8 + 8;

// Layout, little endian:
//   u32 length (bytes after this field), u8 type, u16 origin, u16 hop,
//   u64 start, u64 end, f32[rows*width] K, f32[rows*width] V
std::vector<std::uint8_t> encode_frame(const RingFrame& frame);
RingFrame decode_frame(std::span<const std::uint8_t> bytes);

// Point-to-point channel of a W-rank ring: rank r only ever sends to
// (r + 1) % W and receives from (r - 1) % W.
class RingTransport {
 public:
  virtual ~RingTransport() = default;
  virtual std::size_t world_size() const = 0;
  virtual void send(std::size_t from_rank, const RingFrame& frame) = 0;
  // Blocks until the next frame for `rank` arrives.
  virtual RingFrame receive(std::size_t rank) = 0;
  // Wakes every blocked receive with RingBrokenError(dead_rank).
  virtual void abort(std::size_t dead_rank, const std::string& why) = 0;
  virtual std::string name() const = 0;
};

// Mailboxes guarded by a mutex; sends never block.
class InProcTransport final : public RingTransport {
 public:
  explicit InProcTransport(std::size_t world_size);
  std::size_t world_size() const override { return boxes_.size(); }
  void send(std::size_t from_rank, const RingFrame& frame) override;
  RingFrame receive(std::size_t rank) override;
  void abort(std::size_t dead_rank, const std::string& why) override;
  std::string name() const override { return "inproc"; }

 private:
  struct Box {
    std::deque<RingFrame> frames;
  };
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Box> boxes_;
  std::optional<std::size_t> dead_;
  std::string why_;
};

// Localhost TCP ring with length-prefixed frames. Each rank has a writer
// thread, so sends return before the peer reads.
class TcpTransport final : public RingTransport {
 public:
  explicit TcpTransport(std::size_t world_size);
  ~TcpTransport() override;
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  std::size_t world_size() const override { return world_; }
  void send(std::size_t from_rank, const RingFrame& frame) override;
  RingFrame receive(std::size_t rank) override;
  void abort(std::size_t dead_rank, const std::string& why) override;
  std::string name() const override { return "tcp"; }

  // Sees every received frame's exact bytes, length prefix included.
  void set_wire_tap(std::function<void(std::size_t rank, std::span<const std::uint8_t>)> tap);

 private:
  struct Endpoint;
  [[noreturn]] void fail(std::size_t rank, const std::string& what);

  std::size_t world_;
  std::vector<std::unique_ptr<Endpoint>> endpoints_;
  std::mutex tap_mu_;
  std::function<void(std::size_t, std::span<const std::uint8_t>)> tap_;
  std::atomic<bool> aborted_{false};
  std::mutex abort_mu_;
  std::size_t dead_rank_ = 0;
  std::string why_;
};

struct FrameTrace {
  std::size_t from = 0, to = 0;
  std::uint16_t origin = 0, hop = 0;
  TokenRange range;
};

// Records every send and checks the ring trajectory: a frame sent by rank
// r must satisfy r == (origin + hop) % W with hop < W, so after W hops it
// lands back on its origin.
class TracingTransport final : public RingTransport {
 public:
  explicit TracingTransport(RingTransport& inner) : inner_(inner) {}
  std::size_t world_size() const override { return inner_.world_size(); }
  void send(std::size_t from_rank, const RingFrame& frame) override;
  RingFrame receive(std::size_t rank) override { return inner_.receive(rank); }
  void abort(std::size_t dead_rank, const std::string& why) override {
    inner_.abort(dead_rank, why);
  }
  std::string name() const override { return "tracing(" + inner_.name() + ")"; }

  std::vector<FrameTrace> traces() const;
  std::size_t frames_sent() const;
  void reset();

 private:
  RingTransport& inner_;
  mutable std::mutex mu_;
  std::vector<FrameTrace> traces_;
};

// Keeps the encoded bytes of every frame that passes through send().
class CapturingTransport final : public RingTransport {
 public:
  explicit CapturingTransport(RingTransport& inner) : inner_(inner) {}
  std::size_t world_size() const override { return inner_.world_size(); }
  void send(std::size_t from_rank, const RingFrame& frame) override;
  RingFrame receive(std::size_t rank) override { return inner_.receive(rank); }
  void abort(std::size_t dead_rank, const std::string& why) override {
    inner_.abort(dead_rank, why);
  }
  std::string name() const override { return "capturing(" + inner_.name() + ")"; }

  std::vector<std::vector<std::uint8_t>> captured() const;

 private:
  RingTransport& inner_;
  mutable std::mutex mu_;
  std::vector<std::vector<std::uint8_t>> captured_;
};

// Kills `dead_rank` once it has sent `sends_before_death` frames: that send
// and every later operation touching the ring fail.
class FaultyTransport final : public RingTransport {
 public:
  FaultyTransport(RingTransport& inner, std::size_t dead_rank, std::size_t sends_before_death)
      : inner_(inner), dead_rank_(dead_rank), budget_(sends_before_death) {}
  std::size_t world_size() const override { return inner_.world_size(); }
  void send(std::size_t from_rank, const RingFrame& frame) override;
  RingFrame receive(std::size_t rank) override;
  void abort(std::size_t dead_rank, const std::string& why) override {
    inner_.abort(dead_rank, why);
  }
  std::string name() const override { return "faulty(" + inner_.name() + ")"; }

 private:
  RingTransport& inner_;
  std::size_t dead_rank_;
  std::mutex mu_;
  std::size_t budget_;
  bool dead_ = false;
};

enum class Schedule {
  kThreaded,    // one thread per rank
  kRoundRobin,  // all ranks stepped on the calling thread
};

std::unique_ptr<RingTransport> make_transport(const std::string& kind, std::size_t world_size);

// Exact attention over the whole sequence with KV blocks circulating the
// ring and Q resident. shards[r] holds the q/k/v rows of plan.ranges[r],
// [rows x n_heads*head_dim]. Returns per-rank output rows. Accumulators are
// merged in hop order, so results do not depend on the schedule.
std::vector<Tensor> ring_attention(const ShardPlan& plan, const std::vector<QkvRows>& shards,
                                   std::size_t n_heads, const AttentionMask& mask,
                                   RingTransport& transport,
                                   Schedule schedule = Schedule::kThreaded);
std::vector<Tensor> ring_attention(const ShardPlan& plan, const std::vector<QkvRows>& shards,
                                   std::size_t n_heads, bool causal, RingTransport& transport,
                                   Schedule schedule = Schedule::kThreaded);

struct DistributedForwardOptions {
  // Defaults: causal mask, positions 0..L-1, every row returned.
  std::optional<AttentionMask> mask;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> output_rows;
  Schedule schedule = Schedule::kThreaded;
};

// Model forward with every attention layer running over the ring;
// everything else is shard local. Returns final hidden states of
// options.output_rows, in that order.
Tensor run_distributed_forward(const Model& model, const Tensor& embedded, const ShardPlan& plan,
                               RingTransport& transport,
                               const DistributedForwardOptions& options = {});
Tensor run_distributed_forward(const Model& model, std::span<const TokenId> tokens,
                               const ShardPlan& plan, RingTransport& transport,
                               const DistributedForwardOptions& options = {});

}  // namespace longctx
