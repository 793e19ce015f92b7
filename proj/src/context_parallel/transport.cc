// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include "longctx/context_parallel.h"
#include "longctx/error.h"

namespace longctx {

InProcTransport::InProcTransport(std::size_t world_size) : boxes_(world_size) {
  if (world_size == 0) throw ConfigError("transport world_size must be >= 1");
}

void InProcTransport::send(std::size_t from_rank, const RingFrame& frame) {
  if (from_rank >= boxes_.size()) throw IndexError("send from unknown rank");
  {
    std::lock_guard lock(mu_);
    if (dead_) throw RingBrokenError(*dead_, why_);
    boxes_[(from_rank + 1) % boxes_.size()].frames.push_back(frame);
  }
  cv_.notify_all();
}

RingFrame InProcTransport::receive(std::size_t rank) {
  if (rank >= boxes_.size()) throw IndexError("receive on unknown rank");
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return dead_ || !boxes_[rank].frames.empty(); });
  if (dead_) throw RingBrokenError(*dead_, why_);
  RingFrame f = std::move(boxes_[rank].frames.front());
  boxes_[rank].frames.pop_front();
  return f;
}

void InProcTransport::abort(std::size_t dead_rank, const std::string& why) {
  {
    std::lock_guard lock(mu_);
    if (!dead_) {
      dead_ = dead_rank;
      why_ = why;
    }
  }
  cv_.notify_all();
}

void TracingTransport::send(std::size_t from_rank, const RingFrame& frame) {
  const std::size_t w = world_size();
  if (frame.hop >= w || (frame.origin_rank + frame.hop) % w != from_rank) {
    throw InvariantError("frame from rank " + std::to_string(from_rank) + " has origin " +
                         std::to_string(frame.origin_rank) + " and hop " +
                         std::to_string(frame.hop) + ", off its ring trajectory");
  }
  {
    std::lock_guard lock(mu_);
    traces_.push_back({from_rank, (from_rank + 1) % w, frame.origin_rank, frame.hop, frame.range});
  }
  inner_.send(from_rank, frame);
}

std::vector<FrameTrace> TracingTransport::traces() const {
  std::lock_guard lock(mu_);
  return traces_;
}

std::size_t TracingTransport::frames_sent() const {
  std::lock_guard lock(mu_);
  return traces_.size();
}

void TracingTransport::reset() {
  std::lock_guard lock(mu_);
  traces_.clear();
}

void CapturingTransport::send(std::size_t from_rank, const RingFrame& frame) {
  {
    std::lock_guard lock(mu_);
    captured_.push_back(encode_frame(frame));
  }
  inner_.send(from_rank, frame);
}

std::vector<std::vector<std::uint8_t>> CapturingTransport::captured() const {
  std::lock_guard lock(mu_);
  return captured_;
}

void FaultyTransport::send(std::size_t from_rank, const RingFrame& frame) {
  {
    std::lock_guard lock(mu_);
    if (from_rank == dead_rank_ && !dead_) {
      if (budget_ == 0) {
        dead_ = true;
      } else {
        --budget_;
      }
    }
    if (dead_ && (from_rank == dead_rank_ || (from_rank + 1) % world_size() == dead_rank_)) {
      throw RingBrokenError(dead_rank_, "rank " + std::to_string(dead_rank_) + " is down");
    }
  }
  inner_.send(from_rank, frame);
}

RingFrame FaultyTransport::receive(std::size_t rank) {
  {
    std::lock_guard lock(mu_);
    if (dead_ && rank == dead_rank_) {
      throw RingBrokenError(dead_rank_, "rank " + std::to_string(dead_rank_) + " is down");
    }
  }
  return inner_.receive(rank);
}

std::unique_ptr<RingTransport> make_transport(const std::string& kind, std::size_t world_size) {
  if (kind == "inproc") return std::make_unique<InProcTransport>(world_size);
  if (kind == "tcp") return std::make_unique<TcpTransport>(world_size);
  throw ConfigError("unknown transport '" + kind + "' (expected inproc or tcp)");
}

}  // namespace longctx
