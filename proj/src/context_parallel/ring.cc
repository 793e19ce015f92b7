// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstring>
#include <exception>
#include <numeric>

#include "longctx/context_parallel.h"
#include "longctx/error.h"

namespace longctx {
namespace {

// One rank's view of a ring attention call.
class Worker {
 public:
  Worker(std::size_t rank, const ShardPlan& plan, const QkvRows& shard, std::size_t n_heads,
         const AttentionMask& mask)
      : rank_(rank), plan_(plan), shard_(shard), n_heads_(n_heads), mask_(mask) {}

  // Hop 0: own block, taken as-is so a one-rank ring reproduces
  // local_attention exactly.
  void start() {
    absorb(shard_.k, shard_.v, plan_.ranges[rank_], true);
    outgoing_ = RingFrame{static_cast<std::uint16_t>(rank_), 0, plan_.ranges[rank_], shard_.k,
                          shard_.v};
  }

  const RingFrame& outgoing() const { return outgoing_; }

  void accept(RingFrame frame, std::size_t step) {
    const std::size_t w = plan_.world_size;
    const std::size_t origin = (rank_ + w - 1 - step % w) % w;
    if (frame.origin_rank != origin || frame.hop != step || origin >= w ||
        frame.range != plan_.ranges[origin]) {
      throw InvariantError("rank " + std::to_string(rank_) + " got frame origin " +
                           std::to_string(frame.origin_rank) + " hop " +
                           std::to_string(frame.hop) + " at step " + std::to_string(step) +
                           ", expected origin " + std::to_string(origin));
    }
    if (frame.k_block.cols() != shard_.k.cols()) {
      throw DimensionError("ring frame width differs from the local shard");
    }
    absorb(frame.k_block, frame.v_block, frame.range, false);
    frame.hop = static_cast<std::uint16_t>(step + 1);
    outgoing_ = std::move(frame);
  }

  Tensor finish() const {
    const std::size_t rows = shard_.q.rows(), width = shard_.q.cols(), hd = width / n_heads_;
    Tensor out({rows, width});
    for (std::size_t h = 0; h < n_heads_; ++h) {
      const Tensor o = finalize(acc_[h]);
      for (std::size_t i = 0; i < rows; ++i) {
        std::memcpy(out.row(i).data() + h * hd, o.row(i).data(), hd * sizeof(float));
      }
    }
    return out;
  }

 private:
  void absorb(const Tensor& k, const Tensor& v, TokenRange kr, bool first) {
    const TokenRange qr = plan_.ranges[rank_];
    const std::size_t width = shard_.q.cols(), hd = width / n_heads_;
    const bool skip = mask_.classify(qr.start, qr.end, kr.start, kr.end) ==
                      AttentionMask::Cover::kEmpty;
    if (first) acc_.resize(n_heads_);
    for (std::size_t h = 0; h < n_heads_; ++h) {
      SoftmaxAccumulator a;
      if (skip) {
        a = SoftmaxAccumulator::empty(qr.size(), hd);
      } else {
        const ConstMatrixView qh{shard_.q.data().data() + h * hd, qr.size(), hd, width};
        const ConstMatrixView kh{k.data().data() + h * hd, kr.size(), hd, width};
        const ConstMatrixView vh{v.data().data() + h * hd, kr.size(), hd, width};
        a = attend_block(qh, kh, vh, qr.start, kr.start, mask_, attention_scale(hd));
      }
      acc_[h] = first ? std::move(a) : merge_accumulators(acc_[h], a);
    }
  }

  std::size_t rank_;
  const ShardPlan& plan_;
  const QkvRows& shard_;
  std::size_t n_heads_;
  const AttentionMask& mask_;
  std::vector<SoftmaxAccumulator> acc_;
  RingFrame outgoing_;
};

void check_inputs(const ShardPlan& plan, const std::vector<QkvRows>& shards, std::size_t n_heads,
                  const AttentionMask& mask, const RingTransport& transport) {
  plan.validate();
  if (shards.size() != plan.world_size) {
    throw DimensionError("got " + std::to_string(shards.size()) + " shards for world " +
                         std::to_string(plan.world_size));
  }
  if (transport.world_size() != plan.world_size) {
    throw DimensionError("transport world differs from the shard plan");
  }
  if (mask.size() != plan.seq_len()) throw DimensionError("mask length differs from the plan");
  const std::size_t width = shards[0].q.empty() ? 0 : shards[0].q.cols();
  if (n_heads == 0 || width == 0 || width % n_heads != 0) {
    throw DimensionError("shard width must be a positive multiple of n_heads");
  }
  for (std::size_t r = 0; r < shards.size(); ++r) {
    const std::vector<std::size_t> want{plan.ranges[r].size(), width};
    if (shards[r].q.shape() != want || shards[r].k.shape() != want ||
        shards[r].v.shape() != want) {
      throw DimensionError("shard " + std::to_string(r) + " does not match plan range [" +
                           std::to_string(plan.ranges[r].start) + ", " +
                           std::to_string(plan.ranges[r].end) + ")");
    }
  }
}

}  // namespace

std::vector<Tensor> ring_attention(const ShardPlan& plan, const std::vector<QkvRows>& shards,
                                   std::size_t n_heads, const AttentionMask& mask,
                                   RingTransport& transport, Schedule schedule) {
  check_inputs(plan, shards, n_heads, mask, transport);
  const std::size_t w = plan.world_size;
  std::vector<Worker> workers;
  workers.reserve(w);
  for (std::size_t r = 0; r < w; ++r) workers.emplace_back(r, plan, shards[r], n_heads, mask);
  std::vector<Tensor> out(w);

  if (schedule == Schedule::kRoundRobin) {
    try {
      for (Worker& wk : workers) wk.start();
      for (std::size_t step = 0; step + 1 < w; ++step) {
        for (std::size_t r = 0; r < w; ++r) transport.send(r, workers[r].outgoing());
        for (std::size_t r = 0; r < w; ++r) workers[r].accept(transport.receive(r), step);
      }
    } catch (const RingBrokenError& e) {
      transport.abort(e.dead_rank(), e.what());
      throw;
    }
    for (std::size_t r = 0; r < w; ++r) out[r] = workers[r].finish();
    return out;
  }

  std::mutex err_mu;
  std::exception_ptr first_error;
  auto run = [&](std::size_t r) {
    try {
      Worker& wk = workers[r];
      wk.start();
      for (std::size_t step = 0; step + 1 < w; ++step) {
        transport.send(r, wk.outgoing());
        wk.accept(transport.receive(r), step);
      }
      out[r] = wk.finish();
    } catch (...) {
      std::size_t dead = r;
      std::string why = "rank " + std::to_string(r) + " failed";
      try {
        throw;
      } catch (const RingBrokenError& e) {
        dead = e.dead_rank();
        why = e.what();
      } catch (const std::exception& e) {
        why += std::string(": ") + e.what();
      }
      {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
      transport.abort(dead, why);
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t r = 0; r < w; ++r) threads.emplace_back(run, r);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

std::vector<Tensor> ring_attention(const ShardPlan& plan, const std::vector<QkvRows>& shards,
                                   std::size_t n_heads, bool causal, RingTransport& transport,
                                   Schedule schedule) {
  const std::size_t len = plan.seq_len();
  const AttentionMask mask = causal ? AttentionMask::causal(len) : AttentionMask::none(len);
  return ring_attention(plan, shards, n_heads, mask, transport, schedule);
}

Tensor run_distributed_forward(const Model& model, const Tensor& embedded, const ShardPlan& plan,
                               RingTransport& transport,
                               const DistributedForwardOptions& options) {
  plan.validate();
  const ModelConfig& cfg = model.config();
  if (embedded.rank() != 2 || embedded.cols() != cfg.d_model) {
    throw DimensionError("embedded input must be [L x d_model]");
  }
  const std::size_t len = embedded.rows();
  if (plan.seq_len() != len) {
    throw DimensionError("plan covers " + std::to_string(plan.seq_len()) + " tokens, input has " +
                         std::to_string(len));
  }
  const AttentionMask mask = options.mask ? *options.mask : AttentionMask::causal(len);
  std::vector<std::size_t> positions = options.positions;
  if (positions.empty()) {
    positions.resize(len);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
  }
  if (positions.size() != len) throw DimensionError("positions length differs from L");

  const std::size_t w = plan.world_size;
  std::vector<Tensor> h(w);
  for (std::size_t r = 0; r < w; ++r) {
    h[r] = embedded.slice_rows(plan.ranges[r].start, plan.ranges[r].end);
  }
  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    std::vector<QkvRows> qkv(w);
    for (std::size_t r = 0; r < w; ++r) {
      const auto pos = std::span(positions).subspan(plan.ranges[r].start, plan.ranges[r].size());
      qkv[r] = model.attention_inputs(layer, h[r], pos);
    }
    const std::vector<Tensor> attn =
        ring_attention(plan, qkv, cfg.n_heads, mask, transport, options.schedule);
    for (std::size_t r = 0; r < w; ++r) model.finish_layer(layer, h[r], attn[r]);
  }

  std::vector<std::size_t> rows = options.output_rows;
  if (rows.empty()) {
    rows.resize(len);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  Tensor gathered({rows.size(), cfg.d_model});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= len) throw IndexError("output row " + std::to_string(rows[i]) + " >= L");
    const auto it = std::upper_bound(plan.ranges.begin(), plan.ranges.end(), rows[i],
                                     [](std::size_t p, const TokenRange& r) { return p < r.end; });
    const std::size_t r = static_cast<std::size_t>(it - plan.ranges.begin());
    std::memcpy(gathered.row(i).data(), h[r].row(rows[i] - plan.ranges[r].start).data(),
                cfg.d_model * sizeof(float));
  }
  return model.final_norm(gathered);
}

Tensor run_distributed_forward(const Model& model, std::span<const TokenId> tokens,
                               const ShardPlan& plan, RingTransport& transport,
                               const DistributedForwardOptions& options) {
  return run_distributed_forward(model, model.embed(tokens), plan, transport, options);
}

}  // namespace longctx
