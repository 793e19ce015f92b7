// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <new>
#include <numeric>
#include <ostream>
#include <sstream>

#include "longctx/context_parallel.h"
#include "longctx/error.h"
#include "longctx/harness.h"
#include "longctx/kernels.h"
#include "longctx/random.h"
#include "longctx/vision.h"

namespace longctx {
namespace {

TokenList bench_tokens(std::size_t len, std::size_t vocab) {
  Rng rng(0xBE7C4);
  TokenList t(len);
  for (auto& x : t) {
    x = static_cast<TokenId>(kFirstContentToken + rng.below(vocab - kFirstContentToken));
  }
  return t;
}

std::string fmt_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

std::size_t BenchSpec::tokens() const { return frames ? frame_token_budget(frames) : seq_len; }

void BenchSpec::validate() const {
  if (tokens() == 0) throw ConfigError("bench needs --seq-len or --frames");
  if (reps == 0) throw ConfigError("repetitions must be >= 1");
  if (world_size == 0) throw ConfigError("world size must be >= 1");
  if (chunk_len == 0) throw ConfigError("chunk_len must be >= 1");
  if (transport != "inproc" && transport != "tcp") {
    throw ConfigError("transport must be inproc or tcp, got '" + transport + "'");
  }
  model.validate();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double coefficient_of_variation(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return mean > 0 ? sd / mean : 0.0;
}

ReportRow bench_prefill(const BenchSpec& spec) {
  spec.validate();
  const Model model(spec.model);
  return bench_prefill(spec, model);
}

ReportRow bench_prefill(const BenchSpec& spec, const Model& model) {
  spec.validate();
  const std::size_t len = spec.tokens();
  const std::size_t vocab = model.config().vocab_size, d = model.config().d_model;
  ReportRow row;
  row.seq_len = len;
  row.frames = spec.frames;
  row.chunk_len = spec.head == HeadStrategy::Kind::kChunked ? spec.chunk_len : 0;
  row.world_size = spec.world_size;
  row.transport = spec.transport;
  row.reps = spec.reps;
  row.status = "ok";

  const HeadStrategy strategy = spec.head == HeadStrategy::Kind::kFull ? HeadStrategy::full()
                                : spec.head == HeadStrategy::Kind::kChunked
                                    ? HeadStrategy::chunked(spec.chunk_len)
                                    : HeadStrategy::logits_masked({len - 1});
  row.head = strategy.name();
  row.head_flops = head_flops(strategy.selected_rows(len), d, vocab);
  row.head_flop_ratio =
      static_cast<double>(strategy.selected_rows(len)) / static_cast<double>(len);

  if (spec.memory_budget_bytes > 0) {
    CapacityConfig cc;
    cc.activation_bytes_per_token = spec.activation_bytes_per_token;
    cc.vocab_size = vocab;
    cc.chunk_len = spec.chunk_len;
    row.capacity_seq_len = max_seq_len(spec.memory_budget_bytes, spec.world_size, spec.head, cc);
    if (len > row.capacity_seq_len) {
      row.status = "oom";
      return row;
    }
  }

  const TokenList tokens = bench_tokens(len, vocab);
  const ShardPlan plan = plan_shards(len, spec.world_size);
  const auto inner = make_transport(spec.transport, spec.world_size);
  TracingTransport transport(*inner);
  try {
    for (std::size_t rep = 0; rep < spec.reps; ++rep) {
      transport.reset();
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor hidden = run_distributed_forward(model, tokens, plan, transport);
      HeadStats stats;
      TokenId next = 0;
      if (spec.head == HeadStrategy::Kind::kFull) {
        const HeadOutput out = compute_logits(hidden, model.weights().unembed, strategy);
        next = static_cast<TokenId>(argmax(out.logits.row(len - 1)));
        stats = out.stats;
      } else {
        // Every chunk is computed; only the row after the prompt is read.
        stats = stream_logits(hidden, model.weights().unembed, strategy,
                              [&](std::size_t first, const Tensor& chunk) {
                                const std::size_t last = chunk.rows() - 1;
                                if (spec.head == HeadStrategy::Kind::kLogitsMasked ||
                                    first + last == len - 1) {
                                  next = static_cast<TokenId>(argmax(chunk.row(last)));
                                }
                              });
      }
      const auto t1 = std::chrono::steady_clock::now();
      if (next < 0 || static_cast<std::size_t>(next) >= vocab) {
        throw InvariantError("bench produced an out-of-vocab token");
      }
      row.samples_s.push_back(std::chrono::duration<double>(t1 - t0).count());
      row.peak_logit_rows = std::max<std::uint64_t>(row.peak_logit_rows, stats.peak_logit_rows);
      row.frames_sent = transport.frames_sent();
    }
  } catch (const std::bad_alloc&) {
    row.status = "oom";
    row.samples_s.clear();
    return row;
  }
  row.wall_time_s = median(row.samples_s);
  row.wall_time_cv = coefficient_of_variation(row.samples_s);
  return row;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "seq_len",      "frames",        "head",       "chunk_len",       "workers",
      "transport",    "reps",          "status",     "wall_time_s",     "wall_time_cv",
      "head_flops",   "head_flop_ratio", "peak_logit_rows", "frames_sent", "capacity_seq_len"};
  return cols;
}

void write_report_header(std::ostream& out) {
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

void write_report_row(std::ostream& out, const ReportRow& r) {
  out << r.seq_len << ',' << r.frames << ',' << r.head << ',' << r.chunk_len << ','
      << r.world_size << ',' << r.transport << ',' << r.reps << ',' << r.status << ','
      << fmt_double(r.wall_time_s) << ',' << fmt_double(r.wall_time_cv) << ',' << r.head_flops
      << ',' << fmt_double(r.head_flop_ratio) << ',' << r.peak_logit_rows << ','
      << r.frames_sent << ',' << r.capacity_seq_len << '\n';
}

std::vector<ReportRow> read_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("report: missing header");
  {
    std::ostringstream want;
    write_report_header(want);
    if (line + "\n" != want.str()) throw FormatError("report: unexpected header '" + line + "'");
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != report_columns().size()) {
      throw FormatError("report: row has " + std::to_string(f.size()) + " fields");
    }
    try {
      ReportRow r;
      r.seq_len = std::stoull(f[0]);
      r.frames = std::stoull(f[1]);
      r.head = f[2];
      r.chunk_len = std::stoull(f[3]);
      r.world_size = std::stoull(f[4]);
      r.transport = f[5];
      r.reps = std::stoull(f[6]);
      r.status = f[7];
      r.wall_time_s = std::stod(f[8]);
      r.wall_time_cv = std::stod(f[9]);
      r.head_flops = std::stoull(f[10]);
      r.head_flop_ratio = std::stod(f[11]);
      r.peak_logit_rows = std::stoull(f[12]);
      r.frames_sent = std::stoull(f[13]);
      r.capacity_seq_len = std::stoull(f[14]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw FormatError("report: bad numeric field in '" + line + "'");
    }
  }
  return rows;
}

}  // namespace longctx
