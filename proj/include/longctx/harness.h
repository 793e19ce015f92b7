// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "longctx/lm_head.h"
#include "longctx/model.h"

namespace longctx {

// ---- analytic memory model -------------------------------------------------

// Per-worker footprint: activations linear in the worker's token count plus
// whatever logit rows the head keeps alive at once.
struct CapacityConfig {
  std::uint64_t activation_bytes_per_token = 0;
  std::uint64_t vocab_size = 100'000;
  std::uint64_t bytes_per_logit = 4;
  std::uint64_t chunk_len = kDefaultChunkLen;
};

// Logit rows alive at once on the worker holding the last token.
std::uint64_t head_rows_per_worker(std::uint64_t seq_len, std::uint64_t workers,
                                   HeadStrategy::Kind head, const CapacityConfig& cfg);

std::uint64_t worker_footprint_bytes(std::uint64_t seq_len, std::uint64_t workers,
                                     HeadStrategy::Kind head, const CapacityConfig& cfg);

// Largest L whose footprint fits in `budget_bytes` per worker. Throws
// RangeError when not even one token fits.
std::uint64_t max_seq_len(std::uint64_t budget_bytes, std::uint64_t workers,
                          HeadStrategy::Kind head, const CapacityConfig& cfg);

struct CapacityCalibration {
  std::uint64_t activation_bytes_per_token = 0;
  std::uint64_t budget_bytes = 0;
};

// Solves for the activation constant and per-worker budget under which the
// full head caps at `full_cap` and the masked head at about `masked_cap`.
// The budget is chosen so the full-head cap is exact.
CapacityCalibration calibrate_capacity(std::uint64_t full_cap, std::uint64_t masked_cap,
                                       std::uint64_t workers, std::uint64_t vocab_size,
                                       std::uint64_t bytes_per_logit);

// ---- prefill benchmark -----------------------------------------------------

struct BenchSpec {
  std::size_t seq_len = 0;
  std::size_t frames = 0;  // when non-zero, seq_len = frame_token_budget(frames)
  HeadStrategy::Kind head = HeadStrategy::Kind::kLogitsMasked;
  std::size_t chunk_len = kDefaultChunkLen;
  std::size_t world_size = 1;
  std::string transport = "inproc";
  std::size_t reps = 5;
  ModelConfig model;
  // Per-worker budget for the analytic model; 0 disables the capacity gate.
  std::uint64_t memory_budget_bytes = 0;
  std::uint64_t activation_bytes_per_token = 0;

  std::size_t tokens() const;
  void validate() const;
};

struct ReportRow {
  std::size_t seq_len = 0;
  std::size_t frames = 0;
  std::string head;
  std::size_t chunk_len = 0;
  std::size_t world_size = 0;
  std::string transport;
  std::size_t reps = 0;
  std::string status;  // "ok" or "oom"
  double wall_time_s = 0;  // median over reps
  double wall_time_cv = 0;
  std::uint64_t head_flops = 0;
  double head_flop_ratio = 0;  // head FLOPs / full-head FLOPs
  std::uint64_t peak_logit_rows = 0;
  std::uint64_t frames_sent = 0;  // ring frames per forward
  std::uint64_t capacity_seq_len = 0;  // analytic cap, 0 without a budget
  std::vector<double> samples_s;
};

// One timed rep: embed, context-parallel forward, then the head producing
// the next token after the last prompt position.
ReportRow bench_prefill(const BenchSpec& spec);
ReportRow bench_prefill(const BenchSpec& spec, const Model& model);

const std::vector<std::string>& report_columns();
void write_report_header(std::ostream& out);
void write_report_row(std::ostream& out, const ReportRow& row);
std::vector<ReportRow> read_report(std::istream& in);

double median(std::vector<double> v);
double coefficient_of_variation(const std::vector<double>& v);

// ---- config and self checks -------------------------------------------------

// Plain `key = value` lines; '#' starts a comment. Duplicate keys throw.
std::map<std::string, std::string> parse_kv_config(std::istream& in);
std::map<std::string, std::string> load_kv_config(const std::string& path);

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

// Quick cross-checks of every module; each suite reports independently.
std::vector<SuiteResult> run_verify_suites();

}  // namespace longctx
