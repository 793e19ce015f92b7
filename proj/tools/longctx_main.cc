// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "longctx/error.h"
#include "longctx/harness.h"
#include "longctx/packing.h"
#include "longctx/random.h"
#include "longctx/vision.h"

using namespace longctx;

namespace {

// Fills options the user did not pass on the command line from a key=value
// file. Keys use the long option names with '-' or '_'.
void apply_config(CLI::App& cmd, const std::string& path) {
  if (path.empty()) return;
  for (const auto& [raw_key, value] : load_kv_config(path)) {
    std::string key = raw_key;
    std::replace(key.begin(), key.end(), '_', '-');
    CLI::Option* opt = nullptr;
    try {
      opt = cmd.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw ConfigError("config key '" + raw_key + "' is not an option of '" + cmd.get_name() +
                        "'");
    }
    if (opt->count() == 0) {
      opt->add_result(value);
      opt->run_callback();
    }
  }
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw FormatError("cannot write '" + path + "'");
  return file;
}

struct BenchArgs {
  BenchSpec spec;
  std::string head = "masked";
  std::string out;
  std::string config;
};

int run_bench(const BenchArgs& a) {
  std::vector<HeadStrategy::Kind> heads;
  if (a.head == "all") {
    heads = {HeadStrategy::Kind::kFull, HeadStrategy::Kind::kChunked,
             HeadStrategy::Kind::kLogitsMasked};
  } else {
    heads = {parse_head_kind(a.head)};
  }
  std::ofstream file;
  std::ostream& out = open_out(a.out, file);
  write_report_header(out);
  const Model model(a.spec.model);
  std::map<std::string, ReportRow> by_head;
  for (const auto h : heads) {
    BenchSpec s = a.spec;
    s.head = h;
    const ReportRow row = bench_prefill(s, model);
    write_report_row(out, row);
    out.flush();
    by_head[row.head] = row;
    std::cerr << row.head << ": " << row.status << ", median " << row.wall_time_s << " s, cv "
              << row.wall_time_cv;
    if (row.reps >= 5 && row.wall_time_cv > 0.2) std::cerr << " (above the 20% target)";
    std::cerr << ", head flop ratio " << row.head_flop_ratio << '\n';
  }
  if (by_head.count("full") && by_head["full"].status == "ok") {
    for (const auto& [name, row] : by_head) {
      if (name == "full" || row.status != "ok") continue;
      std::cerr << name << "/full wall-time ratio " << row.wall_time_s / by_head["full"].wall_time_s
                << '\n';
    }
  }
  return 0;
}

struct CapacityArgs {
  std::uint64_t budget = 0;
  std::vector<std::uint64_t> workers{8};
  std::uint64_t vocab = 100'000;
  std::uint64_t bytes_per_logit = 4;
  std::uint64_t activation = 0;
  std::uint64_t chunk_len = kDefaultChunkLen;
  std::string config;
};

int run_capacity(const CapacityArgs& a) {
  CapacityConfig cc{a.activation, a.vocab, a.bytes_per_logit, a.chunk_len};
  std::uint64_t budget = a.budget;
  if (cc.activation_bytes_per_token == 0 || budget == 0) {
    // Default operating point: full head capped at 100K tokens on 8 workers
    // and masked near 417K.
    const auto cal = calibrate_capacity(100'000, 417'000, 8, a.vocab, a.bytes_per_logit);
    if (cc.activation_bytes_per_token == 0) cc.activation_bytes_per_token = cal.activation_bytes_per_token;
    if (budget == 0) budget = cal.budget_bytes;
  }
  std::cout << "budget_bytes,activation_bytes_per_token,vocab,workers,head,max_seq_len\n";
  for (const auto w : a.workers) {
    for (const auto h : {HeadStrategy::Kind::kFull, HeadStrategy::Kind::kChunked,
                         HeadStrategy::Kind::kLogitsMasked}) {
      const char* name = h == HeadStrategy::Kind::kFull      ? "full"
                         : h == HeadStrategy::Kind::kChunked ? "chunked"
                                                             : "masked";
      std::cout << budget << ',' << cc.activation_bytes_per_token << ',' << cc.vocab_size << ','
                << w << ',' << name << ',' << max_seq_len(budget, w, h, cc) << '\n';
    }
  }
  return 0;
}

struct PackArgs {
  std::size_t target_len = 64;
  std::string mode = "reset";
  std::string input;
  std::string out;
  std::size_t count = 8;
  std::uint64_t seed = 1;
};

// One sample per line: source_id, a tab, then comma-separated token ids.
std::vector<Sample> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open samples file '" + path + "'");
  std::vector<Sample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("sample line lacks a tab: '" + line + "'");
    Sample s;
    s.source_id = line.substr(0, tab);
    std::stringstream ss(line.substr(tab + 1));
    std::string cell;
    while (std::getline(ss, cell, ',')) s.tokens.push_back(static_cast<TokenId>(std::stol(cell)));
    out.push_back(std::move(s));
  }
  return out;
}

int run_pack(const PackArgs& a) {
  std::vector<Sample> samples;
  if (!a.input.empty()) {
    samples = read_samples(a.input);
  } else {
    Rng rng(a.seed);
    for (std::size_t i = 0; i < a.count; ++i) {
      Sample s;
      s.source_id = rng.below(2) ? "text" : "image";
      s.tokens.resize(1 + rng.below(a.target_len));
      for (auto& t : s.tokens) t = static_cast<TokenId>(kFirstContentToken + rng.below(1000));
      samples.push_back(std::move(s));
    }
  }
  const auto packs = pack_samples(samples, a.target_len, parse_packing_mode(a.mode));
  std::ofstream file;
  write_packed(open_out(a.out, file), packs);
  std::size_t pads = 0;
  for (const auto& p : packs) pads += p.pad_count;
  std::cerr << samples.size() << " samples -> " << packs.size() << " packs, " << pads
            << " pad tokens\n";
  return 0;
}

int run_tile(std::size_t width, std::size_t height, std::size_t max_tiles) {
  const TileGrid g = select_tile_grid(width, height, max_tiles);
  std::cout << "width,height,rows,cols,thumbnail,tiles,visual_tokens\n"
            << width << ',' << height << ',' << g.rows << ',' << g.cols << ','
            << (g.include_thumbnail ? 1 : 0) << ',' << g.total_tiles() << ','
            << g.total_tiles() * kTokensPerTile << '\n';
  return 0;
}

int run_verify() {
  bool ok = true;
  for (const SuiteResult& r : run_verify_suites()) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.seconds << " s)";
    if (!r.passed) std::cout << ": " << r.detail;
    std::cout << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"longctx: long-context inference toolkit"};
  app.require_subcommand(1);

  auto* verify = app.add_subcommand("verify", "Run the built-in cross-checks");

  BenchArgs bench;
  auto* bp = app.add_subcommand("bench-prefill", "Time prefill plus LM head");
  bp->add_option("--seq-len", bench.spec.seq_len, "Sequence length");
  bp->add_option("--frames", bench.spec.frames, "Video frames (256 tokens each)");
  bp->add_option("--head", bench.head, "full|chunked|masked|all");
  bp->add_option("--chunk-len", bench.spec.chunk_len, "Chunked head row count");
  bp->add_option("--workers", bench.spec.world_size, "Context-parallel ranks");
  bp->add_option("--transport", bench.spec.transport, "inproc|tcp");
  bp->add_option("--reps", bench.spec.reps, "Timed repetitions");
  bp->add_option("--out", bench.out, "CSV path (stdout when omitted)");
  bp->add_option("--d-model", bench.spec.model.d_model);
  bp->add_option("--layers", bench.spec.model.n_layers);
  bp->add_option("--heads", bench.spec.model.n_heads);
  bp->add_option("--head-dim", bench.spec.model.head_dim);
  bp->add_option("--vocab", bench.spec.model.vocab_size);
  bp->add_option("--seed", bench.spec.model.seed);
  bp->add_option("--budget", bench.spec.memory_budget_bytes, "Per-worker bytes for the OOM gate");
  bp->add_option("--activation-bytes", bench.spec.activation_bytes_per_token);
  bp->add_option("--config", bench.config, "key=value file");

  CapacityArgs cap;
  auto* cp = app.add_subcommand("capacity", "Max sequence length under the memory model");
  cp->add_option("--budget", cap.budget, "Per-worker bytes (calibrated default)");
  cp->add_option("--workers", cap.workers, "Worker counts")->expected(1, 64);
  cp->add_option("--vocab", cap.vocab);
  cp->add_option("--bytes-per-logit", cap.bytes_per_logit);
  cp->add_option("--activation-bytes", cap.activation, "Bytes per token (calibrated default)");
  cp->add_option("--chunk-len", cap.chunk_len);
  cp->add_option("--config", cap.config, "key=value file");

  PackArgs pack;
  auto* pk = app.add_subcommand("pack", "Pack samples into fixed-length sequences");
  pk->add_option("--target-len", pack.target_len);
  pk->add_option("--mode", pack.mode, "reset|shared");
  pk->add_option("--input", pack.input, "source<TAB>ids per line (random demo when omitted)");
  pk->add_option("--out", pack.out);
  pk->add_option("--count", pack.count, "Demo sample count");
  pk->add_option("--seed", pack.seed);

  std::size_t width = 0, height = 0, max_tiles = kMaxGridTiles;
  auto* tl = app.add_subcommand("tile", "Show the tile grid for an image size");
  tl->add_option("--width", width)->required();
  tl->add_option("--height", height)->required();
  tl->add_option("--max-tiles", max_tiles);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*verify) return run_verify();
    if (*bp) {
      apply_config(*bp, bench.config);
      return run_bench(bench);
    }
    if (*cp) {
      apply_config(*cp, cap.config);
      return run_capacity(cap);
    }
    if (*pk) return run_pack(pack);
    if (*tl) return run_tile(width, height, max_tiles);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
