// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "longctx/context_parallel.h"
#include "longctx/decode.h"
#include "longctx/error.h"
#include "longctx/harness.h"
#include "longctx/lm_head.h"
#include "longctx/packing.h"
#include "longctx/vision.h"

namespace py = pybind11;
using namespace longctx;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D float array");
  Tensor t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

FloatArray to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

AttentionMask mask_for(std::size_t len, bool causal) {
  return causal ? AttentionMask::causal(len) : AttentionMask::none(len);
}

HeadStrategy strategy_for(const std::string& head, std::size_t chunk_len,
                          const std::optional<std::vector<std::size_t>>& positions) {
  switch (parse_head_kind(head)) {
    case HeadStrategy::Kind::kFull:
      return HeadStrategy::full();
    case HeadStrategy::Kind::kChunked:
      return HeadStrategy::chunked(chunk_len);
    case HeadStrategy::Kind::kLogitsMasked:
      if (!positions) throw EmptySelectionError("masked head needs positions");
      return HeadStrategy::logits_masked(*positions);
  }
  throw ConfigError("unreachable head kind");
}

// Owns the model together with the decode adapter that borrows it.
class PyToyModel {
 public:
  explicit PyToyModel(const ModelConfig& cfg) : model_(cfg), toy_(model_) {}
  const ModelConfig& config() const { return model_.config(); }
  std::vector<TokenId> generate_fixed(const TokenList& prompt, std::size_t max_new,
                                      std::size_t world_size, const std::string& transport,
                                      TokenId eos) {
    const GenerationRequest req{prompt, max_new, eos};
    const auto t = make_transport(transport, world_size);
    return longctx::generate_fixed(toy_, req, plan_for_request(req, world_size), *t);
  }
  std::vector<TokenId> generate_incremental(const TokenList& prompt, std::size_t max_new,
                                            bool use_cache, TokenId eos) {
    return longctx::generate_incremental(toy_, GenerationRequest{prompt, max_new, eos}, use_cache);
  }
  FloatArray forward(const TokenList& tokens, std::size_t world_size,
                     const std::string& transport) {
    const auto t = make_transport(transport, world_size);
    return to_numpy(run_distributed_forward(model_, tokens, plan_shards(tokens.size(), world_size),
                                            *t));
  }
  FloatArray unembed() const { return to_numpy(model_.weights().unembed); }
  std::size_t forwards() const { return toy_.forwards(); }
  py::bytes checkpoint() const {
    const auto b = encode_checkpoint(model_);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  }

 private:
  Model model_;
  ToyDecodeModel toy_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of longctx";

  static auto& base = py::register_exception<Error>(m, "LongctxError", PyExc_RuntimeError);
#define LONGCTX_PY_ERROR(Name) \
  static auto& py_##Name = py::register_exception<Name>(m, #Name, base.ptr())
  LONGCTX_PY_ERROR(DimensionError);
  LONGCTX_PY_ERROR(ConfigError);
  LONGCTX_PY_ERROR(DegenerateRowError);
  LONGCTX_PY_ERROR(IndexError);
  LONGCTX_PY_ERROR(RangeError);
  LONGCTX_PY_ERROR(EmptySelectionError);
  LONGCTX_PY_ERROR(EmptyWindowError);
  LONGCTX_PY_ERROR(EmptyMixtureError);
  LONGCTX_PY_ERROR(OversizeSampleError);
  LONGCTX_PY_ERROR(UnderfullError);
  LONGCTX_PY_ERROR(LayoutError);
  LONGCTX_PY_ERROR(FormatError);
  LONGCTX_PY_ERROR(InvariantError);
  LONGCTX_PY_ERROR(RingBrokenError);
#undef LONGCTX_PY_ERROR
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const RingBrokenError& e) {
      const auto cls = py::reinterpret_borrow<py::object>(py_RingBrokenError.ptr());
      py::object err = cls(e.what());
      err.attr("dead_rank") = e.dead_rank();
      PyErr_SetObject(py_RingBrokenError.ptr(), err.ptr());
    }
  });

  // ---- context parallel
  m.def("plan_shards", [](std::size_t len, std::size_t world) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& r : plan_shards(len, world).ranges) out.emplace_back(r.start, r.end);
    return out;
  }, py::arg("seq_len"), py::arg("world_size"));

  m.def("local_attention", [](const FloatArray& q, const FloatArray& k, const FloatArray& v,
                              std::size_t n_heads, bool causal) {
    const Tensor tq = to_tensor(q);
    return to_numpy(local_attention(tq, to_tensor(k), to_tensor(v), n_heads,
                                    mask_for(tq.rows(), causal)));
  }, py::arg("q"), py::arg("k"), py::arg("v"), py::arg("n_heads") = 1, py::arg("causal") = true);

  m.def("ring_attention", [](const FloatArray& q, const FloatArray& k, const FloatArray& v,
                             std::size_t n_heads, std::size_t world_size, bool causal,
                             const std::string& transport, std::optional<std::size_t> dead_rank) {
    const Tensor tq = to_tensor(q), tk = to_tensor(k), tv = to_tensor(v);
    const ShardPlan plan = plan_shards(tq.rows(), world_size);
    std::vector<QkvRows> shards;
    for (const auto& r : plan.ranges) {
      shards.push_back({tq.slice_rows(r.start, r.end), tk.slice_rows(r.start, r.end),
                        tv.slice_rows(r.start, r.end)});
    }
    auto inner = make_transport(transport, world_size);
    std::vector<Tensor> parts;
    {
      py::gil_scoped_release release;
      if (dead_rank) {
        FaultyTransport faulty(*inner, *dead_rank, 0);
        parts = ring_attention(plan, shards, n_heads, mask_for(tq.rows(), causal), faulty);
      } else {
        parts = ring_attention(plan, shards, n_heads, mask_for(tq.rows(), causal), *inner);
      }
    }
    return to_numpy(concat_rows(parts));
  }, py::arg("q"), py::arg("k"), py::arg("v"), py::arg("n_heads") = 1,
     py::arg("world_size") = 2, py::arg("causal") = true, py::arg("transport") = "inproc",
     py::arg("dead_rank") = py::none());

  m.def("encode_frame", [](std::uint16_t origin, std::uint16_t hop, std::size_t start,
                           const FloatArray& k, const FloatArray& v) {
    const Tensor tk = to_tensor(k);
    const auto b = encode_frame({origin, hop, {start, start + tk.rows()}, tk, to_tensor(v)});
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });
  m.def("decode_frame", [](const py::bytes& data) {
    const std::string s = data;
    const RingFrame f = decode_frame(std::span(reinterpret_cast<const std::uint8_t*>(s.data()),
                                               s.size()));
    py::dict d;
    d["origin"] = f.origin_rank;
    d["hop"] = f.hop;
    d["start"] = f.range.start;
    d["end"] = f.range.end;
    d["k"] = to_numpy(f.k_block);
    d["v"] = to_numpy(f.v_block);
    return d;
  });

  // ---- LM head and memory model
  m.def("compute_logits", [](const FloatArray& hidden, const FloatArray& unembed,
                             const std::string& head, std::size_t chunk_len,
                             std::optional<std::vector<std::size_t>> positions) {
    LogitRowMeter meter;
    const HeadOutput out = compute_logits(to_tensor(hidden), to_tensor(unembed),
                                          strategy_for(head, chunk_len, positions), &meter);
    py::dict stats;
    stats["passes"] = out.stats.passes;
    stats["peak_logit_rows"] = out.stats.peak_logit_rows;
    stats["flops"] = out.stats.flops;
    return py::make_tuple(to_numpy(out.logits), out.rows, stats);
  }, py::arg("hidden"), py::arg("unembed"), py::arg("head") = "full",
     py::arg("chunk_len") = kDefaultChunkLen, py::arg("positions") = py::none());

  m.def("loss_over_window", [](const FloatArray& hidden, const FloatArray& unembed,
                               const std::vector<TokenId>& targets) {
    return loss_over_window(to_tensor(hidden), to_tensor(unembed), targets, targets.size());
  });

  m.def("estimate_logit_memory", [](std::uint64_t rows, std::uint64_t vocab, std::uint64_t bytes,
                                    std::uint64_t reference_rows) {
    const MemoryEstimate e = estimate_logit_memory(rows, vocab, bytes, reference_rows);
    py::dict d;
    d["logit_bytes"] = e.logit_bytes;
    d["gigabytes"] = e.gigabytes();
    d["reduction_factor"] = e.reduction_factor;
    return d;
  }, py::arg("rows"), py::arg("vocab"), py::arg("bytes_per"), py::arg("reference_rows") = 0);

  m.def("max_seq_len", [](std::uint64_t budget, std::uint64_t workers, const std::string& head,
                          std::uint64_t activation, std::uint64_t vocab, std::uint64_t bytes,
                          std::uint64_t chunk_len) {
    return max_seq_len(budget, workers, parse_head_kind(head),
                       CapacityConfig{activation, vocab, bytes, chunk_len});
  }, py::arg("budget_bytes"), py::arg("workers"), py::arg("head"),
     py::arg("activation_bytes_per_token"), py::arg("vocab") = 100'000,
     py::arg("bytes_per_logit") = 4, py::arg("chunk_len") = kDefaultChunkLen);

  m.def("calibrate_capacity", [](std::uint64_t full_cap, std::uint64_t masked_cap,
                                 std::uint64_t workers, std::uint64_t vocab, std::uint64_t bytes) {
    const auto c = calibrate_capacity(full_cap, masked_cap, workers, vocab, bytes);
    return py::make_tuple(c.activation_bytes_per_token, c.budget_bytes);
  }, py::arg("full_cap"), py::arg("masked_cap"), py::arg("workers"), py::arg("vocab") = 100'000,
     py::arg("bytes_per_logit") = 4);

  // ---- vision
  m.def("select_tile_grid", [](std::size_t w, std::size_t h, std::size_t max_tiles) {
    const TileGrid g = select_tile_grid(w, h, max_tiles);
    return py::make_tuple(g.rows, g.cols, g.include_thumbnail);
  }, py::arg("width"), py::arg("height"), py::arg("max_tiles") = kMaxGridTiles);
  m.def("frame_token_budget", &frame_token_budget);
  m.def("pixel_shuffle", [](const FloatArray& x, std::size_t factor) {
    return to_numpy(pixel_shuffle(to_tensor(x), factor));
  }, py::arg("features"), py::arg("factor") = kShuffleFactor);
  m.def("visual_token_count", [](std::size_t w, std::size_t h, std::size_t max_tiles) {
    return select_tile_grid(w, h, max_tiles).total_tiles() * kTokensPerTile;
  }, py::arg("width"), py::arg("height"), py::arg("max_tiles") = kMaxGridTiles);

  // ---- packing
  m.def("pack_samples", [](const std::vector<std::pair<TokenList, std::string>>& samples,
                           std::size_t target_len, const std::string& mode) {
    std::vector<Sample> in;
    for (const auto& [toks, src] : samples) in.push_back({toks, src, {}});
    py::list out;
    for (const PackedSequence& p : pack_samples(in, target_len, parse_packing_mode(mode))) {
      py::dict d;
      d["tokens"] = p.tokens;
      d["position_ids"] = p.position_ids;
      d["segment_ids"] = p.segment_ids;
      d["pad_count"] = p.pad_count;
      d["members"] = p.members;
      out.append(d);
    }
    return out;
  }, py::arg("samples"), py::arg("target_len"), py::arg("mode") = "reset");

  // ---- toy model and decoding
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("head_dim", &ModelConfig::head_dim)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
      .def_readwrite("rope_base", &ModelConfig::rope_base)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("parameter_count", &ModelConfig::parameter_count);

  py::class_<PyToyModel>(m, "ToyModel")
      .def(py::init<const ModelConfig&>(), py::arg("config") = ModelConfig{})
      .def_property_readonly("config", &PyToyModel::config)
      .def("generate_fixed", &PyToyModel::generate_fixed, py::arg("prompt"), py::arg("max_new"),
           py::arg("world_size") = 1, py::arg("transport") = "inproc",
           py::arg("eos_token") = kEosToken)
      .def("generate_incremental", &PyToyModel::generate_incremental, py::arg("prompt"),
           py::arg("max_new"), py::arg("use_cache") = true, py::arg("eos_token") = kEosToken)
      .def("forward", &PyToyModel::forward, py::arg("tokens"), py::arg("world_size") = 1,
           py::arg("transport") = "inproc")
      .def("unembed", &PyToyModel::unembed)
      .def_property_readonly("forwards", &PyToyModel::forwards)
      .def("checkpoint", &PyToyModel::checkpoint);

  m.def("verify", [] {
    py::list out;
    for (const SuiteResult& r : run_verify_suites()) out.append(py::make_tuple(r.name, r.passed, r.detail));
    return out;
  });
}
