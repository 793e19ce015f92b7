// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <map>

#include "longctx/bytes.h"
#include "longctx/error.h"
#include "longctx/model.h"

namespace longctx {
namespace {

constexpr std::string_view kMagic = "LVTA";
constexpr std::uint32_t kMaxName = 256;

std::vector<std::pair<std::string, std::uint64_t>> config_fields(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"head_dim", c.head_dim},
          {"vocab_size", c.vocab_size}, {"ffn_dim", c.ffn()},
          {"rope_base", std::bit_cast<std::uint64_t>(c.rope_base)},
          {"seed", c.seed}};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  const auto fields = config_fields(model.config());
  w.u32(static_cast<std::uint32_t>(fields.size()));
  for (const auto& [name, value] : fields) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u64(value);
  }
  const auto tensors = model.named_tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t e : t->shape()) w.u64(e);
    w.f32s(t->data());
  }
  return w.take();
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.remaining() < 4 || r.raw(4) != kMagic) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  auto read_name = [&](const char* what) {
    const std::uint32_t len = r.u32();
    if (len == 0 || len > kMaxName) {
      throw FormatError(std::string("checkpoint: bad ") + what + " name length " +
                        std::to_string(len));
    }
    return r.raw(len);
  };

  std::map<std::string, std::uint64_t> fields;
  const std::uint32_t n_fields = r.u32();
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    std::string name = read_name("config field");
    const std::uint64_t value = r.u64();
    if (!fields.emplace(name, value).second) {
      throw FormatError("checkpoint: duplicate config field " + name);
    }
  }
  ModelConfig cfg;
  auto take = [&](const std::string& name) {
    const auto it = fields.find(name);
    if (it == fields.end()) throw FormatError("checkpoint: missing config field " + name);
    const std::uint64_t v = it->second;
    fields.erase(it);
    return v;
  };
  cfg.d_model = take("d_model");
  cfg.n_layers = take("n_layers");
  cfg.n_heads = take("n_heads");
  cfg.head_dim = take("head_dim");
  cfg.vocab_size = take("vocab_size");
  cfg.ffn_dim = take("ffn_dim");
  cfg.rope_base = std::bit_cast<double>(take("rope_base"));
  cfg.seed = take("seed");
  if (!fields.empty()) throw FormatError("checkpoint: unknown config field " + fields.begin()->first);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }
  // Guard allocation sizes before trusting the extents below.
  if (cfg.parameter_count() > bytes.size()) throw FormatError("checkpoint: truncated payload");

  // Reuse the seeded layout for names and shapes, then overwrite every value.
  Model model(cfg);
  ModelWeights& w = model.mutable_weights();
  std::map<std::string, Tensor*> slots;
  slots["embed"] = &w.embed;
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    LayerWeights& l = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    for (auto [n, t] : {std::pair{"attn_norm", &l.attn_norm}, {"wq", &l.wq}, {"wk", &l.wk},
                        {"wv", &l.wv}, {"wo", &l.wo}, {"mlp_norm", &l.mlp_norm},
                        {"w_up", &l.w_up}, {"w_down", &l.w_down}}) {
      slots[p + n] = t;
    }
  }
  slots["final_norm"] = &w.final_norm;
  slots["unembed"] = &w.unembed;

  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != slots.size()) {
    throw FormatError("checkpoint: has " + std::to_string(n_tensors) + " tensors, config needs " +
                      std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_name("tensor");
    const auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint: unexpected or repeated tensor " + name);
    Tensor& t = *it->second;
    const std::uint32_t rank = r.u32();
    if (rank != t.rank()) throw FormatError("checkpoint: tensor " + name + " has wrong rank");
    for (std::size_t a = 0; a < rank; ++a) {
      if (r.u64() != t.extent(a)) {
        throw FormatError("checkpoint: tensor " + name + " does not match config shape " +
                          t.shape_string());
      }
    }
    r.f32s(t.data());
    if (!t.all_finite()) throw FormatError("checkpoint: tensor " + name + " has non-finite values");
    slots.erase(it);
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after last tensor");
  return model;
}

void save_checkpoint(const std::string& path, const Model& model) {
  write_file_bytes(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace longctx
