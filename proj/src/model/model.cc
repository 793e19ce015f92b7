// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include "longctx/model.h"

#include <cstring>
#include <limits>
#include <numeric>

#include "longctx/error.h"
#include "longctx/random.h"

namespace longctx {

void ModelConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || head_dim == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model != n_heads * head_dim) {
    throw ConfigError("d_model " + std::to_string(d_model) + " != n_heads * head_dim (" +
                      std::to_string(n_heads) + " * " + std::to_string(head_dim) + ")");
  }
  if (vocab_size < 4) throw ConfigError("vocab_size must be >= 4 (pad, eos, bos, content)");
  if (vocab_size > static_cast<std::size_t>(std::numeric_limits<TokenId>::max())) {
    throw ConfigError("vocab_size exceeds the token id range");
  }
  rope().validate();
}

std::uint64_t ModelConfig::parameter_count() const {
  const std::uint64_t d = d_model, v = vocab_size, f = ffn(), n = n_layers;
  return v * d + n * (2 * d + 4 * d * d + 2 * d * f) + d + d * v;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  cfg_.ffn_dim = cfg_.ffn();
  const std::size_t d = cfg_.d_model, f = cfg_.ffn(), v = cfg_.vocab_size;
  Rng rng(cfg_.seed);
  auto uni = [&](std::vector<std::size_t> shape) {
    return uniform_tensor(std::move(shape), rng, -kInitRange, kInitRange);
  };
  w_.embed = uni({v, d});
  w_.layers.resize(cfg_.n_layers);
  for (LayerWeights& l : w_.layers) {
    l.attn_norm = Tensor::filled({d}, 1.0f);
    l.wq = uni({d, d});
    l.wk = uni({d, d});
    l.wv = uni({d, d});
    l.wo = uni({d, d});
    l.mlp_norm = Tensor::filled({d}, 1.0f);
    l.w_up = uni({d, f});
    l.w_down = uni({f, d});
  }
  w_.final_norm = Tensor::filled({d}, 1.0f);
  w_.unembed = uni({d, v});
}

Model::Model(const ModelConfig& cfg, ModelWeights weights) : cfg_(cfg), w_(std::move(weights)) {
  cfg_.validate();
  cfg_.ffn_dim = cfg_.ffn();
  check_shapes();
}

void Model::check_shapes() const {
  const std::size_t d = cfg_.d_model, f = cfg_.ffn(), v = cfg_.vocab_size;
  if (w_.layers.size() != cfg_.n_layers) throw ConfigError("layer count differs from config");
  auto expect = [](const Tensor& t, std::vector<std::size_t> shape, const std::string& name) {
    if (t.shape() != shape) {
      throw DimensionError("tensor " + name + " has shape " + t.shape_string() +
                           ", config implies " + Tensor(shape).shape_string());
    }
  };
  for (const auto& [name, t] : named_tensors()) {
    if (name == "embed") expect(*t, {v, d}, name);
    else if (name == "unembed") expect(*t, {d, v}, name);
    else if (name.ends_with("norm")) expect(*t, {d}, name);
    else if (name.ends_with("w_up")) expect(*t, {d, f}, name);
    else if (name.ends_with("w_down")) expect(*t, {f, d}, name);
    else expect(*t, {d, d}, name);
  }
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.emplace_back("embed", &w_.embed);
  for (std::size_t i = 0; i < w_.layers.size(); ++i) {
    const LayerWeights& l = w_.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "attn_norm", &l.attn_norm);
    out.emplace_back(p + "wq", &l.wq);
    out.emplace_back(p + "wk", &l.wk);
    out.emplace_back(p + "wv", &l.wv);
    out.emplace_back(p + "wo", &l.wo);
    out.emplace_back(p + "mlp_norm", &l.mlp_norm);
    out.emplace_back(p + "w_up", &l.w_up);
    out.emplace_back(p + "w_down", &l.w_down);
  }
  out.emplace_back("final_norm", &w_.final_norm);
  out.emplace_back("unembed", &w_.unembed);
  return out;
}

std::uint64_t Model::parameter_count() const {
  std::uint64_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->size();
  return n;
}

Tensor Model::embed(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw DimensionError("cannot embed an empty token list");
  const std::size_t d = cfg_.d_model;
  Tensor x({tokens.size(), d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) {
      throw IndexError("token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(cfg_.vocab_size));
    }
    std::memcpy(x.row(i).data(), w_.embed.row(static_cast<std::size_t>(t)).data(),
                d * sizeof(float));
  }
  return x;
}

QkvRows Model::attention_inputs(std::size_t layer, const Tensor& x_rows,
                                std::span<const std::size_t> positions) const {
  const LayerWeights& l = w_.layers.at(layer);
  const Tensor h = rms_norm(x_rows, l.attn_norm, kNormEps);
  QkvRows r{matmul(h, l.wq), matmul(h, l.wk), matmul(h, l.wv)};
  apply_rope_inplace(r.q, positions, cfg_.rope());
  apply_rope_inplace(r.k, positions, cfg_.rope());
  return r;
}

void Model::finish_layer(std::size_t layer, Tensor& x_rows, const Tensor& attn_rows) const {
  const LayerWeights& l = w_.layers.at(layer);
  const Tensor o = matmul(attn_rows, l.wo);
  for (std::size_t i = 0; i < x_rows.size(); ++i) x_rows[i] += o[i];
  Tensor up = matmul(rms_norm(x_rows, l.mlp_norm, kNormEps), l.w_up);
  gelu_inplace(up);
  const Tensor down = matmul(up, l.w_down);
  for (std::size_t i = 0; i < x_rows.size(); ++i) x_rows[i] += down[i];
}

Tensor Model::final_norm(const Tensor& x_rows) const {
  return rms_norm(x_rows, w_.final_norm, kNormEps);
}

Tensor Model::forward(const Tensor& x, std::span<const std::size_t> positions,
                      const AttentionBackend& attention) const {
  if (x.rank() != 2 || x.cols() != cfg_.d_model) {
    throw DimensionError("forward expects [L x " + std::to_string(cfg_.d_model) + "], got " +
                         x.shape_string());
  }
  if (positions.size() != x.rows()) throw DimensionError("positions length differs from L");
  Tensor h = x;
  for (std::size_t layer = 0; layer < cfg_.n_layers; ++layer) {
    const QkvRows qkv = attention_inputs(layer, h, positions);
    finish_layer(layer, h, attention(qkv));
  }
  return final_norm(h);
}

Tensor Model::forward(const Tensor& x, const AttentionMask& mask,
                      std::span<const std::size_t> positions) const {
  if (mask.size() != x.rows()) {
    throw DimensionError("mask covers " + std::to_string(mask.size()) + " tokens, input has " +
                         std::to_string(x.rows()));
  }
  return forward(x, positions, [&](const QkvRows& r) {
    return local_attention(r.q, r.k, r.v, cfg_.n_heads, mask);
  });
}

KvCache Model::make_cache(std::size_t capacity) const {
  if (capacity == 0) throw ConfigError("cache capacity must be positive");
  KvCache c;
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    c.k.emplace_back(std::vector<std::size_t>{capacity, cfg_.d_model});
    c.v.emplace_back(std::vector<std::size_t>{capacity, cfg_.d_model});
  }
  return c;
}

Tensor Model::step(const Tensor& x_new, KvCache& cache) const {
  const std::size_t n = x_new.rows();
  const std::size_t start = cache.length;
  const std::size_t total = start + n;
  if (cache.k.size() != cfg_.n_layers) throw DimensionError("cache built for another model");
  if (total > cache.capacity()) {
    throw RangeError("kv cache overflow: " + std::to_string(total) + " > " +
                     std::to_string(cache.capacity()));
  }
  const std::size_t d = cfg_.d_model, hd = cfg_.head_dim;
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), start);
  const AttentionMask causal = AttentionMask::causal(total);
  Tensor h = x_new;
  for (std::size_t layer = 0; layer < cfg_.n_layers; ++layer) {
    const QkvRows r = attention_inputs(layer, h, positions);
    Tensor& kc = cache.k[layer];
    Tensor& vc = cache.v[layer];
    std::memcpy(kc.row(start).data(), r.k.data().data(), n * d * sizeof(float));
    std::memcpy(vc.row(start).data(), r.v.data().data(), n * d * sizeof(float));
    Tensor attn({n, d});
    for (std::size_t head = 0; head < cfg_.n_heads; ++head) {
      const ConstMatrixView qh{r.q.data().data() + head * hd, n, hd, d};
      const ConstMatrixView kh{kc.data().data() + head * hd, total, hd, d};
      const ConstMatrixView vh{vc.data().data() + head * hd, total, hd, d};
      const Tensor o = finalize(attend_block(qh, kh, vh, start, 0, causal, attention_scale(hd)));
      for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(attn.row(i).data() + head * hd, o.row(i).data(), hd * sizeof(float));
      }
    }
    finish_layer(layer, h, attn);
  }
  cache.length = total;
  return final_norm(h);
}

Tensor embed_multimodal(const Model& model, std::span<const TokenId> text,
                        const std::vector<VisualInsertion>& groups) {
  const std::size_t d = model.config().d_model;
  std::size_t visual = 0;
  for (const VisualInsertion& g : groups) {
    if (g.features.rank() != 2 || g.features.cols() != d) {
      throw DimensionError("visual group width must equal d_model " + std::to_string(d));
    }
    visual += g.features.rows();
  }
  const std::size_t total = text.size() + visual;
  if (total == 0) throw DimensionError("embed_multimodal on an empty sequence");
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const VisualInsertion& g = groups[i];
    if (i > 0 && g.offset < prev_end) {
      throw LayoutError("visual group " + std::to_string(i) + " at offset " +
                        std::to_string(g.offset) + " overlaps the previous group ending at " +
                        std::to_string(prev_end));
    }
    if (g.offset + g.features.rows() > total) {
      throw LayoutError("visual group " + std::to_string(i) + " runs past the sequence end");
    }
    prev_end = g.offset + g.features.rows();
  }
  const Tensor text_rows = text.empty() ? Tensor() : model.embed(text);
  Tensor out({total, d});
  std::size_t next_text = 0;
  std::size_t gi = 0;
  for (std::size_t pos = 0; pos < total;) {
    if (gi < groups.size() && groups[gi].offset == pos) {
      const Tensor& f = groups[gi].features;
      std::memcpy(out.row(pos).data(), f.data().data(), f.size() * sizeof(float));
      pos += f.rows();
      ++gi;
      continue;
    }
    std::memcpy(out.row(pos).data(), text_rows.row(next_text++).data(), d * sizeof(float));
    ++pos;
  }
  return out;
}

}  // namespace longctx
