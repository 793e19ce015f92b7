// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "longctx/attention.h"
#include "longctx/kernels.h"
#include "longctx/tensor.h"
#include "longctx/tokens.h"

namespace longctx {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t head_dim = 32;
  std::size_t vocab_size = 512;
  std::size_t ffn_dim = 0;  // 0 means 4 * d_model
  double rope_base = 1e6;
  std::uint64_t seed = 1;

  std::size_t ffn() const { return ffn_dim ? ffn_dim : 4 * d_model; }
  RopeConfig rope() const { return {rope_base, head_dim}; }
  void validate() const;
  // V*d + n_layers*(2d + 4d^2 + 2*d*f) + d + d*V
  std::uint64_t parameter_count() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Tensor attn_norm;  // [d]
  Tensor wq, wk, wv, wo;  // [d x d]
  Tensor mlp_norm;   // [d]
  Tensor w_up;       // [d x f]
  Tensor w_down;     // [f x d]
};

struct ModelWeights {
  Tensor embed;  // [V x d]
  std::vector<LayerWeights> layers;
  Tensor final_norm;  // [d]
  Tensor unembed;     // [d x V]
};

struct QkvRows {
  Tensor q, k, v;  // [rows x d], q and k already rotated
};

// Per-layer K/V history for incremental decoding.
struct KvCache {
  std::vector<Tensor> k, v;  // per layer, [capacity x d]
  std::size_t length = 0;
  std::size_t capacity() const { return k.empty() ? 0 : k.front().rows(); }
};

// Multi-head attention over one layer's q/k/v rows. The default backend is
// local_attention with the forward's mask.
using AttentionBackend = std::function<Tensor(const QkvRows&)>;

// Decoder-only toy transformer with RMS pre-norm:
//   embed -> [x += attn(norm(x)); x += mlp(norm(x))] * n_layers -> norm
class Model {
 public:
  // Seeded weights: norm gains are 1, everything else U[-0.02, 0.02],
  // drawn in named_tensors() order.
  explicit Model(const ModelConfig& cfg);
  Model(const ModelConfig& cfg, ModelWeights weights);

  const ModelConfig& config() const { return cfg_; }
  const ModelWeights& weights() const { return w_; }
  ModelWeights& mutable_weights() { return w_; }

  Tensor embed(std::span<const TokenId> tokens) const;

  // Hidden states after the final norm, [L x d].
  Tensor forward(const Tensor& x, const AttentionMask& mask,
                 std::span<const std::size_t> positions) const;
  Tensor forward(const Tensor& x, std::span<const std::size_t> positions,
                 const AttentionBackend& attention) const;

  // Shard-local pieces of one layer, shared by the local and ring forwards.
  QkvRows attention_inputs(std::size_t layer, const Tensor& x_rows,
                           std::span<const std::size_t> positions) const;
  void finish_layer(std::size_t layer, Tensor& x_rows, const Tensor& attn_rows) const;
  Tensor final_norm(const Tensor& x_rows) const;

  KvCache make_cache(std::size_t capacity) const;
  // Appends x_new (positions cache.length..) to the cache; returns their
  // final hidden states.
  Tensor step(const Tensor& x_new, KvCache& cache) const;

  // Stable order used for seeding and checkpoints.
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  std::uint64_t parameter_count() const;

 private:
  void check_shapes() const;

  ModelConfig cfg_;
  ModelWeights w_;
};

inline constexpr float kNormEps = 1e-6f;
inline constexpr float kInitRange = 0.02f;

// A block of projected visual rows to place at `offset` in the final
// sequence.
struct VisualInsertion {
  std::size_t offset = 0;
  Tensor features;  // [count x d_model]
};

// Text rows fill every position not covered by an insertion, in order.
// Offsets are final-sequence coordinates; groups must be sorted and
// non-overlapping and fit in text_len + sum(counts).
Tensor embed_multimodal(const Model& model, std::span<const TokenId> text,
                        const std::vector<VisualInsertion>& groups);

// "LVTA" checkpoint.
std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace longctx
