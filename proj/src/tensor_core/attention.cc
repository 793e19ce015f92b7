// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include "longctx/attention.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "longctx/error.h"

namespace longctx {
namespace {

constexpr float kEmptyMax = -std::numeric_limits<float>::max();
constexpr std::size_t kQueryTile = 64;
constexpr std::size_t kKeyTile = 256;
constexpr std::size_t kLanes = 16;

#if defined(__AVX512F__)

// Op-for-op vector form of exp_nonpositive; scalef does the 2^n scaling,
// which is exact for the clamped range.
inline __m512 exp_nonpositive_v(__m512 x) {
  const __m512 xc = _mm512_max_ps(x, _mm512_set1_ps(-87.0f));
  const __m512 n = _mm512_roundscale_ps(_mm512_mul_ps(xc, _mm512_set1_ps(1.44269504088896341f)),
                                        _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m512 r = _mm512_fmadd_ps(n, _mm512_set1_ps(-0.693359375f), xc);
  r = _mm512_fmadd_ps(n, _mm512_set1_ps(2.12194440e-4f), r);
  __m512 p = _mm512_set1_ps(1.9875691500e-4f);
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(1.3981999507e-3f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(8.3334519073e-3f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(4.1665795894e-2f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(1.6666665459e-1f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(5.0000001201e-1f));
  p = _mm512_add_ps(_mm512_fmadd_ps(p, _mm512_mul_ps(r, r), r), _mm512_set1_ps(1.0f));
  const __m512 y = _mm512_scalef_ps(p, n);
  const __mmask16 under = _mm512_cmp_ps_mask(x, _mm512_set1_ps(-87.0f), _CMP_LT_OQ);
  return _mm512_mask_blend_ps(under, y, _mm512_setzero_ps());
}

#endif

// Scales s in place and returns its max. The vector path reduces with a
// fixed tree, so results are deterministic.
inline float scale_and_max(float* s, std::size_t n, float scale) {
  std::size_t c = 0;
  float m = -std::numeric_limits<float>::max();
#if defined(__AVX512F__)
  const __m512 sc = _mm512_set1_ps(scale);
  __m512 acc = _mm512_set1_ps(m);
  for (; c + kLanes <= n; c += kLanes) {
    const __m512 x = _mm512_mul_ps(_mm512_loadu_ps(s + c), sc);
    _mm512_storeu_ps(s + c, x);
    acc = _mm512_max_ps(acc, x);
  }
  m = _mm512_reduce_max_ps(acc);
#endif
  for (; c < n; ++c) {
    s[c] *= scale;
    m = std::max(m, s[c]);
  }
  return m;
}

// s[c] = exp(s[c] - shift); returns the sum of the new values.
inline float exp_shift_sum(float* s, std::size_t n, float shift) {
  std::size_t c = 0;
  float sum = 0.0f;
#if defined(__AVX512F__)
  __m512 acc = _mm512_setzero_ps();
  const __m512 sh = _mm512_set1_ps(shift);
  for (; c + kLanes <= n; c += kLanes) {
    const __m512 e = exp_nonpositive_v(_mm512_sub_ps(_mm512_loadu_ps(s + c), sh));
    _mm512_storeu_ps(s + c, e);
    acc = _mm512_add_ps(acc, e);
  }
  sum = _mm512_reduce_add_ps(acc);
#endif
  for (; c < n; ++c) {
    s[c] = exp_nonpositive(s[c] - shift);
    sum += s[c];
  }
  return sum;
}

}  // namespace

// --- AttentionMask ----------------------------------------------------------

AttentionMask AttentionMask::none(std::size_t length) {
  AttentionMask m;
  m.kind_ = Kind::kNone;
  m.length_ = length;
  return m;
}

AttentionMask AttentionMask::causal(std::size_t length) {
  AttentionMask m;
  m.kind_ = Kind::kCausal;
  m.length_ = length;
  return m;
}

AttentionMask AttentionMask::segment_causal(std::vector<std::uint32_t> segments) {
  AttentionMask m;
  m.kind_ = Kind::kSegmentCausal;
  m.length_ = segments.size();
  m.segments_ = std::move(segments);
  m.run_start_.resize(m.length_);
  for (std::size_t i = 0; i < m.length_; ++i) {
    m.run_start_[i] =
        (i > 0 && m.segments_[i] == m.segments_[i - 1]) ? m.run_start_[i - 1] : i;
  }
  return m;
}

AttentionMask AttentionMask::causal_with_padding(std::size_t length, std::size_t valid_length) {
  if (valid_length > length) throw IndexError("valid length exceeds mask length");
  std::vector<std::uint32_t> segments(length, kPadSegment);
  std::fill(segments.begin(), segments.begin() + static_cast<std::ptrdiff_t>(valid_length), 0u);
  return segment_causal(std::move(segments));
}

AttentionMask AttentionMask::dense(const Tensor& allowed) {
  if (allowed.rank() != 2 || allowed.rows() != allowed.cols()) {
    throw DimensionError("dense mask must be square, got " + allowed.shape_string());
  }
  AttentionMask m;
  m.kind_ = Kind::kDense;
  m.length_ = allowed.rows();
  m.dense_.resize(allowed.size());
  for (std::size_t i = 0; i < allowed.size(); ++i) {
    if (allowed[i] != 0.0f && allowed[i] != 1.0f) throw ConfigError("mask entries must be 0 or 1");
    m.dense_[i] = allowed[i] != 0.0f;
  }
  return m;
}

bool AttentionMask::is_pad(std::size_t index) const {
  return kind_ == Kind::kSegmentCausal && segments_[index] == kPadSegment;
}

bool AttentionMask::allowed(std::size_t query, std::size_t key) const {
  if (query >= length_ || key >= length_) throw IndexError("mask index out of range");
  switch (kind_) {
    case Kind::kNone:
      return true;
    case Kind::kCausal:
      return key <= query;
    case Kind::kSegmentCausal:
      if (query == key) return true;
      return key < query && segments_[query] == segments_[key] &&
             segments_[query] != kPadSegment;
    case Kind::kDense:
      return dense_[query * length_ + key] != 0;
  }
  return false;
}

AttentionMask::Cover AttentionMask::classify(std::size_t q0, std::size_t q1, std::size_t k0,
                                             std::size_t k1) const {
  switch (kind_) {
    case Kind::kNone:
      return Cover::kFull;
    case Kind::kCausal:
      if (k0 > q1 - 1) return Cover::kEmpty;
      return k1 - 1 <= q0 ? Cover::kFull : Cover::kPartial;
    case Kind::kSegmentCausal:
      if (k0 > q1 - 1) return Cover::kEmpty;
      if (k1 - 1 <= q0 && run_start_[q1 - 1] <= k0 && segments_[k0] != kPadSegment) {
        return Cover::kFull;
      }
      return Cover::kPartial;
    case Kind::kDense:
      return Cover::kPartial;
  }
  return Cover::kPartial;
}

std::optional<AttentionMask::KeySpan> AttentionMask::key_span(std::size_t query) const {
  if (query >= length_) throw IndexError("mask index out of range");
  switch (kind_) {
    case Kind::kNone:
      return KeySpan{0, length_};
    case Kind::kCausal:
      return KeySpan{0, query + 1};
    case Kind::kSegmentCausal:
      if (segments_[query] == kPadSegment) return KeySpan{query, query + 1};
      return KeySpan{run_start_[query], query + 1};
    case Kind::kDense:
      return std::nullopt;
  }
  return std::nullopt;
}

Tensor AttentionMask::to_dense() const {
  Tensor out({length_, length_});
  for (std::size_t i = 0; i < length_; ++i)
    for (std::size_t j = 0; j < length_; ++j) out.at(i, j) = allowed(i, j) ? 1.0f : 0.0f;
  return out;
}

// --- accumulators -----------------------------------------------------------

SoftmaxAccumulator SoftmaxAccumulator::empty(std::size_t tokens, std::size_t head_dim) {
  return {Tensor({tokens, head_dim}), Tensor::filled({tokens}, kEmptyMax), Tensor({tokens})};
}

SoftmaxAccumulator attend_block(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v,
                                std::size_t q_start, std::size_t k_start,
                                const AttentionMask& mask, float scale) {
  const std::size_t hd = q.cols;
  if (k.cols != hd || v.cols != hd || k.rows != v.rows) {
    throw DimensionError("attend_block q/k/v widths or key counts differ");
  }
  if (q.rows == 0 || k.rows == 0) throw DimensionError("attend_block on an empty block");
  if (q_start + q.rows > mask.size() || k_start + k.rows > mask.size()) {
    throw IndexError("attention block exceeds mask extent");
  }
  SoftmaxAccumulator acc = SoftmaxAccumulator::empty(q.rows, hd);

  // K transposed tile by tile: tile t occupies [hd x cols_t] at offset t*hd*kKeyTile.
  const std::size_t key_tiles = (k.rows + kKeyTile - 1) / kKeyTile;
  std::vector<float> kt(key_tiles * hd * kKeyTile);
  for (std::size_t kj = 0; kj < k.rows; kj += kKeyTile) {
    const std::size_t cols = std::min(kKeyTile, k.rows - kj);
    float* tile = kt.data() + (kj / kKeyTile) * hd * kKeyTile;
    for (std::size_t c = 0; c < cols; ++c) {
      const float* krow = k.data + (kj + c) * k.ld;
      for (std::size_t d = 0; d < hd; ++d) tile[d * cols + c] = krow[d];
    }
  }
  std::vector<float> qt(kQueryTile * hd);
  std::vector<float> scores(kQueryTile * kKeyTile);
  std::vector<float> pv(kQueryTile * hd);
  std::vector<float> alpha(kQueryTile);
  std::vector<std::uint8_t> touched(kQueryTile);

  for (std::size_t qi = 0; qi < q.rows; qi += kQueryTile) {
    const std::size_t rows = std::min(kQueryTile, q.rows - qi);
    for (std::size_t r = 0; r < rows; ++r) {
      std::memcpy(qt.data() + r * hd, q.data + (qi + r) * q.ld, hd * sizeof(float));
    }
    float* out = acc.partial_out.data().data() + qi * hd;
    float* run_max = acc.running_max.data().data() + qi;
    float* run_den = acc.running_denom.data().data() + qi;
    const std::size_t gq0 = q_start + qi;

    for (std::size_t kj = 0; kj < k.rows; kj += kKeyTile) {
      const std::size_t cols = std::min(kKeyTile, k.rows - kj);
      const std::size_t gk0 = k_start + kj;
      const auto cover = mask.classify(gq0, gq0 + rows, gk0, gk0 + cols);
      if (cover == AttentionMask::Cover::kEmpty) continue;

      const float* tile = kt.data() + (kj / kKeyTile) * hd * kKeyTile;
      gemm({qt.data(), rows, hd, hd}, {tile, hd, cols, cols},
           {scores.data(), rows, cols, cols});

      for (std::size_t r = 0; r < rows; ++r) {
        float* s = scores.data() + r * cols;
        // Allowed columns of this row are [lo, hi) when the mask is
        // structured; dense masks fall back to a per-element test.
        std::size_t lo = 0, hi = cols;
        bool per_element = false;
        if (cover != AttentionMask::Cover::kFull) {
          if (const auto span = mask.key_span(gq0 + r)) {
            lo = std::clamp(span->begin, gk0, gk0 + cols) - gk0;
            hi = std::clamp(span->end, gk0, gk0 + cols) - gk0;
            if (hi < lo) hi = lo;
          } else {
            per_element = true;
          }
        }
        bool any = hi > lo;
        float tile_max = kEmptyMax;
        if (per_element) {
          any = false;
          for (std::size_t c = 0; c < cols; ++c) {
            if (mask.allowed(gq0 + r, gk0 + c)) {
              s[c] *= scale;
              tile_max = any ? std::max(tile_max, s[c]) : s[c];
              any = true;
            } else {
              s[c] = kEmptyMax;
            }
          }
        } else if (any) {
          tile_max = scale_and_max(s + lo, hi - lo, scale);
        }
        touched[r] = any;
        if (!any) {
          alpha[r] = 1.0f;
          std::fill(s, s + cols, 0.0f);
          continue;
        }
        const bool fresh = run_den[r] == 0.0f;
        const float new_max = fresh ? tile_max : std::max(run_max[r], tile_max);
        alpha[r] = fresh ? 0.0f : exp_nonpositive(run_max[r] - new_max);
        float sum = 0.0f;
        if (per_element) {
          exp_shift_sum(s, cols, new_max);
          for (std::size_t c = 0; c < cols; ++c) {
            if (!mask.allowed(gq0 + r, gk0 + c)) s[c] = 0.0f;
            sum += s[c];
          }
        } else {
          sum = exp_shift_sum(s + lo, hi - lo, new_max);
          std::fill(s, s + lo, 0.0f);
          std::fill(s + hi, s + cols, 0.0f);
        }
        run_den[r] = run_den[r] * alpha[r] + sum;
        run_max[r] = new_max;
      }

      gemm({scores.data(), rows, cols, cols}, {v.data + kj * v.ld, cols, hd, v.ld},
           {pv.data(), rows, hd, hd});
      for (std::size_t r = 0; r < rows; ++r) {
        if (!touched[r]) continue;
        float* o = out + r * hd;
        const float* p = pv.data() + r * hd;
        const float a = alpha[r];
        for (std::size_t d = 0; d < hd; ++d) o[d] = o[d] * a + p[d];
      }
    }
  }
  return acc;
}

SoftmaxAccumulator attend_block(const Tensor& q, const Tensor& k, const Tensor& v,
                                std::size_t q_start, std::size_t k_start,
                                const AttentionMask& mask, float scale) {
  return attend_block(view(q), view(k), view(v), q_start, k_start, mask, scale);
}

SoftmaxAccumulator merge_accumulators(const SoftmaxAccumulator& a, const SoftmaxAccumulator& b) {
  if (a.partial_out.shape() != b.partial_out.shape() ||
      a.running_max.shape() != b.running_max.shape() ||
      a.running_denom.shape() != b.running_denom.shape()) {
    throw DimensionError("merge_accumulators shape mismatch: " + a.partial_out.shape_string() +
                         " vs " + b.partial_out.shape_string());
  }
  const std::size_t n = a.tokens();
  const std::size_t hd = a.head_dim();
  SoftmaxAccumulator out = SoftmaxAccumulator::empty(n, hd);
  for (std::size_t i = 0; i < n; ++i) {
    const float da = a.running_denom[i];
    const float db = b.running_denom[i];
    const auto ra = a.partial_out.row(i);
    const auto rb = b.partial_out.row(i);
    auto ro = out.partial_out.row(i);
    if (db == 0.0f || da == 0.0f) {
      const SoftmaxAccumulator& src = db == 0.0f ? a : b;
      const auto rs = db == 0.0f ? ra : rb;
      std::copy(rs.begin(), rs.end(), ro.begin());
      out.running_max[i] = src.running_max[i];
      out.running_denom[i] = src.running_denom[i];
      continue;
    }
    const float ma = a.running_max[i];
    const float mb = b.running_max[i];
    const float m = std::max(ma, mb);
    const float sa = std::exp(ma - m);
    const float sb = std::exp(mb - m);
    for (std::size_t d = 0; d < hd; ++d) ro[d] = ra[d] * sa + rb[d] * sb;
    out.running_max[i] = m;
    out.running_denom[i] = da * sa + db * sb;
  }
  return out;
}

Tensor finalize(const SoftmaxAccumulator& acc) {
  const std::size_t n = acc.tokens();
  const std::size_t hd = acc.head_dim();
  Tensor out({n, hd});
  for (std::size_t i = 0; i < n; ++i) {
    const float den = acc.running_denom[i];
    if (!(den > 0.0f)) {
      throw DegenerateRowError("attention row " + std::to_string(i) + " has no allowed key");
    }
    const auto src = acc.partial_out.row(i);
    auto dst = out.row(i);
    for (std::size_t d = 0; d < hd; ++d) dst[d] = src[d] / den;
  }
  return out;
}

Tensor local_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                       const AttentionMask& mask) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("local_attention expects equal q/k/v shapes");
  }
  if (n_heads == 0 || q.cols() % n_heads != 0) throw DimensionError("width not divisible by heads");
  const std::size_t width = q.cols();
  const std::size_t hd = width / n_heads;
  const std::size_t len = q.rows();
  Tensor out({len, width});
  for (std::size_t h = 0; h < n_heads; ++h) {
    const ConstMatrixView qh{q.data().data() + h * hd, len, hd, width};
    const ConstMatrixView kh{k.data().data() + h * hd, len, hd, width};
    const ConstMatrixView vh{v.data().data() + h * hd, len, hd, width};
    const Tensor head = finalize(attend_block(qh, kh, vh, 0, 0, mask, attention_scale(hd)));
    for (std::size_t i = 0; i < len; ++i) {
      std::memcpy(out.row(i).data() + h * hd, head.row(i).data(), hd * sizeof(float));
    }
  }
  return out;
}

}  // namespace longctx
