// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "longctx/tensor.h"

namespace longctx {

inline constexpr std::size_t kTileSide = 448;
inline constexpr std::size_t kPatchSide = 14;
inline constexpr std::size_t kPatchesPerSide = kTileSide / kPatchSide;       // 32
inline constexpr std::size_t kPatchesPerTile = kPatchesPerSide * kPatchesPerSide;  // 1024
inline constexpr std::size_t kPatchWidth = kPatchSide * kPatchSide * 3;      // 588
inline constexpr std::size_t kShuffleFactor = 2;
inline constexpr std::size_t kTokensPerTile = kPatchesPerTile / (kShuffleFactor * kShuffleFactor);
inline constexpr std::size_t kMaxGridTiles = 12;

// RGB image, HWC order, values nominally in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h);  // black
  static Image filled(std::size_t w, std::size_t h, float r, float g, float b);

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  void validate() const;
  friend bool operator==(const Image&, const Image&) = default;
};

struct TileGrid {
  std::size_t rows = 1;
  std::size_t cols = 1;
  bool include_thumbnail = false;

  std::size_t grid_tiles() const { return rows * cols; }
  std::size_t total_tiles() const { return grid_tiles() + (include_thumbnail ? 1 : 0); }
  friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

// Grid whose cols/rows is closest to width/height among rows*cols <=
// min(max_tiles, 12). Equal aspect error prefers fewer tiles, then more
// cols, so the result is scale invariant.
TileGrid select_tile_grid(std::size_t width, std::size_t height, std::size_t max_tiles);

// Corner-aligned bilinear resize: output corners sample input corners.
Image resize_bilinear(const Image& img, std::size_t width, std::size_t height);

// rows*cols tiles in row-major order, then the thumbnail if requested.
std::vector<Image> tile_image(const Image& img, const TileGrid& grid);

// [1024 x 4d] <-> [256 x 4d]: each output token concatenates a 2x2 cell of
// the 32x32 grid, members in row-major order.
Tensor pixel_shuffle(const Tensor& features, std::size_t factor = kShuffleFactor);
Tensor pixel_unshuffle(const Tensor& features, std::size_t factor = kShuffleFactor);

// Two-layer MLP: linear, GELU, linear.
struct Projector {
  Tensor w1;  // [in x hidden]
  Tensor b1;  // [hidden]
  Tensor w2;  // [hidden x out]
  Tensor b2;  // [out]

  std::size_t in_width() const { return w1.rows(); }
  std::size_t out_width() const { return w2.cols(); }
};
Tensor project(const Tensor& features, const Projector& proj);

struct VisionConfig {
  std::size_t d_vision = 64;
  std::size_t d_model = 128;
  std::size_t proj_hidden = 256;
  std::uint64_t seed = 7;
};

struct VisualTokens {
  Tensor features;  // [count x d_model]
  std::optional<std::size_t> frame_index;
  std::size_t count() const { return features.empty() ? 0 : features.rows(); }
};

// Toy stand-in for a pretrained ViT: a seeded linear patch embedding
// followed by pixel shuffle and the projector.
class VisionEncoder {
 public:
  explicit VisionEncoder(const VisionConfig& cfg);

  const VisionConfig& config() const { return cfg_; }
  // 448x448 tile -> [1024 x d_vision].
  Tensor encode_tile(const Image& tile) const;
  // Tiles (grid, then thumbnail) -> [tiles*256 x d_model].
  VisualTokens encode_image(const Image& img, std::size_t max_tiles = kMaxGridTiles) const;
  // Video frames use one 448 tile and no thumbnail.
  VisualTokens encode_frame(const Image& frame, std::size_t frame_index) const;

  const Tensor& patch_weight() const { return patch_w_; }
  const Tensor& patch_bias() const { return patch_b_; }
  const Projector& projector() const { return proj_; }

 private:
  VisualTokens encode_tiles(const std::vector<Image>& tiles) const;

  VisionConfig cfg_;
  Tensor patch_w_;  // [588 x d_vision]
  Tensor patch_b_;  // [d_vision]
  Projector proj_;
};

std::size_t frame_token_budget(std::size_t frames);

// "IMG0" container: magic, u32 width, u32 height, w*h*3 float32 LE (HWC).
void write_img0(std::ostream& out, const Image& img);
Image read_img0(std::istream& in);
void save_img0(const std::string& path, const Image& img);
Image load_img0(const std::string& path);

}  // namespace longctx
