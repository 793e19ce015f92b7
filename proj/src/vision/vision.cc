// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include "longctx/vision.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>

#include "longctx/bytes.h"
#include "longctx/error.h"
#include "longctx/kernels.h"
#include "longctx/random.h"

namespace longctx {

Image::Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0.0f) {}

Image Image::filled(std::size_t w, std::size_t h, float r, float g, float b) {
  Image img(w, h);
  for (std::size_t p = 0; p < w * h; ++p) {
    img.pixels[3 * p] = r;
    img.pixels[3 * p + 1] = g;
    img.pixels[3 * p + 2] = b;
  }
  return img;
}

void Image::validate() const {
  if (width == 0 || height == 0) throw DimensionError("image must be at least 1x1");
  if (pixels.size() != width * height * 3) {
    throw DimensionError("image has " + std::to_string(pixels.size()) + " values, expected " +
                         std::to_string(width * height * 3));
  }
}

TileGrid select_tile_grid(std::size_t width, std::size_t height, std::size_t max_tiles) {
  if (width == 0 || height == 0) throw DimensionError("select_tile_grid needs a non-empty image");
  if (max_tiles == 0) throw ConfigError("max_tiles must be >= 1");
  const std::size_t cap = std::min(max_tiles, kMaxGridTiles);
  // |c/r - w/h| = |c*h - r*w| / (r*h). Errors e1/(r1 h), e2/(r2 h) compare
  // as e1*r2 vs e2*r1, all in exact integers.
  using U = unsigned __int128;
  auto err = [&](std::size_t r, std::size_t c) {
    const U ch = U(c) * height;
    const U rw = U(r) * width;
    return ch > rw ? ch - rw : rw - ch;
  };
  TileGrid best{1, 1, false};
  U best_err = err(1, 1);
  for (std::size_t r = 1; r <= cap; ++r) {
    for (std::size_t c = 1; r * c <= cap; ++c) {
      const U e = err(r, c);
      const U lhs = e * best.rows;
      const U rhs = best_err * r;
      bool take = lhs < rhs;
      if (lhs == rhs) {
        const std::size_t n = r * c;
        const std::size_t bn = best.grid_tiles();
        take = n < bn || (n == bn && c > best.cols);
      }
      if (take) {
        best = {r, c, false};
        best_err = e;
      }
    }
  }
  best.include_thumbnail = best.grid_tiles() > 1;
  return best;
}

Image resize_bilinear(const Image& img, std::size_t width, std::size_t height) {
  img.validate();
  if (width == 0 || height == 0) throw DimensionError("resize target must be at least 1x1");
  Image out(width, height);
  auto coord = [](std::size_t dst, std::size_t dst_len, std::size_t src_len) {
    if (dst_len == 1 || src_len == 1) return 0.0;
    return static_cast<double>(dst) * static_cast<double>(src_len - 1) /
           static_cast<double>(dst_len - 1);
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = coord(y, height, img.height);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = coord(x, width, img.width);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) + fx * (img.at(y0, x1, c) - img.at(y0, x0, c));
        const double bot = img.at(y1, x0, c) + fx * (img.at(y1, x1, c) - img.at(y1, x0, c));
        out.at(y, x, c) = static_cast<float>(top + fy * (bot - top));
      }
    }
  }
  return out;
}

std::vector<Image> tile_image(const Image& img, const TileGrid& grid) {
  img.validate();
  if (grid.rows == 0 || grid.cols == 0 || grid.grid_tiles() > kMaxGridTiles) {
    throw ConfigError("invalid tile grid " + std::to_string(grid.rows) + "x" +
                      std::to_string(grid.cols));
  }
  std::vector<Image> tiles;
  tiles.reserve(grid.total_tiles());
  const Image big = resize_bilinear(img, grid.cols * kTileSide, grid.rows * kTileSide);
  for (std::size_t tr = 0; tr < grid.rows; ++tr) {
    for (std::size_t tc = 0; tc < grid.cols; ++tc) {
      Image tile(kTileSide, kTileSide);
      for (std::size_t y = 0; y < kTileSide; ++y) {
        const float* src = &big.pixels[((tr * kTileSide + y) * big.width + tc * kTileSide) * 3];
        std::copy(src, src + kTileSide * 3, &tile.pixels[y * kTileSide * 3]);
      }
      tiles.push_back(std::move(tile));
    }
  }
  if (grid.include_thumbnail) tiles.push_back(resize_bilinear(img, kTileSide, kTileSide));
  return tiles;
}

namespace {

std::size_t exact_sqrt(std::size_t n) {
  auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  while (s * s > n) --s;
  while ((s + 1) * (s + 1) <= n) ++s;
  return s;
}

// Maps between the fine grid and cell-major layout. `to_cells` selects
// the direction.
Tensor regroup(const Tensor& in, std::size_t factor, bool to_cells) {
  if (in.rank() != 2) throw DimensionError("pixel shuffle expects [tokens x d]");
  if (factor == 0) throw ConfigError("shuffle factor must be positive");
  const std::size_t ff = factor * factor;
  std::size_t fine_tokens = 0;
  std::size_t d = 0;
  if (to_cells) {
    fine_tokens = in.rows();
    d = in.cols();
  } else {
    if (in.cols() % ff != 0) throw DimensionError("unshuffle width not divisible by factor^2");
    fine_tokens = in.rows() * ff;
    d = in.cols() / ff;
  }
  const std::size_t side = exact_sqrt(fine_tokens);
  if (side * side != fine_tokens || side % factor != 0) {
    throw DimensionError("pixel shuffle needs a square token grid divisible by " +
                         std::to_string(factor) + ", got " + std::to_string(fine_tokens) +
                         " tokens");
  }
  const std::size_t coarse = side / factor;
  Tensor out = to_cells ? Tensor({coarse * coarse, ff * d}) : Tensor({fine_tokens, d});
  for (std::size_t cr = 0; cr < coarse; ++cr) {
    for (std::size_t cc = 0; cc < coarse; ++cc) {
      for (std::size_t dy = 0; dy < factor; ++dy) {
        for (std::size_t dx = 0; dx < factor; ++dx) {
          const std::size_t fine = (cr * factor + dy) * side + cc * factor + dx;
          const std::size_t cell = cr * coarse + cc;
          const std::size_t slot = (dy * factor + dx) * d;
          const float* src = to_cells ? in.row(fine).data() : in.row(cell).data() + slot;
          float* dst = to_cells ? out.row(cell).data() + slot : out.row(fine).data();
          std::copy(src, src + d, dst);
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& features, std::size_t factor) {
  return regroup(features, factor, true);
}

Tensor pixel_unshuffle(const Tensor& features, std::size_t factor) {
  return regroup(features, factor, false);
}

Tensor project(const Tensor& features, const Projector& proj) {
  if (features.rank() != 2 || features.cols() != proj.in_width()) {
    throw DimensionError("projector expects width " + std::to_string(proj.in_width()) +
                         ", got " + features.shape_string());
  }
  Tensor h = matmul(features, proj.w1);
  add_row_bias(h, proj.b1);
  gelu_inplace(h);
  Tensor out = matmul(h, proj.w2);
  add_row_bias(out, proj.b2);
  return out;
}

VisionEncoder::VisionEncoder(const VisionConfig& cfg) : cfg_(cfg) {
  if (cfg.d_vision == 0 || cfg.d_model == 0 || cfg.proj_hidden == 0) {
    throw ConfigError("vision widths must be positive");
  }
  Rng rng(cfg.seed);
  constexpr float kInit = 0.02f;
  patch_w_ = uniform_tensor({kPatchWidth, cfg.d_vision}, rng, -kInit, kInit);
  patch_b_ = uniform_tensor({cfg.d_vision}, rng, -kInit, kInit);
  const std::size_t in = cfg.d_vision * kShuffleFactor * kShuffleFactor;
  proj_.w1 = uniform_tensor({in, cfg.proj_hidden}, rng, -kInit, kInit);
  proj_.b1 = uniform_tensor({cfg.proj_hidden}, rng, -kInit, kInit);
  proj_.w2 = uniform_tensor({cfg.proj_hidden, cfg.d_model}, rng, -kInit, kInit);
  proj_.b2 = uniform_tensor({cfg.d_model}, rng, -kInit, kInit);
}

Tensor VisionEncoder::encode_tile(const Image& tile) const {
  tile.validate();
  if (tile.width != kTileSide || tile.height != kTileSide) {
    throw DimensionError("encode_tile expects 448x448, got " + std::to_string(tile.width) + "x" +
                         std::to_string(tile.height));
  }
  // Patch vector layout: (py, px, channel).
  Tensor patches({kPatchesPerTile, kPatchWidth});
  for (std::size_t pr = 0; pr < kPatchesPerSide; ++pr) {
    for (std::size_t pc = 0; pc < kPatchesPerSide; ++pc) {
      float* dst = &patches.at(pr * kPatchesPerSide + pc, 0);
      for (std::size_t py = 0; py < kPatchSide; ++py) {
        const float* src = &tile.pixels[((pr * kPatchSide + py) * kTileSide + pc * kPatchSide) * 3];
        std::copy(src, src + kPatchSide * 3, dst + py * kPatchSide * 3);
      }
    }
  }
  Tensor out = matmul(patches, patch_w_);
  add_row_bias(out, patch_b_);
  return out;
}

VisualTokens VisionEncoder::encode_tiles(const std::vector<Image>& tiles) const {
  std::vector<Tensor> parts;
  parts.reserve(tiles.size());
  for (const Image& t : tiles) parts.push_back(project(pixel_shuffle(encode_tile(t)), proj_));
  return {concat_rows(parts), std::nullopt};
}

VisualTokens VisionEncoder::encode_image(const Image& img, std::size_t max_tiles) const {
  const TileGrid grid = select_tile_grid(img.width, img.height, max_tiles);
  return encode_tiles(tile_image(img, grid));
}

VisualTokens VisionEncoder::encode_frame(const Image& frame, std::size_t frame_index) const {
  VisualTokens v = encode_tiles(tile_image(frame, TileGrid{1, 1, false}));
  v.frame_index = frame_index;
  return v;
}

std::size_t frame_token_budget(std::size_t frames) {
  if (frames > std::numeric_limits<std::size_t>::max() / kTokensPerTile) {
    throw RangeError("frame_token_budget overflow");
  }
  return frames * kTokensPerTile;
}

namespace {

constexpr std::string_view kImgMagic = "IMG0";

std::vector<std::uint8_t> img0_bytes(const Image& img) {
  img.validate();
  if (img.width > 0xFFFFFFFFu || img.height > 0xFFFFFFFFu) throw RangeError("image too large");
  ByteWriter w;
  w.raw(kImgMagic);
  w.u32(static_cast<std::uint32_t>(img.width));
  w.u32(static_cast<std::uint32_t>(img.height));
  w.f32s(img.pixels);
  return w.take();
}

Image parse_img0(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "IMG0");
  if (r.raw(4) != kImgMagic) throw FormatError("IMG0: bad magic");
  Image img;
  img.width = r.u32();
  img.height = r.u32();
  if (img.width == 0 || img.height == 0) throw FormatError("IMG0: zero dimension");
  const std::uint64_t count = std::uint64_t{img.width} * img.height * 3;
  if (count * 4 != r.remaining()) {
    throw FormatError("IMG0: payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(count * 4));
  }
  img.pixels.resize(count);
  r.f32s(img.pixels);
  return img;
}

}  // namespace

void write_img0(std::ostream& out, const Image& img) {
  const auto bytes = img0_bytes(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("IMG0 write failed");
}

Image read_img0(std::istream& in) {
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return parse_img0(bytes);
}

void save_img0(const std::string& path, const Image& img) { write_file_bytes(path, img0_bytes(img)); }

Image load_img0(const std::string& path) { return parse_img0(read_file_bytes(path)); }

}  // namespace longctx
