#pragma once

#include "core/error.hpp"
#include "core/image.hpp"
#include "core/tensor.hpp"

namespace stainkit {

// ImageTile stores interleaved HWC, networks run on planar NCHW.

inline Tensor tile_to_nchw(const ImageTile& tile) {
  Tensor t({1, 3, tile.height, tile.width});
  std::size_t plane = static_cast<std::size_t>(tile.height) * tile.width;
  for (int y = 0; y < tile.height; ++y) {
    for (int x = 0; x < tile.width; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * tile.width + x;
      for (int c = 0; c < 3; ++c) {
        t[static_cast<std::size_t>(c) * plane + p] = tile.at(y, x, c);
      }
    }
  }
  return t;
}

inline ImageTile nchw_to_tile(const Tensor& t, int batch_index = 0) {
  const auto& s = t.shape();
  if (s.size() != 4 || s[1] != 3 || batch_index < 0 || batch_index >= s[0]) {
    fail(ErrorCode::ShapeMismatch, "nchw_to_tile expects an N,3,H,W tensor");
  }
  int h = s[2], w = s[3];
  ImageTile tile;
  tile.width = w;
  tile.height = h;
  tile.pixels.resize(static_cast<std::size_t>(h) * w * 3);
  std::size_t plane = static_cast<std::size_t>(h) * w;
  const double* base = t.data() + static_cast<std::size_t>(batch_index) * 3 * plane;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * w + x;
      for (int c = 0; c < 3; ++c) {
        tile.pixels[p * 3 + c] = base[static_cast<std::size_t>(c) * plane + p];
      }
    }
  }
  return tile;
}

// Stacks same-shaped single tiles into one batch tensor.
inline Tensor stack_tiles(const std::vector<ImageTile>& tiles) {
  if (tiles.empty()) fail(ErrorCode::InvalidArgument, "stack_tiles: empty batch");
  int h = tiles.front().height, w = tiles.front().width;
  Tensor t({static_cast<int>(tiles.size()), 3, h, w});
  std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t b = 0; b < tiles.size(); ++b) {
    const ImageTile& tile = tiles[b];
    if (tile.height != h || tile.width != w) {
      fail(ErrorCode::ShapeMismatch, "stack_tiles: mixed tile sizes");
    }
    double* base = t.data() + b * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) {
        base[static_cast<std::size_t>(c) * plane + p] = tile.pixels[p * 3 + c];
      }
    }
  }
  return t;
}

}  // namespace stainkit
