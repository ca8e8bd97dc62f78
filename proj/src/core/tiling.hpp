#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core/image.hpp"

namespace stainkit::tiling {

struct TileSpec {
  int tile_px = 256;
  double microns = 64.0;  // carried as metadata, never used for resampling
  double overlap_fraction = 0.25;
  double tissue_threshold = 0.5;

  int stride() const { return static_cast<int>(std::lround(tile_px * (1.0 - overlap_fraction))); }
};

void validate(const TileSpec& spec);

// Grid positions k*stride per axis; if the grid does not reach the border
// a final tile is shifted inward to end exactly at it.
std::vector<int> tile_positions(int image_extent, int tile_px, int stride);

// Row-major tile extraction. origin_xy, source_id and domain_label are set
// on every returned tile.
std::vector<ImageTile> extract_tiles(const ImageTile& source, const TileSpec& spec);

// Foreground fraction after thresholding HSV saturation at the Otsu
// (between-class variance maximizing) level computed on the tile itself.
double tissue_fraction(const ImageTile& tile);

struct ManifestRow {
  std::string source_id;
  int x = 0;
  int y = 0;
  std::string tile_path;
  std::string domain_label;
  bool annotated = false;
  double tissue_fraction = 0.0;
};

struct SourceSpec {
  std::string path;
  std::string source_id;
  std::string domain_label;
  bool annotated = false;
};

struct ManifestResult {
  std::vector<ManifestRow> rows;
  std::vector<std::string> failures;  // one message per unreadable source
  std::string manifest_path;
};

// Extracts and filters every source, writes surviving tiles as PNGs under
// out_dir, then writes manifest.csv via a temp file and atomic rename.
// Unreadable sources are collected in failures; the manifest still covers
// every successful source.
ManifestResult build_manifest(const std::vector<SourceSpec>& sources, const TileSpec& spec,
                              const std::string& out_dir);

}  // namespace stainkit::tiling
