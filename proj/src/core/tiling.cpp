#include "core/tiling.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/color.hpp"
#include "core/error.hpp"

namespace stainkit::tiling {

namespace fs = std::filesystem;

void validate(const TileSpec& spec) {
  if (spec.tile_px < 32) fail(ErrorCode::InvalidArgument, "tile_px must be >= 32");
  if (spec.overlap_fraction < 0.0 || spec.overlap_fraction >= 1.0) {
    fail(ErrorCode::InvalidArgument, "overlap_fraction must lie in [0, 1)");
  }
  if (spec.stride() < 1) fail(ErrorCode::InvalidArgument, "stride rounds to zero");
  if (spec.tissue_threshold < 0.0 || spec.tissue_threshold > 1.0) {
    fail(ErrorCode::InvalidArgument, "tissue_threshold must lie in [0, 1]");
  }
}

std::vector<int> tile_positions(int image_extent, int tile_px, int stride) {
  std::vector<int> positions;
  for (int p = 0; p + tile_px <= image_extent; p += stride) positions.push_back(p);
  int last = image_extent - tile_px;
  if (positions.empty() || positions.back() != last) positions.push_back(last);
  return positions;
}

std::vector<ImageTile> extract_tiles(const ImageTile& source, const TileSpec& spec) {
  validate(spec);
  if (source.width < spec.tile_px || source.height < spec.tile_px) {
    fail(ErrorCode::SourceTooSmall, "source smaller than one tile");
  }
  std::vector<int> xs = tile_positions(source.width, spec.tile_px, spec.stride());
  std::vector<int> ys = tile_positions(source.height, spec.tile_px, spec.stride());
  std::vector<ImageTile> tiles;
  tiles.reserve(xs.size() * ys.size());
  for (int y0 : ys) {
    for (int x0 : xs) {
      ImageTile tile;
      tile.width = spec.tile_px;
      tile.height = spec.tile_px;
      tile.pixels.resize(static_cast<std::size_t>(spec.tile_px) * spec.tile_px * 3);
      for (int y = 0; y < spec.tile_px; ++y) {
        const double* src = source.pixels.data() +
                            (static_cast<std::size_t>(y0 + y) * source.width + x0) * 3;
        double* dst = tile.pixels.data() + static_cast<std::size_t>(y) * spec.tile_px * 3;
        std::copy(src, src + static_cast<std::size_t>(spec.tile_px) * 3, dst);
      }
      tile.domain_label = source.domain_label;
      tile.source_id = source.source_id;
      tile.origin_xy = std::make_pair(x0, y0);
      tiles.push_back(std::move(tile));
    }
  }
  return tiles;
}

double tissue_fraction(const ImageTile& tile) {
  constexpr int kBins = 256;
  std::array<long long, kBins> hist{};
  std::size_t count = tile.pixel_count();
  for (std::size_t p = 0; p < count; ++p) {
    double r = tile.pixels[p * 3];
    double g = tile.pixels[p * 3 + 1];
    double b = tile.pixels[p * 3 + 2];
    double s = rgb_to_hsv(r, g, b)[1];
    int bin = static_cast<int>(s * 255.0 + 0.5);
    bin = std::clamp(bin, 0, kBins - 1);
    ++hist[static_cast<std::size_t>(bin)];
  }

  // Otsu: pick the split maximizing between-class variance, smallest bin
  // on ties. Bins above the split count as tissue.
  double total = static_cast<double>(count);
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += static_cast<double>(i) * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
  int best_split = 0;
  for (int k = 0; k < kBins - 1; ++k) {
    w0 += static_cast<double>(hist[static_cast<std::size_t>(k)]);
    sum0 += static_cast<double>(k) * hist[static_cast<std::size_t>(k)];
    double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    double mu0 = sum0 / w0;
    double mu1 = (sum_all - sum0) / w1;
    double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best_var) {
      best_var = between;
      best_split = k;
    }
  }
  long long foreground = 0;
  for (int i = best_split + 1; i < kBins; ++i) foreground += hist[static_cast<std::size_t>(i)];
  return static_cast<double>(foreground) / total;
}

ManifestResult build_manifest(const std::vector<SourceSpec>& sources, const TileSpec& spec,
                              const std::string& out_dir) {
  validate(spec);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create output directory: " + out_dir);

  ManifestResult result;
  for (const auto& source_spec : sources) {
    ImageTile source;
    try {
      source = load_png(source_spec.path);
    } catch (const Error& e) {
      result.failures.push_back(source_spec.path + ": " + e.what());
      continue;
    }
    source.source_id = source_spec.source_id;
    source.domain_label = source_spec.domain_label;
    std::vector<ImageTile> tiles;
    try {
      tiles = extract_tiles(source, spec);
    } catch (const Error& e) {
      result.failures.push_back(source_spec.path + ": " + e.what());
      continue;
    }
    for (const auto& tile : tiles) {
      double fraction = tissue_fraction(tile);
      if (fraction < spec.tissue_threshold) continue;
      auto [x0, y0] = *tile.origin_xy;
      std::string name = source_spec.source_id + "_y" + std::to_string(y0) + "_x" +
                         std::to_string(x0) + ".png";
      std::string path = (fs::path(out_dir) / name).string();
      try {
        save_png(tile, path);
      } catch (const Error& e) {
        result.failures.push_back(path + ": " + e.what());
        continue;
      }
      ManifestRow row;
      row.source_id = source_spec.source_id;
      row.x = x0;
      row.y = y0;
      row.tile_path = name;
      row.domain_label = source_spec.domain_label;
      row.annotated = source_spec.annotated;
      row.tissue_fraction = fraction;
      result.rows.push_back(std::move(row));
    }
  }

  std::sort(result.rows.begin(), result.rows.end(), [](const ManifestRow& a, const ManifestRow& b) {
    if (a.source_id != b.source_id) return a.source_id < b.source_id;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  fs::path final_path = fs::path(out_dir) / "manifest.csv";
  fs::path temp_path = fs::path(out_dir) / "manifest.csv.tmp";
  {
    std::ofstream csv(temp_path.string(), std::ios::trunc);
    if (!csv) fail(ErrorCode::Io, "cannot write manifest: " + temp_path.string());
    csv << "source_id,x,y,tile_path,domain_label,annotated,tissue_fraction\n";
    char fraction_buf[32];
    for (const auto& row : result.rows) {
      std::snprintf(fraction_buf, sizeof(fraction_buf), "%.6f", row.tissue_fraction);
      csv << row.source_id << ',' << row.x << ',' << row.y << ',' << row.tile_path << ','
          << row.domain_label << ',' << (row.annotated ? "true" : "false") << ','
          << fraction_buf << '\n';
    }
    if (!csv) fail(ErrorCode::Io, "manifest write failed: " + temp_path.string());
  }
  fs::rename(temp_path, final_path, ec);
  if (ec) fail(ErrorCode::Io, "cannot finalize manifest: " + final_path.string());
  result.manifest_path = final_path.string();
  return result;
}

}  // namespace stainkit::tiling
