#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stainkit {

// An H x W x 3 image with channel values in [0, 1], row-major, interleaved
// RGB. The unit of work for every module; producers are responsible for
// clamping into range.
struct ImageTile {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // height * width * 3

  std::optional<std::string> domain_label;
  std::optional<std::string> source_id;
  std::optional<std::pair<int, int>> origin_xy;

  ImageTile() = default;
  ImageTile(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_shape(const ImageTile& other) const {
    return width == other.width && height == other.height;
  }
};

// 8-bit PNG I/O. Decoding maps byte b -> b/255; encoding rounds half-up and
// clamps to [0, 255]. Grayscale, palette and alpha sources are converted to
// plain RGB on load.
ImageTile load_png(const std::filesystem::path& path);
void save_png(const ImageTile& tile, const std::filesystem::path& path);

inline unsigned char encode_byte(double v) {
  double scaled = v * 255.0 + 0.5;
  if (scaled < 0.0) scaled = 0.0;
  if (scaled > 255.0) scaled = 255.0;
  return static_cast<unsigned char>(scaled);
}

}  // namespace stainkit
