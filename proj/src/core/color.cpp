#include "core/color.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace stainkit {

namespace {

void check_valid(const ImageTile& tile) {
  if (tile.width < 1 || tile.height < 1 ||
      tile.pixels.size() != tile.pixel_count() * 3) {
    fail(ErrorCode::InvalidArgument, "invalid image tile");
  }
}

double mean_luma(const ImageTile& tile) {
  double sum = 0.0;
  for (std::size_t i = 0; i < tile.pixel_count(); ++i) {
    sum += luma(tile.pixels[3 * i], tile.pixels[3 * i + 1], tile.pixels[3 * i + 2]);
  }
  return sum / static_cast<double>(tile.pixel_count());
}

}  // namespace

ImageTile to_grayscale3(const ImageTile& tile) {
  check_valid(tile);
  ImageTile out = tile;
  for (std::size_t i = 0; i < tile.pixel_count(); ++i) {
    double l = luma(tile.pixels[3 * i], tile.pixels[3 * i + 1], tile.pixels[3 * i + 2]);
    out.pixels[3 * i] = l;
    out.pixels[3 * i + 1] = l;
    out.pixels[3 * i + 2] = l;
  }
  return out;
}

ImageTile color_jitter(const ImageTile& tile, const JitterParams& params, std::uint64_t seed) {
  check_valid(tile);
  rng::Engine gen(seed);
  // Fixed draw order; every factor is sampled even when zero so that seed
  // consumption does not depend on the parameter values.
  double b = rng::uniform(gen, std::max(0.0, 1.0 - params.brightness), 1.0 + params.brightness);
  double c = rng::uniform(gen, std::max(0.0, 1.0 - params.contrast), 1.0 + params.contrast);
  double s = rng::uniform(gen, std::max(0.0, 1.0 - params.saturation), 1.0 + params.saturation);
  double h = rng::uniform(gen, -params.hue, params.hue);

  ImageTile out = tile;
  if (b != 1.0) {
    for (double& v : out.pixels) v = clamp01(v * b);
  }
  if (c != 1.0) {
    double gray = mean_luma(out);
    for (double& v : out.pixels) v = clamp01(c * v + (1.0 - c) * gray);
  }
  if (s != 1.0) {
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
      double l = luma(out.pixels[3 * i], out.pixels[3 * i + 1], out.pixels[3 * i + 2]);
      for (int ch = 0; ch < 3; ++ch) {
        out.pixels[3 * i + ch] = clamp01(s * out.pixels[3 * i + ch] + (1.0 - s) * l);
      }
    }
  }
  if (h != 0.0) {
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
      auto hsv = rgb_to_hsv(out.pixels[3 * i], out.pixels[3 * i + 1], out.pixels[3 * i + 2]);
      double hue = hsv[0] + h;
      hue -= std::floor(hue);  // wrap to [0, 1)
      auto rgb = hsv_to_rgb(hue, hsv[1], hsv[2]);
      for (int ch = 0; ch < 3; ++ch) out.pixels[3 * i + ch] = clamp01(rgb[ch]);
    }
  }
  return out;
}

ImageTile augment_gray(const ImageTile& tile, const JitterParams& params, std::uint64_t seed) {
  return to_grayscale3(color_jitter(tile, params, seed));
}

std::vector<double> rgb_to_od(const ImageTile& tile, double background_intensity) {
  check_valid(tile);
  if (background_intensity <= 0.0) {
    fail(ErrorCode::InvalidArgument, "background intensity must be positive");
  }
  std::vector<double> od(tile.pixels.size());
  for (std::size_t i = 0; i < tile.pixels.size(); ++i) {
    od[i] = -std::log10((tile.pixels[i] * 255.0 + 1.0) / background_intensity);
  }
  return od;
}

ImageTile od_to_rgb(const std::vector<double>& od, int width, int height,
                    double background_intensity) {
  if (od.size() != static_cast<std::size_t>(width) * height * 3) {
    fail(ErrorCode::ShapeMismatch, "optical density buffer does not match dimensions");
  }
  ImageTile out(width, height);
  for (std::size_t i = 0; i < od.size(); ++i) {
    out.pixels[i] = clamp01((background_intensity * std::pow(10.0, -od[i]) - 1.0) / 255.0);
  }
  return out;
}

namespace {

// Reinhard's RGB<->LMS matrices and the orthogonal log-space transform.
constexpr double kRgb2Lms[3][3] = {
    {0.3811, 0.5783, 0.0402},
    {0.1967, 0.7244, 0.0782},
    {0.0241, 0.1288, 0.8444},
};
constexpr double kLms2Rgb[3][3] = {
    {4.4687, -3.5887, 0.1196},
    {-1.2197, 2.3831, -0.1626},
    {0.0585, -0.2611, 1.2057},
};
const double kSqrt3 = std::sqrt(3.0);
const double kSqrt6 = std::sqrt(6.0);
const double kSqrt2 = std::sqrt(2.0);
constexpr double kLmsFloor = 1e-6;  // keeps the log finite on black pixels

}  // namespace

std::vector<double> rgb_to_lab(const ImageTile& tile) {
  check_valid(tile);
  std::vector<double> lab(tile.pixels.size());
  for (std::size_t i = 0; i < tile.pixel_count(); ++i) {
    double rgb[3] = {tile.pixels[3 * i], tile.pixels[3 * i + 1], tile.pixels[3 * i + 2]};
    double lms[3];
    for (int r = 0; r < 3; ++r) {
      double v = kRgb2Lms[r][0] * rgb[0] + kRgb2Lms[r][1] * rgb[1] + kRgb2Lms[r][2] * rgb[2];
      lms[r] = std::log10(std::max(v, kLmsFloor));
    }
    lab[3 * i] = (lms[0] + lms[1] + lms[2]) / kSqrt3;
    lab[3 * i + 1] = (lms[0] + lms[1] - 2.0 * lms[2]) / kSqrt6;
    lab[3 * i + 2] = (lms[0] - lms[1]) / kSqrt2;
  }
  return lab;
}

ImageTile lab_to_rgb(const std::vector<double>& lab, int width, int height) {
  if (lab.size() != static_cast<std::size_t>(width) * height * 3) {
    fail(ErrorCode::ShapeMismatch, "lab buffer does not match dimensions");
  }
  ImageTile out(width, height);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    double l = lab[3 * i], a = lab[3 * i + 1], b = lab[3 * i + 2];
    double logl = l / kSqrt3 + a / kSqrt6 + b / kSqrt2;
    double logm = l / kSqrt3 + a / kSqrt6 - b / kSqrt2;
    double logs = l / kSqrt3 - 2.0 * a / kSqrt6;
    double lms[3] = {std::pow(10.0, logl), std::pow(10.0, logm), std::pow(10.0, logs)};
    for (int r = 0; r < 3; ++r) {
      double v = kLms2Rgb[r][0] * lms[0] + kLms2Rgb[r][1] * lms[1] + kLms2Rgb[r][2] * lms[2];
      out.pixels[3 * i + r] = clamp01(v);
    }
  }
  return out;
}

std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  double mx = std::max({r, g, b});
  double mn = std::min({r, g, b});
  double delta = mx - mn;
  double h = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      h = (g - b) / delta;
    } else if (mx == g) {
      h = 2.0 + (b - r) / delta;
    } else {
      h = 4.0 + (r - g) / delta;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
  }
  double s = mx > 0.0 ? delta / mx : 0.0;
  return {h, s, mx};
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  if (s <= 0.0) return {v, v, v};
  double hh = h - std::floor(h);
  hh *= 6.0;
  int sector = std::min(5, static_cast<int>(hh));
  double f = hh - sector;
  double p = v * (1.0 - s);
  double q = v * (1.0 - s * f);
  double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace stainkit
