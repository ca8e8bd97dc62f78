#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/image.hpp"

namespace stainkit {

// ITU-R BT.601 luma weights, used for every grayscale conversion.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

// Written so achromatic pixels (r == g == b) map to themselves exactly,
// which makes grayscale idempotent in floating point.
inline double luma(double r, double g, double b) {
  return g + kLumaR * (r - g) + kLumaB * (b - g);
}

// Color-jitter strengths. Brightness/contrast/saturation are scaled by a
// multiplier drawn uniformly from [max(0, 1-f), 1+f]; hue is shifted by a
// uniform draw from [-hue, +hue] of a full hue turn. All-zero parameters are
// the identity.
struct JitterParams {
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
  double hue = 0.0;  // in [0, 0.5]
};

// 3-channel grayscale: every channel becomes the luma. Metadata preserved.
ImageTile to_grayscale3(const ImageTile& tile);

// Deterministic color jitter. The seed fully determines the four draws,
// taken in the fixed order brightness, contrast, saturation, hue. Output is
// clamped to [0, 1] after each stage; a stage whose draw lands exactly on
// the identity value is skipped so the all-zero case is bitwise exact.
ImageTile color_jitter(const ImageTile& tile, const JitterParams& params, std::uint64_t seed);

// The projection H into the intermediate domain: jitter then grayscale.
// With all-zero params this collapses to the plain grayscale H'.
ImageTile augment_gray(const ImageTile& tile, const JitterParams& params, std::uint64_t seed);

// Optical density (Beer-Lambert): OD_c = -log10((I_c*255 + 1) / I0).
// Returns height*width*3 values; the inverse clamps back into [0, 1].
std::vector<double> rgb_to_od(const ImageTile& tile, double background_intensity = 240.0);
ImageTile od_to_rgb(const std::vector<double>& od, int width, int height,
                    double background_intensity = 240.0);

// Reinhard's decorrelated l-alpha-beta space: RGB -> LMS -> log10 -> fixed
// orthogonal transform. Returns height*width*3 (l, alpha, beta) triples.
std::vector<double> rgb_to_lab(const ImageTile& tile);
ImageTile lab_to_rgb(const std::vector<double>& lab, int width, int height);

// HSV helpers (h in [0,1), s and v in [0,1]).
std::array<double, 3> rgb_to_hsv(double r, double g, double b);
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace stainkit
