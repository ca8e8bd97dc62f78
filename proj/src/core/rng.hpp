#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace stainkit::rng {

// All randomness in the toolkit is drawn through these helpers so that a
// seed pins the exact bit pattern of every draw. std::mt19937_64 output is
// specified by the standard; the distributions below avoid the
// implementation-defined std::*_distribution classes.

using Engine = std::mt19937_64;

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  // splitmix64 finalizer over a simple combine; used to derive per-tile seeds.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (a + 1) + 0xbf58476d1ce4e5b9ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t uniform_index(Engine& g, std::uint64_t n) {
  // Unbiased rejection sampling (Lemire-style threshold on the low word).
  std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t r = g();
    if (r >= threshold) return r % n;
  }
}

// Standard normal via Box-Muller. Stateless: draws two uniforms per call.
inline double normal(Engine& g) {
  double u1 = uniform01(g);
  double u2 = uniform01(g);
  double r = std::sqrt(-2.0 * std::log1p(-u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::string save_state(const Engine& g) {
  std::ostringstream os;
  os << g;
  return os.str();
}

inline Engine load_state(const std::string& s) {
  Engine g;
  std::istringstream is(s);
  is >> g;
  return g;
}

}  // namespace stainkit::rng
