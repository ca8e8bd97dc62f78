#pragma once

#include <string>
#include <vector>

#include "core/autodiff.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace stainkit::nn {

// Trainable tensor with its checkpoint name.
struct NamedVar {
  std::string name;
  ad::Var var;
};

// Persistent non-trainable state (spectral-norm power-iteration vectors).
struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct GeneratorConfig {
  int depth = 6;
  int innermost_filters = 32;
  int input_size = 256;
  double leaky_slope = 0.2;
  int in_channels = 3;
  int out_channels = 3;
};

struct DiscriminatorConfig {
  int blocks = 3;
  int base_filters = 16;
  int power_iterations = 1;
  double leaky_slope = 0.2;
  int in_channels = 3;
};

// Encoder widths outermost to innermost: the two deepest blocks share
// innermost_filters, every step outward halves with a floor of 4.
std::vector<int> unet_widths(const GeneratorConfig& cfg);

struct LayerShape {
  std::string name;
  int channels = 0;
  int height = 0;
  int width = 0;
};

class Conv2d {
public:
  Conv2d() = default;
  Conv2d(int cin, int cout, int kernel, int stride, int pad, rng::Engine& g);
  ad::Var forward(const ad::Var& x) const;
  void collect(const std::string& prefix, std::vector<NamedVar>& params);

  ad::Var weight;  // {Cout, Cin, k, k}
  ad::Var bias;    // {Cout}
  int stride = 1;
  int pad = 0;
};

class ConvTranspose2d {
public:
  ConvTranspose2d() = default;
  ConvTranspose2d(int cin, int cout, int kernel, int stride, int pad, rng::Engine& g);
  ad::Var forward(const ad::Var& x) const;
  void collect(const std::string& prefix, std::vector<NamedVar>& params);

  ad::Var weight;  // {Cin, Cout, k, k}
  ad::Var bias;    // {Cout}
  int stride = 1;
  int pad = 0;
};

// Convolution whose weight is divided by the leading singular value of the
// unfolded kernel before use. u and v persist across steps; power_iterate
// refreshes them out-of-band and never touches the autodiff graph.
class SpectralConv2d {
public:
  SpectralConv2d() = default;
  SpectralConv2d(int cin, int cout, int kernel, int stride, int pad, rng::Engine& g);
  ad::Var forward(const ad::Var& x) const;
  void power_iterate(int iterations);
  double sigma() const;
  Tensor normalized_weight() const;
  void collect(const std::string& prefix, std::vector<NamedVar>& params,
               std::vector<NamedTensor>& state);

  ad::Var weight;  // {Cout, Cin, k, k}
  ad::Var bias;    // {Cout}
  Tensor u;        // {Cout}
  Tensor v;        // {Cin*k*k}
  int stride = 1;
  int pad = 0;
};

// U-Net with stride-2 k4 convolutions down (conv, leaky ReLU, instance
// norm), k4 transposed convolutions up (convT, ReLU, instance norm) and
// skip concatenations. The outermost up block ends in a sigmoid so the
// output lands in [0,1].
class UNetGenerator {
public:
  UNetGenerator() = default;
  UNetGenerator(GeneratorConfig cfg, rng::Engine& g);
  ad::Var forward(const ad::Var& x) const;
  Tensor infer(const Tensor& x) const;
  std::vector<LayerShape> layer_schedule() const;
  void collect(const std::string& prefix, std::vector<NamedVar>& params);

  GeneratorConfig config;
  std::vector<int> widths;  // outermost to innermost
  std::vector<Conv2d> down;
  std::vector<ConvTranspose2d> up;  // index = level, [0] outermost
};

// PatchGAN: stride-2 k4 spectral-norm blocks with quadratically growing
// filter counts, then a k3 stride-1 spectral-norm score convolution. Raw
// scores, no final activation.
class PatchDiscriminator {
public:
  PatchDiscriminator() = default;
  PatchDiscriminator(DiscriminatorConfig cfg, rng::Engine& g);
  ad::Var forward(const ad::Var& x) const;
  void power_iterate_all();
  void collect(const std::string& prefix, std::vector<NamedVar>& params,
               std::vector<NamedTensor>& state);

  DiscriminatorConfig config;
  std::vector<SpectralConv2d> convs;
  SpectralConv2d score;
};

// First/second-moment adaptive optimizer with bias correction.
class Adam {
public:
  Adam() = default;
  explicit Adam(std::vector<ad::Var> parameters, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void zero_grad();
  void step(double lr);

  std::vector<ad::Var> params;
  std::vector<Tensor> m1;
  std::vector<Tensor> m2;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

}  // namespace stainkit::nn
