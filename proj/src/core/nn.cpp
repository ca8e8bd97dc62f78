#include "core/nn.hpp"

#include <Eigen/Core>

#include <cmath>

#include "core/error.hpp"

namespace stainkit::nn {

namespace {

constexpr double kInitStd = 0.02;

Tensor random_weight(std::vector<int> shape, rng::Engine& g) {
  Tensor w(std::move(shape));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng::normal(g) * kInitStd;
  return w;
}

Tensor random_unit(int n, rng::Engine& g) {
  Tensor t({n});
  double norm2 = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = rng::normal(g);
    norm2 += t[i] * t[i];
  }
  double norm = std::sqrt(norm2);
  if (norm > 0.0) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] /= norm;
  } else {
    t[0] = 1.0;
  }
  return t;
}

void normalize_in_place(Eigen::VectorXd& x) {
  double n = x.norm();
  if (n > 1e-12) x /= n;
}

}  // namespace

std::vector<int> unet_widths(const GeneratorConfig& cfg) {
  std::vector<int> e(static_cast<std::size_t>(cfg.depth));
  e[static_cast<std::size_t>(cfg.depth - 1)] = cfg.innermost_filters;
  if (cfg.depth >= 2) e[static_cast<std::size_t>(cfg.depth - 2)] = cfg.innermost_filters;
  for (int i = cfg.depth - 3; i >= 0; --i) {
    e[static_cast<std::size_t>(i)] = std::max(4, e[static_cast<std::size_t>(i + 1)] / 2);
  }
  return e;
}

Conv2d::Conv2d(int cin, int cout, int kernel, int stride_, int pad_, rng::Engine& g)
    : stride(stride_), pad(pad_) {
  weight = ad::leaf(random_weight({cout, cin, kernel, kernel}, g), true);
  bias = ad::leaf(Tensor({cout}), true);
}

ad::Var Conv2d::forward(const ad::Var& x) const {
  return ad::conv2d(x, weight, bias, stride, pad);
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedVar>& params) {
  params.push_back({prefix + ".weight", weight});
  params.push_back({prefix + ".bias", bias});
}

ConvTranspose2d::ConvTranspose2d(int cin, int cout, int kernel, int stride_, int pad_,
                                 rng::Engine& g)
    : stride(stride_), pad(pad_) {
  weight = ad::leaf(random_weight({cin, cout, kernel, kernel}, g), true);
  bias = ad::leaf(Tensor({cout}), true);
}

ad::Var ConvTranspose2d::forward(const ad::Var& x) const {
  return ad::conv_transpose2d(x, weight, bias, stride, pad);
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<NamedVar>& params) {
  params.push_back({prefix + ".weight", weight});
  params.push_back({prefix + ".bias", bias});
}

SpectralConv2d::SpectralConv2d(int cin, int cout, int kernel, int stride_, int pad_,
                               rng::Engine& g)
    : stride(stride_), pad(pad_) {
  weight = ad::leaf(random_weight({cout, cin, kernel, kernel}, g), true);
  bias = ad::leaf(Tensor({cout}), true);
  u = random_unit(cout, g);
  v = random_unit(cin * kernel * kernel, g);
}

void SpectralConv2d::power_iterate(int iterations) {
  int rows = weight->value.dim(0);
  int cols = static_cast<int>(weight->value.size()) / rows;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      w(weight->value.data(), rows, cols);
  Eigen::Map<Eigen::VectorXd> uv(u.data(), rows);
  Eigen::Map<Eigen::VectorXd> vv(v.data(), cols);
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd vn = w.transpose() * uv;
    normalize_in_place(vn);
    vv = vn;
    Eigen::VectorXd un = w * vv;
    normalize_in_place(un);
    uv = un;
  }
}

double SpectralConv2d::sigma() const {
  int rows = weight->value.dim(0);
  int cols = static_cast<int>(weight->value.size()) / rows;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      w(weight->value.data(), rows, cols);
  Eigen::Map<const Eigen::VectorXd> uv(u.data(), rows);
  Eigen::Map<const Eigen::VectorXd> vv(v.data(), cols);
  double s = uv.dot(w * vv);
  return s < 1e-12 ? 1e-12 : s;
}

Tensor SpectralConv2d::normalized_weight() const {
  double s = sigma();
  Tensor out(weight->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = weight->value[i] / s;
  return out;
}

ad::Var SpectralConv2d::forward(const ad::Var& x) const {
  ad::Var wbar = ad::spectral_scale(weight, u, v);
  return ad::conv2d(x, wbar, bias, stride, pad);
}

void SpectralConv2d::collect(const std::string& prefix, std::vector<NamedVar>& params,
                             std::vector<NamedTensor>& state) {
  params.push_back({prefix + ".weight", weight});
  params.push_back({prefix + ".bias", bias});
  state.push_back({prefix + ".sn_u", &u});
  state.push_back({prefix + ".sn_v", &v});
}

UNetGenerator::UNetGenerator(GeneratorConfig cfg, rng::Engine& g) : config(cfg) {
  if (cfg.depth < 1) fail(ErrorCode::InvalidArgument, "generator depth must be >= 1");
  if (cfg.innermost_filters < 4) {
    fail(ErrorCode::InvalidArgument, "innermost_filters must be >= 4");
  }
  int divisor = 1 << cfg.depth;
  if (cfg.input_size < divisor || cfg.input_size % divisor != 0) {
    fail(ErrorCode::InvalidArgument, "input_size must be divisible by 2^depth");
  }
  widths = unet_widths(cfg);
  down.reserve(static_cast<std::size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i) {
    int cin = i == 0 ? cfg.in_channels : widths[static_cast<std::size_t>(i - 1)];
    down.emplace_back(cin, widths[static_cast<std::size_t>(i)], 4, 2, 1, g);
  }
  up.reserve(static_cast<std::size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i) {
    int cin = i == cfg.depth - 1 ? widths[static_cast<std::size_t>(i)]
                                 : 2 * widths[static_cast<std::size_t>(i)];
    int cout = i == 0 ? cfg.out_channels : widths[static_cast<std::size_t>(i - 1)];
    up.emplace_back(cin, cout, 4, 2, 1, g);
  }
}

ad::Var UNetGenerator::forward(const ad::Var& x) const {
  const auto& s = x->value.shape();
  if (s.size() != 4 || s[1] != config.in_channels || s[2] != config.input_size ||
      s[3] != config.input_size) {
    fail(ErrorCode::ShapeMismatch, "generator input must be NCHW at the configured size");
  }
  std::vector<ad::Var> features;
  features.reserve(down.size());
  ad::Var cur = x;
  for (const auto& block : down) {
    cur = ad::instance_norm(ad::leaky_relu(block.forward(cur), config.leaky_slope));
    features.push_back(cur);
  }
  ad::Var out;
  for (int i = config.depth - 1; i >= 0; --i) {
    ad::Var input = i == config.depth - 1
                        ? features[static_cast<std::size_t>(i)]
                        : ad::concat_channels(out, features[static_cast<std::size_t>(i)]);
    out = up[static_cast<std::size_t>(i)].forward(input);
    out = i == 0 ? ad::sigmoid(out) : ad::instance_norm(ad::relu(out));
  }
  return out;
}

Tensor UNetGenerator::infer(const Tensor& x) const {
  return forward(ad::leaf(x, false))->value;
}

std::vector<LayerShape> UNetGenerator::layer_schedule() const {
  std::vector<LayerShape> shapes;
  int size = config.input_size;
  for (int i = 0; i < config.depth; ++i) {
    size /= 2;
    shapes.push_back({"down" + std::to_string(i), widths[static_cast<std::size_t>(i)], size, size});
  }
  for (int i = config.depth - 1; i >= 0; --i) {
    size *= 2;
    int channels = i == 0 ? config.out_channels : widths[static_cast<std::size_t>(i - 1)];
    shapes.push_back({"up" + std::to_string(i), channels, size, size});
  }
  return shapes;
}

void UNetGenerator::collect(const std::string& prefix, std::vector<NamedVar>& params) {
  for (std::size_t i = 0; i < down.size(); ++i) {
    down[i].collect(prefix + ".down" + std::to_string(i), params);
  }
  for (std::size_t i = 0; i < up.size(); ++i) {
    up[i].collect(prefix + ".up" + std::to_string(i), params);
  }
}

PatchDiscriminator::PatchDiscriminator(DiscriminatorConfig cfg, rng::Engine& g) : config(cfg) {
  if (cfg.blocks < 1) fail(ErrorCode::InvalidArgument, "discriminator needs >= 1 block");
  if (cfg.base_filters < 1) fail(ErrorCode::InvalidArgument, "base_filters must be >= 1");
  if (cfg.power_iterations < 1) {
    fail(ErrorCode::InvalidArgument, "power_iterations must be >= 1");
  }
  convs.reserve(static_cast<std::size_t>(cfg.blocks));
  int cin = cfg.in_channels;
  for (int i = 0; i < cfg.blocks; ++i) {
    int cout = cfg.base_filters * (i + 1) * (i + 1);
    convs.emplace_back(cin, cout, 4, 2, 1, g);
    cin = cout;
  }
  score = SpectralConv2d(cin, 1, 3, 1, 0, g);
}

ad::Var PatchDiscriminator::forward(const ad::Var& x) const {
  ad::Var cur = x;
  for (const auto& block : convs) {
    cur = ad::leaky_relu(block.forward(cur), config.leaky_slope);
  }
  return score.forward(cur);
}

void PatchDiscriminator::power_iterate_all() {
  for (auto& block : convs) block.power_iterate(config.power_iterations);
  score.power_iterate(config.power_iterations);
}

void PatchDiscriminator::collect(const std::string& prefix, std::vector<NamedVar>& params,
                                 std::vector<NamedTensor>& state) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].collect(prefix + ".block" + std::to_string(i), params, state);
  }
  score.collect(prefix + ".score", params, state);
}

Adam::Adam(std::vector<ad::Var> parameters, double beta1_, double beta2_, double eps_)
    : params(std::move(parameters)), beta1(beta1_), beta2(beta2_), eps(eps_) {
  m1.reserve(params.size());
  m2.reserve(params.size());
  for (const auto& p : params) {
    m1.emplace_back(p->value.shape());
    m2.emplace_back(p->value.shape());
  }
}

void Adam::zero_grad() {
  for (const auto& p : params) ad::zero_grad(p);
}

void Adam::step(double lr) {
  ++t;
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Node* p = params[k].get();
    if (p->grad.empty()) continue;
    Tensor& m = m1[k];
    Tensor& v = m2[k];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = p->grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      double mhat = m[i] / c1;
      double vhat = v[i] / c2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace stainkit::nn
