#include "core/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>

#include "core/autodiff.hpp"
#include "core/container.hpp"
#include "core/convert.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"

namespace stainkit::metrics {

namespace {

using nlohmann::json;

constexpr int kWindow = 7;
constexpr int kEncChannels[4] = {3, 16, 32, 64};
constexpr int kEncConvs = 3;
constexpr int kGapDim = 64;

}  // namespace

double ssim(const ImageTile& x, const ImageTile& y, double data_range) {
  if (!x.same_shape(y)) fail(ErrorCode::ShapeMismatch, "ssim inputs differ in size");
  if (x.width < kWindow || x.height < kWindow) {
    fail(ErrorCode::WindowTooLarge, "ssim needs at least a 7x7 image");
  }
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double n = static_cast<double>(kWindow * kWindow);
  double total = 0.0;
  long long windows = 0;
  for (int c = 0; c < 3; ++c) {
    for (int wy = 0; wy + kWindow <= x.height; ++wy) {
      for (int wx = 0; wx + kWindow <= x.width; ++wx) {
        double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (int i = 0; i < kWindow; ++i) {
          for (int j = 0; j < kWindow; ++j) {
            double a = x.at(wy + i, wx + j, c);
            double b = y.at(wy + i, wx + j, c);
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
          }
        }
        double mx = sx / n;
        double my = sy / n;
        double vx = (sxx - sx * sx / n) / (n - 1.0);
        double vy = (syy - sy * sy / n) / (n - 1.0);
        double cov = (sxy - sx * sy / n) / (n - 1.0);
        double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        double den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
        ++windows;
      }
    }
  }
  return total / static_cast<double>(windows);
}

json encoder_spec_to_json(const EncoderSpec& spec) {
  json doc{{"kind", spec.kind == EncoderSpec::Kind::seeded_random ? "seeded_random"
                                                                  : "file_weights"},
           {"feature_dim", spec.feature_dim}};
  if (spec.kind == EncoderSpec::Kind::seeded_random) {
    doc["seed"] = spec.seed;
  } else {
    doc["weights_path"] = spec.weights_path;
  }
  return doc;
}

EncoderSpec encoder_spec_from_json(const json& doc) {
  try {
    EncoderSpec spec;
    std::string kind = doc.at("kind").get<std::string>();
    if (kind == "seeded_random") {
      spec.kind = EncoderSpec::Kind::seeded_random;
    } else if (kind == "file_weights") {
      spec.kind = EncoderSpec::Kind::file_weights;
    } else {
      fail(ErrorCode::BadFormat, "encoder kind must be seeded_random or file_weights");
    }
    spec.feature_dim = doc.at("feature_dim").get<int>();
    spec.seed = doc.value("seed", std::uint64_t{0});
    spec.weights_path = doc.value("weights_path", std::string());
    if (spec.kind == EncoderSpec::Kind::file_weights && spec.weights_path.empty()) {
      fail(ErrorCode::BadFormat, "file_weights encoder needs weights_path");
    }
    return spec;
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("encoder spec: ") + e.what());
  }
}

std::vector<double> Encoder::encode(const ImageTile& tile) const {
  Tensor cur = tile_to_nchw(tile);
  for (int layer = 0; layer < kEncConvs; ++layer) {
    cur = ad::conv2d_forward(cur, conv_weights[static_cast<std::size_t>(layer)],
                             conv_biases[static_cast<std::size_t>(layer)], 2, 1);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (cur[i] < 0.0) cur[i] = 0.0;
    }
  }
  std::size_t plane = static_cast<std::size_t>(cur.dim(2)) * cur.dim(3);
  std::vector<double> pooled(kGapDim, 0.0);
  for (int c = 0; c < kGapDim; ++c) {
    const double* p = cur.data() + static_cast<std::size_t>(c) * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    pooled[static_cast<std::size_t>(c)] = s / static_cast<double>(plane);
  }
  std::vector<double> out(static_cast<std::size_t>(feature_dim));
  for (int j = 0; j < feature_dim; ++j) {
    double s = fc_bias[static_cast<std::size_t>(j)];
    const double* row = fc_weight.data() + static_cast<std::size_t>(j) * kGapDim;
    for (int k = 0; k < kGapDim; ++k) s += row[k] * pooled[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(j)] = s;
  }
  return out;
}

Encoder make_encoder(const EncoderSpec& spec) {
  if (spec.feature_dim < 8) fail(ErrorCode::InvalidArgument, "feature_dim must be >= 8");
  Encoder enc;
  enc.feature_dim = spec.feature_dim;
  if (spec.kind == EncoderSpec::Kind::seeded_random) {
    rng::Engine g(spec.seed);
    for (int layer = 0; layer < kEncConvs; ++layer) {
      int cin = kEncChannels[layer];
      int cout = kEncChannels[layer + 1];
      double scale = std::sqrt(2.0 / (cin * 9));
      Tensor w({cout, cin, 3, 3});
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng::normal(g) * scale;
      enc.conv_weights.push_back(std::move(w));
      enc.conv_biases.emplace_back(std::vector<int>{cout});
    }
    double fc_scale = std::sqrt(1.0 / kGapDim);
    enc.fc_weight = Tensor({spec.feature_dim, kGapDim});
    for (std::size_t i = 0; i < enc.fc_weight.size(); ++i) {
      enc.fc_weight[i] = rng::normal(g) * fc_scale;
    }
    enc.fc_bias = Tensor({spec.feature_dim});
    return enc;
  }

  std::map<std::string, Tensor> loaded;
  json header = container::read(spec.weights_path, loaded);
  if (header.value("kind", std::string()) != "encoder") {
    fail(ErrorCode::BadWeights, "not an encoder weight file: " + spec.weights_path);
  }
  int file_dim = header.value("feature_dim", -1);
  if (file_dim != spec.feature_dim) {
    fail(ErrorCode::BadWeights, "encoder feature_dim does not match the weight file");
  }
  auto take = [&loaded](const std::string& name, const std::vector<int>& shape) {
    auto it = loaded.find(name);
    if (it == loaded.end()) fail(ErrorCode::BadWeights, "missing encoder tensor: " + name);
    if (it->second.shape() != shape) {
      fail(ErrorCode::BadWeights, "bad shape for encoder tensor: " + name);
    }
    if (!it->second.all_finite()) {
      fail(ErrorCode::BadWeights, "non-finite encoder tensor: " + name);
    }
    return it->second;
  };
  for (int layer = 0; layer < kEncConvs; ++layer) {
    int cin = kEncChannels[layer];
    int cout = kEncChannels[layer + 1];
    std::string base = "enc.conv" + std::to_string(layer);
    enc.conv_weights.push_back(take(base + ".weight", {cout, cin, 3, 3}));
    enc.conv_biases.push_back(take(base + ".bias", {cout}));
  }
  enc.fc_weight = take("enc.fc.weight", {spec.feature_dim, kGapDim});
  enc.fc_bias = take("enc.fc.bias", {spec.feature_dim});
  return enc;
}

void save_encoder(const Encoder& encoder, const std::string& path) {
  std::map<std::string, const Tensor*> tensors;
  for (int layer = 0; layer < kEncConvs; ++layer) {
    std::string base = "enc.conv" + std::to_string(layer);
    tensors[base + ".weight"] = &encoder.conv_weights[static_cast<std::size_t>(layer)];
    tensors[base + ".bias"] = &encoder.conv_biases[static_cast<std::size_t>(layer)];
  }
  tensors["enc.fc.weight"] = &encoder.fc_weight;
  tensors["enc.fc.bias"] = &encoder.fc_bias;
  json header{{"kind", "encoder"}, {"schema_version", 1}, {"feature_dim", encoder.feature_dim}};
  container::write(path, header, tensors);
}

Eigen::MatrixXd encode_features(const EncoderSpec& spec, const std::vector<ImageTile>& tiles) {
  if (tiles.empty()) fail(ErrorCode::InvalidArgument, "encode_features: no tiles");
  Encoder enc = make_encoder(spec);
  Eigen::MatrixXd features(static_cast<Eigen::Index>(tiles.size()), spec.feature_dim);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    std::vector<double> row = enc.encode(tiles[i]);
    for (int j = 0; j < spec.feature_dim; ++j) {
      features(static_cast<Eigen::Index>(i), j) = row[static_cast<std::size_t>(j)];
    }
  }
  return features;
}

FeatureGaussian fit_gaussian(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) fail(ErrorCode::TooFewSamples, "need at least 2 feature rows");
  FeatureGaussian g;
  g.sample_count = static_cast<int>(features.rows());
  g.mean = features.colwise().mean();
  Eigen::MatrixXd centered = features.rowwise() - g.mean.transpose();
  g.covariance = (centered.adjoint() * centered) / static_cast<double>(features.rows() - 1);
  return g;
}

double frechet_distance(const FeatureGaussian& a, const FeatureGaussian& b) {
  if (a.mean.size() != b.mean.size()) {
    fail(ErrorCode::DimensionMismatch, "feature dimensions differ");
  }
  double mean_term = (a.mean - b.mean).squaredNorm();
  Eigen::MatrixXd product = a.covariance * b.covariance;
  Eigen::MatrixXd sym = 0.5 * (product + product.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) {
    fail(ErrorCode::NumericalFailure, "eigendecomposition of the covariance product failed");
  }
  double sqrt_trace = 0.0;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    double lambda = solver.eigenvalues()[i];
    if (lambda > 0.0) sqrt_trace += std::sqrt(lambda);
  }
  double value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * sqrt_trace;
  return value > 0.0 ? value : 0.0;
}

FidResult fid_between_sets(const EncoderSpec& spec, const std::vector<ImageTile>& set_a,
                           const std::vector<ImageTile>& set_b) {
  if (spec.feature_dim < 8) fail(ErrorCode::InvalidArgument, "feature_dim must be >= 8");
  std::size_t min_n = static_cast<std::size_t>(std::max(2, spec.feature_dim / 4));
  if (set_a.size() < min_n || set_b.size() < min_n) {
    fail(ErrorCode::TooFewSamples, "each set needs at least max(2, feature_dim/4) tiles");
  }
  FidResult result;
  result.count_a = static_cast<int>(set_a.size());
  result.count_b = static_cast<int>(set_b.size());
  result.feature_dim = spec.feature_dim;
  result.rank_deficient = set_a.size() <= static_cast<std::size_t>(spec.feature_dim) ||
                          set_b.size() <= static_cast<std::size_t>(spec.feature_dim);
  Eigen::MatrixXd fa = encode_features(spec, set_a);
  Eigen::MatrixXd fb = encode_features(spec, set_b);
  result.value = frechet_distance(fit_gaussian(fa), fit_gaussian(fb));
  return result;
}

}  // namespace stainkit::metrics
