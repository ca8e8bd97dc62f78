#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "core/image.hpp"
#include "core/tensor.hpp"

namespace stainkit::metrics {

// Mean over sliding 7x7 uniform windows, computed per channel and averaged,
// with C1=(0.01*L)^2, C2=(0.03*L)^2 and (n-1) variances.
double ssim(const ImageTile& x, const ImageTile& y, double data_range = 1.0);

struct FeatureGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  int sample_count = 0;
};

struct EncoderSpec {
  enum class Kind { seeded_random, file_weights };
  Kind kind = Kind::seeded_random;
  int feature_dim = 64;
  std::uint64_t seed = 0;
  std::string weights_path;
};

nlohmann::json encoder_spec_to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const nlohmann::json& doc);

// Fixed topology: three stride-2 k3 ReLU convolutions (3 -> 16 -> 32 -> 64),
// global average pooling, then a linear map to feature_dim. seeded_random
// fills it from the seed; file_weights reads the weight container.
struct Encoder {
  std::vector<Tensor> conv_weights;
  std::vector<Tensor> conv_biases;
  Tensor fc_weight;  // {feature_dim, 64}
  Tensor fc_bias;    // {feature_dim}
  int feature_dim = 0;

  std::vector<double> encode(const ImageTile& tile) const;
};

Encoder make_encoder(const EncoderSpec& spec);
void save_encoder(const Encoder& encoder, const std::string& path);

// One row per tile, in input order.
Eigen::MatrixXd encode_features(const EncoderSpec& spec, const std::vector<ImageTile>& tiles);

FeatureGaussian fit_gaussian(const Eigen::MatrixXd& features);

// ||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 sqrt(C_a C_b)), square root taken by
// eigendecomposition of the symmetrized product with eigenvalues clamped
// at zero; the result is clamped at zero.
double frechet_distance(const FeatureGaussian& a, const FeatureGaussian& b);

struct FidResult {
  double value = 0.0;
  int count_a = 0;
  int count_b = 0;
  int feature_dim = 0;
  bool rank_deficient = false;  // a sample covariance cannot reach full rank
};

FidResult fid_between_sets(const EncoderSpec& spec, const std::vector<ImageTile>& set_a,
                           const std::vector<ImageTile>& set_b);

}  // namespace stainkit::metrics
