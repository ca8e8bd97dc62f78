#pragma once

#include <Eigen/Core>
#include <vector>

#include "core/image.hpp"

#include "json.hpp"

namespace stainkit {

// Stain color-appearance model in optical-density space. Column 0 is
// hematoxylin, column 1 eosin; columns are unit-norm with non-negative
// entries, ordered so the hematoxylin column carries the larger
// blue-channel OD component.
struct StainModel {
  Eigen::Matrix<double, 3, 2> stain_matrix = Eigen::Matrix<double, 3, 2>::Zero();
  Eigen::Vector2d max_concentrations = Eigen::Vector2d::Ones();
  double background_intensity = 240.0;
  bool converged = true;  // only meaningful for the sparse (Vahadane) fit
};

// Per-channel statistics of a template image in l-alpha-beta space.
struct TemplateStats {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d std = Eigen::Vector3d::Ones();
};

// Progress record of the alternating sparse-NMF solve.
struct SparseFitReport {
  std::vector<double> objective_trace;  // objective after each concentration step
  int iterations = 0;
  bool converged = false;
};

TemplateStats reinhard_fit(const ImageTile& tmpl);
ImageTile reinhard_apply(const ImageTile& tile, const TemplateStats& stats);

StainModel macenko_fit(const ImageTile& tile, double alpha_percentile = 1.0,
                       double beta_od_threshold = 0.15, double background_intensity = 240.0);

// Per-pixel non-negative least squares fit of OD against the stain matrix.
// Returns an N x 2 matrix (N = height*width, row-major over pixels).
Eigen::MatrixX2d stain_concentrations(const ImageTile& tile, const StainModel& model);

ImageTile macenko_apply(const ImageTile& tile, const StainModel& source,
                        const StainModel& target);

StainModel vahadane_fit(const ImageTile& tile, double sparsity_lambda = 0.1,
                        int iterations = 200, double beta_od_threshold = 0.15,
                        double background_intensity = 240.0,
                        SparseFitReport* report = nullptr);

// Concentrations with lasso-selected support refit exactly (debiased), so
// reconstruction error does not carry the shrinkage of the penalty.
Eigen::MatrixX2d sparse_concentrations(const ImageTile& tile, const StainModel& model,
                                       double sparsity_lambda = 0.1);

// The transfer path uses a light penalty: support selection only.
ImageTile vahadane_apply(const ImageTile& tile, const StainModel& source,
                         const StainModel& target, double sparsity_lambda = 0.01);

// Exact solvers for a single pixel; exposed for the oracle tests.
Eigen::Vector2d nnls2(const Eigen::Matrix<double, 3, 2>& m, const Eigen::Vector3d& od);
Eigen::Vector2d nnlasso2(const Eigen::Matrix<double, 3, 2>& m, const Eigen::Vector3d& od,
                         double sparsity_lambda);

// Percentile with linear interpolation between order statistics (p in [0,100]).
double percentile(std::vector<double> values, double p);

// JSON serialization ("schema_version" 1). `method` tags which normalizer
// produced the document so the CLI can pick the matching apply path.
nlohmann::json stain_model_to_json(const StainModel& model, const std::string& method);
StainModel stain_model_from_json(const nlohmann::json& doc);
nlohmann::json template_stats_to_json(const TemplateStats& stats);
TemplateStats template_stats_from_json(const nlohmann::json& doc);

}  // namespace stainkit
