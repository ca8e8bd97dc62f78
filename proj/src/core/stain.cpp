#include "core/stain.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "core/color.hpp"
#include "core/error.hpp"

namespace stainkit {

namespace {

constexpr int kMinTissuePixels = 100;
constexpr double kStdFloor = 1e-8;

// Flip a direction so its largest-magnitude component is positive; ties are
// broken toward the first nonzero component.
Eigen::Vector3d orient_positive(Eigen::Vector3d v) {
  int pivot = 0;
  double best = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      pivot = i;
    }
  }
  if (best == 0.0) {
    for (int i = 0; i < 3; ++i) {
      if (v[i] != 0.0) {
        pivot = i;
        break;
      }
    }
  }
  if (v[pivot] < 0.0) v = -v;
  return v;
}

// Clamp negatives to zero and normalize to a unit column.
Eigen::Vector3d to_stain_column(Eigen::Vector3d v) {
  v = orient_positive(v);
  v = v.cwiseMax(0.0);
  double n = v.norm();
  if (n < 1e-12) fail(ErrorCode::NumericalFailure, "degenerate stain direction");
  return v / n;
}

// Column 0 = hematoxylin = the column with the larger blue-channel OD.
Eigen::Matrix<double, 3, 2> order_columns(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  Eigen::Matrix<double, 3, 2> m;
  if (a[2] >= b[2]) {
    m.col(0) = a;
    m.col(1) = b;
  } else {
    m.col(0) = b;
    m.col(1) = a;
  }
  return m;
}

// Rows of the OD image whose channels all clear the threshold.
std::vector<Eigen::Vector3d> tissue_od_rows(const std::vector<double>& od, double beta) {
  std::vector<Eigen::Vector3d> rows;
  rows.reserve(od.size() / 3);
  for (std::size_t i = 0; i + 2 < od.size(); i += 3) {
    if (od[i] >= beta && od[i + 1] >= beta && od[i + 2] >= beta) {
      rows.emplace_back(od[i], od[i + 1], od[i + 2]);
    }
  }
  return rows;
}

Eigen::Vector2d per_stain_percentile99(const Eigen::MatrixX2d& conc) {
  Eigen::Vector2d out;
  for (int j = 0; j < 2; ++j) {
    std::vector<double> column(conc.rows());
    for (Eigen::Index i = 0; i < conc.rows(); ++i) column[i] = conc(i, j);
    out[j] = std::max(percentile(std::move(column), 99.0), kStdFloor);
  }
  return out;
}

}  // namespace

double percentile(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorCode::InvalidArgument, "percentile of empty set");
  std::sort(values.begin(), values.end());
  double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

TemplateStats reinhard_fit(const ImageTile& tmpl) {
  if (tmpl.pixel_count() == 0) fail(ErrorCode::InvalidArgument, "empty template");
  std::vector<double> lab = rgb_to_lab(tmpl);
  std::size_t n = tmpl.pixel_count();
  TemplateStats stats;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += lab[3 * i + c];
    double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = lab[3 * i + c] - mean;
      var += d * d;
    }
    stats.mean[c] = mean;
    stats.std[c] = std::sqrt(var / static_cast<double>(n));
  }
  for (int c = 0; c < 3; ++c) {
    if (stats.std[c] < kStdFloor) {
      fail(ErrorCode::DegenerateTemplate, "constant-color template (zero variance channel)");
    }
  }
  return stats;
}

ImageTile reinhard_apply(const ImageTile& tile, const TemplateStats& stats) {
  std::vector<double> lab = rgb_to_lab(tile);
  std::size_t n = tile.pixel_count();
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += lab[3 * i + c];
    double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = lab[3 * i + c] - mean;
      var += d * d;
    }
    double sd = std::sqrt(var / static_cast<double>(n));
    // Degenerate source channel: fall back to a pure mean shift.
    double gain = sd < kStdFloor ? 1.0 : stats.std[c] / sd;
    for (std::size_t i = 0; i < n; ++i) {
      lab[3 * i + c] = (lab[3 * i + c] - mean) * gain + stats.mean[c];
    }
  }
  ImageTile out = lab_to_rgb(lab, tile.width, tile.height);
  out.domain_label = tile.domain_label;
  out.source_id = tile.source_id;
  out.origin_xy = tile.origin_xy;
  return out;
}

StainModel macenko_fit(const ImageTile& tile, double alpha_percentile,
                       double beta_od_threshold, double background_intensity) {
  std::vector<double> od = rgb_to_od(tile, background_intensity);
  std::vector<Eigen::Vector3d> tissue = tissue_od_rows(od, beta_od_threshold);
  if (tissue.size() < kMinTissuePixels) {
    fail(ErrorCode::InsufficientTissue,
         "only " + std::to_string(tissue.size()) + " tissue pixels above OD threshold");
  }

  Eigen::Matrix3d gram = Eigen::Matrix3d::Zero();
  for (const auto& row : tissue) gram += row * row.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(gram);
  if (eig.info() != Eigen::Success) {
    fail(ErrorCode::NumericalFailure, "eigendecomposition of OD Gram matrix failed");
  }
  // Eigenvalues are ascending; the top-2 directions span the stain plane.
  Eigen::Vector3d v1 = orient_positive(eig.eigenvectors().col(2));
  Eigen::Vector3d v2 = orient_positive(eig.eigenvectors().col(1));

  std::vector<double> angles(tissue.size());
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    angles[i] = std::atan2(tissue[i].dot(v2), tissue[i].dot(v1));
  }
  double phi_lo = percentile(angles, alpha_percentile);
  double phi_hi = percentile(std::move(angles), 100.0 - alpha_percentile);

  Eigen::Vector3d d_lo = to_stain_column(std::cos(phi_lo) * v1 + std::sin(phi_lo) * v2);
  Eigen::Vector3d d_hi = to_stain_column(std::cos(phi_hi) * v1 + std::sin(phi_hi) * v2);

  StainModel model;
  model.stain_matrix = order_columns(d_lo, d_hi);
  model.background_intensity = background_intensity;
  model.max_concentrations = per_stain_percentile99(stain_concentrations(tile, model));
  return model;
}

Eigen::Vector2d nnls2(const Eigen::Matrix<double, 3, 2>& m, const Eigen::Vector3d& od) {
  Eigen::Matrix2d g = m.transpose() * m;
  Eigen::Vector2d b = m.transpose() * od;
  double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);

  Eigen::Vector2d best = Eigen::Vector2d::Zero();
  double best_res = od.squaredNorm();
  auto consider = [&](const Eigen::Vector2d& c) {
    if (c[0] < 0.0 || c[1] < 0.0) return;
    double res = (od - m * c).squaredNorm();
    if (res < best_res) {
      best_res = res;
      best = c;
    }
  };

  if (std::abs(det) > 1e-14) {
    consider(Eigen::Vector2d((g(1, 1) * b[0] - g(0, 1) * b[1]) / det,
                             (g(0, 0) * b[1] - g(1, 0) * b[0]) / det));
  }
  if (g(0, 0) > 0.0) consider(Eigen::Vector2d(std::max(0.0, b[0] / g(0, 0)), 0.0));
  if (g(1, 1) > 0.0) consider(Eigen::Vector2d(0.0, std::max(0.0, b[1] / g(1, 1))));
  return best;
}

Eigen::Vector2d nnlasso2(const Eigen::Matrix<double, 3, 2>& m, const Eigen::Vector3d& od,
                         double sparsity_lambda) {
  // min_{c>=0} ||od - Mc||^2 + lambda*(c0+c1). The penalized problem is the
  // NNLS above with the linear term shifted by lambda/2.
  Eigen::Matrix2d g = m.transpose() * m;
  Eigen::Vector2d b = m.transpose() * od - Eigen::Vector2d::Constant(sparsity_lambda / 2.0);
  double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);

  Eigen::Vector2d best = Eigen::Vector2d::Zero();
  double best_obj = od.squaredNorm();
  auto consider = [&](const Eigen::Vector2d& c) {
    if (c[0] < 0.0 || c[1] < 0.0) return;
    double obj = (od - m * c).squaredNorm() + sparsity_lambda * (c[0] + c[1]);
    if (obj < best_obj) {
      best_obj = obj;
      best = c;
    }
  };

  if (std::abs(det) > 1e-14) {
    consider(Eigen::Vector2d((g(1, 1) * b[0] - g(0, 1) * b[1]) / det,
                             (g(0, 0) * b[1] - g(1, 0) * b[0]) / det));
  }
  if (g(0, 0) > 0.0) consider(Eigen::Vector2d(std::max(0.0, b[0] / g(0, 0)), 0.0));
  if (g(1, 1) > 0.0) consider(Eigen::Vector2d(0.0, std::max(0.0, b[1] / g(1, 1))));
  return best;
}

Eigen::MatrixX2d stain_concentrations(const ImageTile& tile, const StainModel& model) {
  std::vector<double> od = rgb_to_od(tile, model.background_intensity);
  Eigen::MatrixX2d conc(tile.pixel_count(), 2);
  for (std::size_t i = 0; i < tile.pixel_count(); ++i) {
    conc.row(i) = nnls2(model.stain_matrix,
                        Eigen::Vector3d(od[3 * i], od[3 * i + 1], od[3 * i + 2]));
  }
  return conc;
}

Eigen::MatrixX2d sparse_concentrations(const ImageTile& tile, const StainModel& model,
                                       double sparsity_lambda) {
  std::vector<double> od = rgb_to_od(tile, model.background_intensity);
  const Eigen::Matrix<double, 3, 2>& m = model.stain_matrix;
  Eigen::MatrixX2d conc(tile.pixel_count(), 2);
  for (std::size_t i = 0; i < tile.pixel_count(); ++i) {
    Eigen::Vector3d v(od[3 * i], od[3 * i + 1], od[3 * i + 2]);
    // The lasso picks the active stains; then an exact fit on that support
    // removes its shrinkage bias so reconstructions stay faithful.
    Eigen::Vector2d picked = nnlasso2(m, v, sparsity_lambda);
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    if (picked[0] > 0.0 && picked[1] > 0.0) {
      c = nnls2(m, v);
    } else if (picked[0] > 0.0) {
      c[0] = std::max(0.0, m.col(0).dot(v) / m.col(0).squaredNorm());
    } else if (picked[1] > 0.0) {
      c[1] = std::max(0.0, m.col(1).dot(v) / m.col(1).squaredNorm());
    }
    conc.row(i) = c;
  }
  return conc;
}

namespace {

ImageTile reconstruct(const ImageTile& tile, const Eigen::MatrixX2d& conc,
                      const StainModel& source, const StainModel& target) {
  Eigen::Vector2d scale = target.max_concentrations.cwiseQuotient(source.max_concentrations);
  std::vector<double> od(tile.pixel_count() * 3);
  for (std::size_t i = 0; i < tile.pixel_count(); ++i) {
    Eigen::Vector2d c = conc.row(i).transpose().cwiseProduct(scale);
    Eigen::Vector3d o = target.stain_matrix * c;
    od[3 * i] = o[0];
    od[3 * i + 1] = o[1];
    od[3 * i + 2] = o[2];
  }
  ImageTile out = od_to_rgb(od, tile.width, tile.height, target.background_intensity);
  out.domain_label = tile.domain_label;
  out.source_id = tile.source_id;
  out.origin_xy = tile.origin_xy;
  return out;
}

}  // namespace

ImageTile macenko_apply(const ImageTile& tile, const StainModel& source,
                        const StainModel& target) {
  return reconstruct(tile, stain_concentrations(tile, source), source, target);
}

ImageTile vahadane_apply(const ImageTile& tile, const StainModel& source,
                         const StainModel& target, double sparsity_lambda) {
  return reconstruct(tile, sparse_concentrations(tile, source, sparsity_lambda), source, target);
}

StainModel vahadane_fit(const ImageTile& tile, double sparsity_lambda, int iterations,
                        double beta_od_threshold, double background_intensity,
                        SparseFitReport* report) {
  std::vector<double> od_all = rgb_to_od(tile, background_intensity);
  std::vector<Eigen::Vector3d> tissue = tissue_od_rows(od_all, beta_od_threshold);
  if (tissue.size() < kMinTissuePixels) {
    fail(ErrorCode::InsufficientTissue,
         "only " + std::to_string(tissue.size()) + " tissue pixels above OD threshold");
  }

  // Deterministic warm start: the SVD-based estimate of the same tile.
  StainModel warm = macenko_fit(tile, 1.0, beta_od_threshold, background_intensity);
  Eigen::Matrix<double, 3, 2> dict = warm.stain_matrix;

  const auto n = static_cast<Eigen::Index>(tissue.size());
  Eigen::MatrixX2d conc(n, 2);
  SparseFitReport local;
  double prev_obj = -1.0;
  bool converged = false;

  for (int it = 0; it < iterations; ++it) {
    // Concentration step: exact non-negative lasso per pixel.
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Vector2d c = nnlasso2(dict, tissue[i], sparsity_lambda);
      conc.row(i) = c;
      obj += (tissue[i] - dict * c).squaredNorm() + sparsity_lambda * (c[0] + c[1]);
    }
    local.objective_trace.push_back(obj);
    local.iterations = it + 1;
    if (prev_obj >= 0.0) {
      double rel = std::abs(prev_obj - obj) / std::max(prev_obj, 1e-12);
      if (rel < 1e-5) {
        converged = true;
        break;
      }
    }
    prev_obj = obj;

    // Dictionary step: exact per-column minimization over the convex set
    // {d >= 0, ||d|| <= 1} (a projected gradient step of length 1/A_jj).
    Eigen::Matrix2d a = conc.transpose() * conc;
    Eigen::Matrix<double, 3, 2> b = Eigen::Matrix<double, 3, 2>::Zero();
    for (Eigen::Index i = 0; i < n; ++i) b += tissue[i] * conc.row(i);
    for (int j = 0; j < 2; ++j) {
      if (a(j, j) < 1e-12) continue;  // dead atom, keep previous column
      Eigen::Vector3d u = dict.col(j) + (b.col(j) - dict * a.col(j)) / a(j, j);
      u = u.cwiseMax(0.0);
      double norm = u.norm();
      if (norm < 1e-12) continue;
      dict.col(j) = norm > 1.0 ? Eigen::Vector3d(u / norm) : u;
    }
  }

  local.converged = converged;
  for (int j = 0; j < 2; ++j) {
    double norm = dict.col(j).norm();
    if (norm < 1e-12) fail(ErrorCode::NumericalFailure, "collapsed dictionary column");
    dict.col(j) /= norm;
  }

  StainModel model;
  model.stain_matrix = order_columns(dict.col(0), dict.col(1));
  model.background_intensity = background_intensity;
  model.converged = converged;
  model.max_concentrations =
      per_stain_percentile99(sparse_concentrations(tile, model, sparsity_lambda));
  if (report) *report = local;
  return model;
}

nlohmann::json stain_model_to_json(const StainModel& model, const std::string& method) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "stain_model";
  doc["method"] = method;
  doc["stain_matrix"] = {
      {model.stain_matrix(0, 0), model.stain_matrix(0, 1)},
      {model.stain_matrix(1, 0), model.stain_matrix(1, 1)},
      {model.stain_matrix(2, 0), model.stain_matrix(2, 1)},
  };
  doc["max_concentrations"] = {model.max_concentrations[0], model.max_concentrations[1]};
  doc["background_intensity"] = model.background_intensity;
  doc["converged"] = model.converged;
  return doc;
}

StainModel stain_model_from_json(const nlohmann::json& doc) {
  if (!doc.contains("schema_version") || doc.value("kind", "") != "stain_model") {
    fail(ErrorCode::BadFormat, "not a stain_model document");
  }
  StainModel model;
  const auto& m = doc.at("stain_matrix");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) model.stain_matrix(r, c) = m.at(r).at(c).get<double>();
  }
  model.max_concentrations[0] = doc.at("max_concentrations").at(0).get<double>();
  model.max_concentrations[1] = doc.at("max_concentrations").at(1).get<double>();
  model.background_intensity = doc.at("background_intensity").get<double>();
  model.converged = doc.value("converged", true);
  return model;
}

nlohmann::json template_stats_to_json(const TemplateStats& stats) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "template_stats";
  doc["method"] = "reinhard";
  doc["mean"] = {stats.mean[0], stats.mean[1], stats.mean[2]};
  doc["std"] = {stats.std[0], stats.std[1], stats.std[2]};
  return doc;
}

TemplateStats template_stats_from_json(const nlohmann::json& doc) {
  if (!doc.contains("schema_version") || doc.value("kind", "") != "template_stats") {
    fail(ErrorCode::BadFormat, "not a template_stats document");
  }
  TemplateStats stats;
  for (int c = 0; c < 3; ++c) {
    stats.mean[c] = doc.at("mean").at(c).get<double>();
    stats.std[c] = doc.at("std").at(c).get<double>();
  }
  return stats;
}

}  // namespace stainkit
