#pragma once

#include <Eigen/SVD>

#include <string>

#include "brainloop/linalg.hpp"

namespace brainloop::eval {

struct PcaModel {
  Vector mean;
  Matrix components;           ///< P x D, orthonormal rows
  Vector explained_variance;   ///< length P, non-increasing
  Vector explained_ratio;
};

/// Numerical rank of the centered data.
inline Index centered_rank(const Matrix& data) {
  if (data.rows() < 2) return 0;
  Matrix centered = data.rowwise() - data.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered);
  const Vector s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i) {
    if (s(i) > 1e-10 * s(0)) ++rank;
  }
  return rank;
}

/// Principal axes from the SVD of the centered data.
inline PcaModel pca_fit(const Matrix& data, Index n_components) {
  require(n_components >= 1 && n_components <= std::min(data.rows(), data.cols()), ErrorKind::invalid_argument,
          "pca_fit: n_components " + std::to_string(n_components) + " exceeds min(rows, dims) = " +
              std::to_string(std::min(data.rows(), data.cols())));
  PcaModel model;
  model.mean = data.colwise().mean().transpose();
  Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Vector s = svd.singularValues();
  const double denom = data.rows() > 1 ? static_cast<double>(data.rows() - 1) : 1.0;
  model.components = svd.matrixV().leftCols(n_components).transpose();
  // Sign convention: largest-magnitude loading of each component is positive.
  for (Index p = 0; p < n_components; ++p) {
    Index at = 0;
    model.components.row(p).cwiseAbs().maxCoeff(&at);
    if (model.components(p, at) < 0.0) model.components.row(p) *= -1.0;
  }
  const Vector variance = s.array().square() / denom;
  model.explained_variance = variance.head(n_components);
  const double total = variance.sum();
  model.explained_ratio = total > 0.0 ? Vector(model.explained_variance / total) : Vector::Zero(n_components);
  return model;
}

inline Matrix pca_project(const PcaModel& model, const Matrix& data) {
  require(data.cols() == model.mean.size(), ErrorKind::shape_mismatch, "pca_project: dimension mismatch");
  return (data.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline Matrix pca_inverse(const PcaModel& model, const Matrix& scores) {
  require(scores.cols() == model.components.rows(), ErrorKind::shape_mismatch, "pca_inverse: component count mismatch");
  Matrix out = scores * model.components;
  out.rowwise() += model.mean.transpose();
  return out;
}

}  // namespace brainloop::eval
