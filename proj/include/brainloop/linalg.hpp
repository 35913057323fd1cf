#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "brainloop/error.hpp"

namespace brainloop {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline Vector uniform_weights(Index n) {
  require(n > 0, ErrorKind::invalid_argument, "uniform_weights: empty support");
  return Vector::Constant(n, 1.0 / static_cast<double>(n));
}

/// Rows scaled to unit norm; a zero-norm row is an error.
inline Matrix unit_rows(const Matrix& m) {
  Matrix out = m;
  for (Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    require(n > 0.0, ErrorKind::numeric, "zero-norm row " + std::to_string(r));
    out.row(r) /= n;
  }
  return out;
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, ErrorKind::numeric, "cosine similarity of a zero vector");
  return a.dot(b) / (na * nb);
}

}  // namespace brainloop
