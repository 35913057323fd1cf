#pragma once

#include <cmath>

#include "brainloop/linalg.hpp"

namespace brainloop::eval {

inline double pearson(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), ErrorKind::shape_mismatch, "pearson: lengths differ");
  require(a.size() >= 2, ErrorKind::invalid_argument, "pearson needs at least 2 values");
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const double va = da.squaredNorm();
  const double vb = db.squaredNorm();
  require(va > 0.0 && vb > 0.0, ErrorKind::numeric, "pearson: zero-variance input");
  return da.dot(db) / std::sqrt(va * vb);
}

enum class PearsonMode { matrixwise, rowwise };

/// matrixwise: strict upper triangle; rowwise: mean over rows of r on the
/// off-diagonal entries of each row.
inline double pearson(const Matrix& a, const Matrix& b, PearsonMode mode) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::shape_mismatch, "pearson: shapes differ");
  require(a.rows() == a.cols(), ErrorKind::shape_mismatch, "pearson: matrices must be square");
  const Index n = a.rows();
  if (mode == PearsonMode::matrixwise) {
    Vector va(n * (n - 1) / 2);
    Vector vb(va.size());
    Index k = 0;
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        va(k) = a(i, j);
        vb(k++) = b(i, j);
      }
    }
    return pearson(va, vb);
  }
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    Vector ra(n - 1);
    Vector rb(n - 1);
    Index k = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      ra(k) = a(i, j);
      rb(k++) = b(i, j);
    }
    total += pearson(ra, rb);
  }
  return total / static_cast<double>(n);
}

}  // namespace brainloop::eval
