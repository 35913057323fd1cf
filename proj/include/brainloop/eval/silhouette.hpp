#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "brainloop/eval/rsa.hpp"

namespace brainloop::eval {

/// Per-sample silhouette (b - a) / max(a, b) from a distance matrix; members
/// of singleton clusters score 0.
inline Vector silhouette_samples(const Matrix& dist, const std::vector<Index>& labels) {
  const Index n = dist.rows();
  require(static_cast<Index>(labels.size()) == n, ErrorKind::shape_mismatch, "silhouette: label count differs");
  std::map<Index, Index> sizes;
  for (Index l : labels) ++sizes[l];
  require(sizes.size() >= 2, ErrorKind::invalid_argument, "silhouette needs at least 2 labels");
  Vector out = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    const Index own = labels[static_cast<std::size_t>(i)];
    if (sizes[own] == 1) continue;
    std::map<Index, double> sums;
    for (Index j = 0; j < n; ++j) {
      if (j != i) sums[labels[static_cast<std::size_t>(j)]] += dist(i, j);
    }
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, total] : sums) {
      if (label != own) b = std::min(b, total / static_cast<double>(sizes[label]));
    }
    const double denom = std::max(a, b);
    out(i) = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return out;
}

/// Mean silhouette coefficient under cosine distance.
inline double silhouette(const Matrix& embeddings, const std::vector<Index>& labels) {
  return silhouette_samples(cosine_distance_matrix(embeddings), labels).mean();
}

}  // namespace brainloop::eval
