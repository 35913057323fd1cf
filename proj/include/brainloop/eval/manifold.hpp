#pragma once

#include <string>
#include <vector>

#include "brainloop/eval/pca.hpp"
#include "brainloop/eval/rsa.hpp"
#include "brainloop/random.hpp"

namespace brainloop::eval {

/// Category centroids used to name points of the embedding space.
struct CentroidIndex {
  Matrix centroids;
  std::vector<Index> labels;

  CentroidIndex(const Matrix& points, const std::vector<Index>& point_labels) {
    require(!point_labels.empty(), ErrorKind::invalid_argument, "empty label map");
    std::map<Index, Index> pos;
    for (Index l : point_labels) pos.emplace(l, 0);
    for (auto& [label, id] : pos) {
      id = static_cast<Index>(labels.size());
      labels.push_back(label);
    }
    std::vector<Index> dense;
    for (Index l : point_labels) dense.push_back(pos[l]);
    centroids = eval::centroids(points, dense, static_cast<Index>(labels.size()));
  }

  /// Position of the most cosine-similar centroid (ties to the lowest).
  [[nodiscard]] Index nearest_position(const Vector& v) const {
    Index best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centroids.rows(); ++c) {
      const double s = cosine_or_zero(v, centroids.row(c).transpose());
      if (s > best_sim) {
        best_sim = s;
        best = c;
      }
    }
    return best;
  }

  [[nodiscard]] Index nearest_label(const Vector& v) const { return labels[static_cast<std::size_t>(nearest_position(v))]; }

  static double cosine_or_zero(const Vector& a, const Vector& b) {
    const double na = a.norm();
    const double nb = b.norm();
    return na > 0.0 && nb > 0.0 ? a.dot(b) / (na * nb) : 0.0;
  }
};

struct ConsistencyResult {
  double accuracy = 0.0;
  double mean_cosine_to_truth = 0.0;  ///< reconstruction vs its ground-truth centroid
  int n_samples = 0;
};

/// Samples 2-D points uniformly in [lo, hi]^2, maps them back through the PCA
/// inverse, and checks that the nearest centroid agrees with the label of the
/// nearest real point.
inline ConsistencyResult manifold_consistency(const PcaModel& pca, const Matrix& real_points,
                                              const std::vector<Index>& labels, int n_samples = 1000,
                                              double lo = -5.0, double hi = 5.0, std::uint64_t seed = 0) {
  require(pca.components.rows() == 2, ErrorKind::invalid_argument, "manifold_consistency needs a 2-component PCA");
  require(!labels.empty(), ErrorKind::invalid_argument, "manifold_consistency: empty label map");
  require(real_points.rows() == static_cast<Index>(labels.size()), ErrorKind::shape_mismatch,
          "manifold_consistency: label count differs from rows");
  const CentroidIndex index(real_points, labels);
  Rng rng(seed);
  Matrix samples(n_samples, 2);
  for (int s = 0; s < n_samples; ++s) {
    samples(s, 0) = rng.uniform(lo, hi);
    samples(s, 1) = rng.uniform(lo, hi);
  }
  const Matrix recon = pca_inverse(pca, samples);
  ConsistencyResult out;
  out.n_samples = n_samples;
  int hits = 0;
  double cos_total = 0.0;
  for (Index s = 0; s < recon.rows(); ++s) {
    const Vector v = recon.row(s).transpose();
    Index nearest = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (Index r = 0; r < real_points.rows(); ++r) {
      const double sim = CentroidIndex::cosine_or_zero(v, real_points.row(r).transpose());
      if (sim > best) {
        best = sim;
        nearest = r;
      }
    }
    const Index truth = labels[static_cast<std::size_t>(nearest)];
    const Index predicted = index.nearest_label(v);
    hits += predicted == truth ? 1 : 0;
    for (std::size_t c = 0; c < index.labels.size(); ++c) {
      if (index.labels[c] == truth) {
        cos_total += CentroidIndex::cosine_or_zero(v, index.centroids.row(static_cast<Index>(c)).transpose());
      }
    }
  }
  out.accuracy = static_cast<double>(hits) / n_samples;
  out.mean_cosine_to_truth = cos_total / n_samples;
  return out;
}

inline Vector interpolate(const Vector& a, const Vector& b, double t) {
  require(a.size() == b.size(), ErrorKind::shape_mismatch, "interpolate: dimension mismatch");
  require(t >= 0.0 && t <= 1.0, ErrorKind::invalid_argument, "interpolate: t outside [0, 1]");
  return (1.0 - t) * a + t * b;
}

inline Vector concept_arithmetic(const Vector& query, const Vector& minus, const Vector& plus) {
  require(query.size() == minus.size() && query.size() == plus.size(), ErrorKind::shape_mismatch,
          "concept_arithmetic: dimension mismatch");
  return query - minus + plus;
}

inline Vector summarize(const Matrix& set) {
  require(set.rows() >= 1, ErrorKind::invalid_argument, "summarize: empty set");
  return set.colwise().mean().transpose();
}

}  // namespace brainloop::eval
