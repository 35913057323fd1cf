#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "brainloop/autodiff/ops.hpp"
#include "brainloop/linalg.hpp"
#include "brainloop/ot/gromov.hpp"
#include "brainloop/random.hpp"

namespace brainloop::structure {

/// splitmix64 finalizer; derives independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Gumbel(0, 1) draws as -log(-log(U)) with U strictly inside (0, 1).
class GumbelStream {
 public:
  explicit GumbelStream(std::uint64_t seed) : rng_(seed) {}

  double next() { return -std::log(-std::log(rng_.uniform())); }

 private:
  Rng rng_;
};

struct NeighborScores {
  std::vector<Index> candidates;  ///< the N - 1 indices other than the anchor, ascending
  Vector soft;                    ///< s_i over candidates
  Vector hard;                    ///< one-hot argmax of soft
  Index source_index = 0;
  std::uint64_t gumbel_seed = 0;
};

/// Putative matches plus the labelled ground-truth pairs.
struct CorrespondenceSet {
  struct Pair {
    Index x = 0;
    Index y = 0;
    double mass = 0.0;
  };
  std::vector<Pair> pairs;
  std::set<std::pair<Index, Index>> ground_truth;
};

struct LocalStructure {
  std::vector<Index> x_neighbors;
  std::vector<Index> y_neighbors;
  Matrix cx;
  Matrix cy;
  int true_count = 0;                               ///< W
  std::vector<std::pair<Index, Index>> false_set;   ///< V, as (position in x_neighbors, position in y_neighbors)
};

/// Result of K successive draws without replacement around one anchor.
struct DrawSequence {
  std::vector<Index> picks;
  Matrix noise;        ///< K x N Gumbel noise actually added to the logits
  ad::BoolMatrix allowed;  ///< K x N candidate mask used at each draw
};

/// Runs K straight-through draws over one row of logits. Candidate j is
/// excluded when it is the anchor or was picked by an earlier draw.
inline DrawSequence draw_without_replacement(const double* logits, Index n, Index anchor, int k,
                                             std::uint64_t seed, bool noise) {
  require(n >= 2, ErrorKind::invalid_argument, "neighbor sampling needs at least 2 points");
  require(k >= 1 && k < n, ErrorKind::invalid_argument,
          "cannot draw " + std::to_string(k) + " neighbors from " + std::to_string(n - 1) + " candidates");
  DrawSequence out;
  out.noise = Matrix::Zero(k, n);
  out.allowed = ad::BoolMatrix::Constant(k, n, true);
  GumbelStream gumbel(seed);
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  taken[static_cast<std::size_t>(anchor)] = true;
  std::vector<double> perturbed(static_cast<std::size_t>(n));
  std::vector<double> soft(static_cast<std::size_t>(n));
  for (int t = 0; t < k; ++t) {
    for (Index j = 0; j < n; ++j) {
      const double g = noise ? gumbel.next() : 0.0;
      out.noise(t, j) = g;
      out.allowed(t, j) = !taken[static_cast<std::size_t>(j)];
      perturbed[static_cast<std::size_t>(j)] = logits[j] + g;
    }
    ad::detail::masked_softmax_row(perturbed.data(), out.allowed.row(t).data(), n, soft.data());
    const Index pick = ad::detail::argmax_lowest(soft.data(), n);
    out.picks.push_back(pick);
    taken[static_cast<std::size_t>(pick)] = true;
  }
  return out;
}

/// Logits x_i . x_j of unit-normalized rows for one anchor.
inline Vector anchor_logits(const Matrix& unit_points, Index anchor) {
  return unit_points * unit_points.row(anchor).transpose();
}

/// Gumbel-Softmax similarity scores of every other point around `anchor_index`
/// (first draw of the anchor's stream), with the straight-through hard pick.
inline NeighborScores gumbel_scores(Index anchor_index, const Matrix& embeddings, std::uint64_t seed,
                                    bool noise = true) {
  const Index n = embeddings.rows();
  require(n >= 2, ErrorKind::invalid_argument, "gumbel_scores needs at least 2 points");
  require(anchor_index >= 0 && anchor_index < n, ErrorKind::invalid_argument, "gumbel_scores: anchor out of range");
  const Matrix u = unit_rows(embeddings);
  const Vector logits = anchor_logits(u, anchor_index);
  const std::uint64_t stream = mix_seed(seed, static_cast<std::uint64_t>(anchor_index));
  GumbelStream gumbel(stream);
  NeighborScores out;
  out.source_index = anchor_index;
  out.gumbel_seed = stream;
  std::vector<double> perturbed;
  for (Index j = 0; j < n; ++j) {
    const double g = noise ? gumbel.next() : 0.0;
    if (j == anchor_index) continue;
    out.candidates.push_back(j);
    perturbed.push_back(logits(j) + g);
  }
  const auto m = static_cast<Index>(perturbed.size());
  out.soft.resize(m);
  const ad::BoolMatrix mask = ad::BoolMatrix::Constant(1, m, true);
  ad::detail::masked_softmax_row(perturbed.data(), mask.data(), m, out.soft.data());
  out.hard = Vector::Zero(m);
  out.hard(ad::detail::argmax_lowest(out.soft.data(), m)) = 1.0;
  return out;
}

/// One-hot argmax with ties to the lowest index.
inline Vector straight_through(const Vector& soft) {
  require(soft.size() > 0, ErrorKind::invalid_argument, "straight_through of an empty vector");
  Vector hard = Vector::Zero(soft.size());
  hard(ad::detail::argmax_lowest(soft.data(), soft.size())) = 1.0;
  return hard;
}

/// Stream seeds: one per (pair, side) so x and y draws are independent.
inline std::uint64_t side_seed(std::uint64_t seed, Index pair, int side) {
  return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(pair)), static_cast<std::uint64_t>(side));
}

/// Fills W and V from the neighbor lists and the ground truth. A neighbor is
/// true when its ground-truth partner lies in the other neighborhood; W counts
/// the true x-neighbors and V holds every pair that is not true on both sides.
inline void classify_pairs(LocalStructure& s, const std::set<std::pair<Index, Index>>& ground_truth) {
  std::vector<bool> x_true(s.x_neighbors.size(), false);
  std::vector<bool> y_true(s.y_neighbors.size(), false);
  for (std::size_t i = 0; i < s.x_neighbors.size(); ++i) {
    for (std::size_t j = 0; j < s.y_neighbors.size(); ++j) {
      if (ground_truth.count({s.x_neighbors[i], s.y_neighbors[j]}) != 0) {
        x_true[i] = true;
        y_true[j] = true;
      }
    }
  }
  s.true_count = static_cast<int>(std::count(x_true.begin(), x_true.end(), true));
  s.true_count = std::min(s.true_count, static_cast<int>(std::count(y_true.begin(), y_true.end(), true)));
  s.false_set.clear();
  for (std::size_t i = 0; i < s.x_neighbors.size(); ++i) {
    for (std::size_t j = 0; j < s.y_neighbors.size(); ++j) {
      if (!(x_true[i] && y_true[j])) s.false_set.emplace_back(static_cast<Index>(i), static_cast<Index>(j));
    }
  }
}

/// Local neighborhoods of the putative pair `pair_index`: K1 draws around x_i
/// and K2 draws around y_i, then the self-similarities of the selected latents.
inline LocalStructure build_local_structure(Index pair_index, const CorrespondenceSet& correspondences,
                                            const Matrix& x_latents, const Matrix& y_latents, int k1, int k2,
                                            std::uint64_t seed, bool noise = true) {
  require(pair_index >= 0 && pair_index < static_cast<Index>(correspondences.pairs.size()),
          ErrorKind::invalid_argument, "build_local_structure: pair index out of range");
  require(k1 < x_latents.rows() && k2 < y_latents.rows(), ErrorKind::invalid_argument,
          "build_local_structure: k exceeds the population (k1=" + std::to_string(k1) +
              ", k2=" + std::to_string(k2) + ")");
  const auto& pair = correspondences.pairs[static_cast<std::size_t>(pair_index)];
  const Matrix ux = unit_rows(x_latents);
  const Matrix uy = unit_rows(y_latents);
  const Vector lx = anchor_logits(ux, pair.x);
  const Vector ly = anchor_logits(uy, pair.y);
  LocalStructure s;
  s.x_neighbors = draw_without_replacement(lx.data(), lx.size(), pair.x, k1, side_seed(seed, pair_index, 0), noise).picks;
  s.y_neighbors = draw_without_replacement(ly.data(), ly.size(), pair.y, k2, side_seed(seed, pair_index, 1), noise).picks;
  Matrix nx(k1, ux.cols());
  Matrix ny(k2, uy.cols());
  for (int i = 0; i < k1; ++i) nx.row(i) = ux.row(s.x_neighbors[static_cast<std::size_t>(i)]);
  for (int i = 0; i < k2; ++i) ny.row(i) = uy.row(s.y_neighbors[static_cast<std::size_t>(i)]);
  if (k1 >= 2) {
    s.cx = ot::self_similarity(nx);
  } else {
    s.cx = Matrix::Zero(1, 1);
  }
  if (k2 >= 2) {
    s.cy = ot::self_similarity(ny);
  } else {
    s.cy = Matrix::Zero(1, 1);
  }
  classify_pairs(s, correspondences.ground_truth);
  return s;
}

/// Straight-through neighbor draws recorded on the tape for a batch of anchors.
/// Row a*K + t of `hard`/`soft` is draw t around anchor a, over all N points.
struct TapeNeighborhoods {
  ad::Var hard;
  ad::Var soft;
  std::vector<std::vector<Index>> picks;
  int k = 0;
};

/// `unit_latents` must hold unit-norm rows (the logits are their dot products).
inline TapeNeighborhoods sample_on_tape(ad::Var unit_latents, const std::vector<Index>& anchors, int k,
                                        std::uint64_t seed, int side, bool noise = true) {
  require(!anchors.empty(), ErrorKind::invalid_argument, "sample_on_tape: no anchors");
  const Index n = unit_latents.rows();
  std::vector<Index> repeated;
  for (Index a : anchors) repeated.insert(repeated.end(), static_cast<std::size_t>(k), a);
  ad::Var logits = ad::matmul(ad::gather_rows(unit_latents, repeated), ad::transpose(unit_latents));
  const auto rows = static_cast<Index>(repeated.size());
  Matrix noise_all(rows, n);
  ad::BoolMatrix allowed(rows, n);
  TapeNeighborhoods out;
  out.k = k;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const auto r0 = static_cast<Index>(a) * k;
    const Matrix row = logits.matrix().row(r0);
    DrawSequence d = draw_without_replacement(row.data(), n, anchors[a], k,
                                              side_seed(seed, anchors[a], side), noise);
    noise_all.middleRows(r0, k) = d.noise;
    allowed.middleRows(r0, k) = d.allowed;
    out.picks.push_back(std::move(d.picks));
  }
  ad::Var perturbed = ad::add(logits, unit_latents.tape->constant(ad::Tensor(std::move(noise_all))));
  out.soft = ad::masked_softmax_rows(perturbed, allowed);
  out.hard = ad::straight_through(out.soft);
  return out;
}

}  // namespace brainloop::structure
