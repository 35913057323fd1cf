#pragma once

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "brainloop/embedding_set.hpp"
#include "brainloop/eval/pca.hpp"
#include "brainloop/ot/gromov.hpp"

namespace brainloop::eval {

/// Symmetric dissimilarity matrix with zero diagonal.
struct DissimMatrix {
  Matrix values;
  std::vector<std::string> labels;
  Index components_used = 0;
  bool components_reduced = false;
};

/// Mean row of each category; `categories[i]` indexes rows of the result.
inline Matrix centroids(const Matrix& points, const std::vector<Index>& categories, Index count) {
  require(static_cast<Index>(categories.size()) == points.rows(), ErrorKind::shape_mismatch,
          "centroids: label count differs from row count");
  Matrix sums = Matrix::Zero(count, points.cols());
  std::vector<Index> sizes(static_cast<std::size_t>(count), 0);
  for (Index r = 0; r < points.rows(); ++r) {
    const Index c = categories[static_cast<std::size_t>(r)];
    require(c >= 0 && c < count, ErrorKind::invalid_argument, "centroids: category index out of range");
    sums.row(c) += points.row(r);
    ++sizes[static_cast<std::size_t>(c)];
  }
  for (Index c = 0; c < count; ++c) {
    require(sizes[static_cast<std::size_t>(c)] > 0, ErrorKind::invalid_argument,
            "centroids: empty category " + std::to_string(c));
    sums.row(c) /= static_cast<double>(sizes[static_cast<std::size_t>(c)]);
  }
  return sums;
}

/// 1 - cos over rows; a pair involving a zero row has similarity 0 unless
/// both rows are zero.
inline Matrix cosine_distance_matrix(const Matrix& rows) {
  const Index n = rows.rows();
  Vector norms = rows.rowwise().norm();
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      double sim = 0.0;
      if (norms(i) > 0.0 && norms(j) > 0.0) {
        sim = rows.row(i).dot(rows.row(j)) / (norms(i) * norms(j));
      } else if (norms(i) == 0.0 && norms(j) == 0.0) {
        sim = 1.0;
      }
      d(i, j) = d(j, i) = std::clamp(1.0 - sim, 0.0, 2.0);
    }
  }
  return d;
}

/// Cosine-distance RDM of rows after projection onto the leading principal
/// axes of the uncentered rows (right singular vectors), so the mean
/// direction survives and one-hot rows stay orthogonal. The component count
/// drops to the data rank when needed.
inline DissimMatrix compute_rdm(const Matrix& embeddings, Index n_components = 8) {
  require(embeddings.rows() >= 1, ErrorKind::invalid_argument, "compute_rdm: no rows");
  require(n_components >= 1 && n_components <= std::min(embeddings.rows(), embeddings.cols()),
          ErrorKind::invalid_argument, "compute_rdm: n_components exceeds min(rows, dims)");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(embeddings, Eigen::ComputeThinV);
  const Vector s = svd.singularValues();
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i) {
    if (s(0) > 0.0 && s(i) > 1e-10 * s(0)) ++rank;
  }
  DissimMatrix out;
  const Index used = std::min(n_components, rank);
  out.components_used = used;
  out.components_reduced = used < n_components;
  if (used == 0) {
    out.values = Matrix::Zero(embeddings.rows(), embeddings.rows());
    return out;
  }
  out.values = cosine_distance_matrix(embeddings * svd.matrixV().leftCols(used));
  return out;
}

/// Cosine distances between category centroids, categories in first-appearance order.
inline DissimMatrix compute_csm(const EmbeddingSet& set) {
  const auto cats = set.categories();
  require(cats.size() >= 2, ErrorKind::invalid_argument, "compute_csm needs at least 2 categories");
  DissimMatrix out;
  out.labels = cats;
  out.values = ot::self_similarity(centroids(set.matrix, set.category_indices(cats), static_cast<Index>(cats.size())));
  return out;
}

/// Undirected label graph.
struct Taxonomy {
  std::map<std::string, std::set<std::string>> adjacency;
  std::set<std::string> concrete_leaves;

  void add_edge(const std::string& parent, const std::string& child) {
    adjacency[parent].insert(child);
    adjacency[child].insert(parent);
  }

  void finalize_leaves() {
    concrete_leaves.clear();
    for (const auto& [node, nbrs] : adjacency) {
      if (nbrs.size() == 1) concrete_leaves.insert(node);
    }
  }
};

/// Reads `parent<TAB>child` lines; blank lines and '#' comments are skipped.
inline Taxonomy load_taxonomy(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open taxonomy file " + path);
  Taxonomy tax;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos && tab > 0 && tab + 1 < line.size(), ErrorKind::invalid_argument,
            path + ":" + std::to_string(lineno) + ": expected parent<TAB>child");
    tax.add_edge(line.substr(0, tab), line.substr(tab + 1));
  }
  tax.finalize_leaves();
  return tax;
}

/// Breadth-first hop counts from `source` to every reachable node.
inline std::map<std::string, int> bfs_distances(const Taxonomy& tax, const std::string& source) {
  std::map<std::string, int> dist{{source, 0}};
  std::deque<std::string> queue{source};
  while (!queue.empty()) {
    const std::string node = queue.front();
    queue.pop_front();
    auto it = tax.adjacency.find(node);
    if (it == tax.adjacency.end()) continue;
    for (const auto& next : it->second) {
      if (dist.emplace(next, dist[node] + 1).second) queue.push_back(next);
    }
  }
  return dist;
}

inline DissimMatrix taxonomy_csm(const Taxonomy& tax, const std::vector<std::string>& labels) {
  DissimMatrix out;
  out.labels = labels;
  const auto n = static_cast<Index>(labels.size());
  out.values = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const auto& a = labels[static_cast<std::size_t>(i)];
    require(tax.adjacency.count(a) != 0, ErrorKind::not_found, "label '" + a + "' not in taxonomy");
    const auto dist = bfs_distances(tax, a);
    for (Index j = 0; j < n; ++j) {
      const auto& b = labels[static_cast<std::size_t>(j)];
      require(tax.adjacency.count(b) != 0, ErrorKind::not_found, "label '" + b + "' not in taxonomy");
      auto it = dist.find(b);
      require(it != dist.end(), ErrorKind::disconnected, "no taxonomy path between '" + a + "' and '" + b + "'");
      out.values(i, j) = it->second;
    }
  }
  return out;
}

struct Merge {
  Index left = 0;   ///< cluster id; leaves are 0..n-1, merge k creates id n + k
  Index right = 0;
  double distance = 0.0;
  Index size = 0;
};

/// Average-linkage agglomeration. Each step merges the closest pair of
/// active clusters; ties go to the lexicographically smallest id pair.
inline std::vector<Merge> average_linkage(const Matrix& d) {
  const Index n = d.rows();
  require(d.cols() == n, ErrorKind::shape_mismatch, "average_linkage: matrix must be square");
  std::vector<Merge> merges;
  if (n <= 1) return merges;
  std::vector<Index> ids(static_cast<std::size_t>(n));
  std::vector<Index> sizes(static_cast<std::size_t>(n), 1);
  for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  Matrix dist = d;
  std::vector<bool> active(static_cast<std::size_t>(n), true);
  for (Index step = 0; step + 1 < n; ++step) {
    Index bi = -1;
    Index bj = -1;
    double best = std::numeric_limits<double>::infinity();
    std::pair<Index, Index> best_ids;
    for (Index i = 0; i < n; ++i) {
      if (!active[static_cast<std::size_t>(i)]) continue;
      for (Index j = i + 1; j < n; ++j) {
        if (!active[static_cast<std::size_t>(j)]) continue;
        const auto a = ids[static_cast<std::size_t>(i)];
        const auto b = ids[static_cast<std::size_t>(j)];
        const std::pair<Index, Index> key{std::min(a, b), std::max(a, b)};
        if (dist(i, j) < best || (dist(i, j) == best && key < best_ids)) {
          best = dist(i, j);
          bi = i;
          bj = j;
          best_ids = key;
        }
      }
    }
    const auto si = static_cast<double>(sizes[static_cast<std::size_t>(bi)]);
    const auto sj = static_cast<double>(sizes[static_cast<std::size_t>(bj)]);
    for (Index k = 0; k < n; ++k) {
      if (!active[static_cast<std::size_t>(k)] || k == bi || k == bj) continue;
      const double v = (si * dist(bi, k) + sj * dist(bj, k)) / (si + sj);
      dist(bi, k) = dist(k, bi) = v;
    }
    merges.push_back(Merge{best_ids.first, best_ids.second, best,
                           sizes[static_cast<std::size_t>(bi)] + sizes[static_cast<std::size_t>(bj)]});
    active[static_cast<std::size_t>(bj)] = false;
    sizes[static_cast<std::size_t>(bi)] += sizes[static_cast<std::size_t>(bj)];
    ids[static_cast<std::size_t>(bi)] = n + step;
  }
  return merges;
}

/// Left-to-right dendrogram leaf order (smaller child id on the left).
inline std::vector<Index> leaf_order(const std::vector<Merge>& merges, Index n) {
  if (n <= 0) return {};
  if (merges.empty()) return {0};
  std::vector<Index> order;
  std::vector<Index> stack{n + static_cast<Index>(merges.size()) - 1};
  while (!stack.empty()) {
    const Index id = stack.back();
    stack.pop_back();
    if (id < n) {
      order.push_back(id);
      continue;
    }
    const Merge& m = merges[static_cast<std::size_t>(id - n)];
    stack.push_back(m.right);
    stack.push_back(m.left);
  }
  return order;
}

inline std::vector<Index> cluster_order(const DissimMatrix& m) {
  return leaf_order(average_linkage(m.values), m.values.rows());
}

}  // namespace brainloop::eval
