#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "brainloop/linalg.hpp"

namespace brainloop {

/// N x D embeddings with per-row instance and category ids.
struct EmbeddingSet {
  Matrix matrix;
  std::vector<std::string> instance_ids;
  std::vector<std::string> category_ids;
  std::string meta;

  [[nodiscard]] Index size() const { return matrix.rows(); }
  [[nodiscard]] Index dim() const { return matrix.cols(); }

  void validate() const {
    require(matrix.rows() >= 1, ErrorKind::invalid_argument, "embedding set is empty");
    require(static_cast<Index>(instance_ids.size()) == matrix.rows() &&
                static_cast<Index>(category_ids.size()) == matrix.rows(),
            ErrorKind::shape_mismatch, "embedding set: id lists do not match the row count");
    require(matrix.allFinite(), ErrorKind::non_finite_value, "embedding set contains NaN or Inf");
    for (Index r = 0; r < matrix.rows(); ++r) {
      require(matrix.row(r).norm() > 0.0, ErrorKind::numeric,
              "embedding set: zero-norm row " + instance_ids[static_cast<std::size_t>(r)]);
    }
    std::set<std::string> seen;
    for (const auto& id : instance_ids) {
      require(seen.insert(id).second, ErrorKind::invalid_argument, "duplicate instance id '" + id + "'");
    }
  }

  /// Distinct categories in order of first appearance.
  [[nodiscard]] std::vector<std::string> categories() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& c : category_ids) {
      if (seen.insert(c).second) out.push_back(c);
    }
    return out;
  }

  /// Category of each row as an index into `order`.
  [[nodiscard]] std::vector<Index> category_indices(const std::vector<std::string>& order) const {
    std::map<std::string, Index> pos;
    for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = static_cast<Index>(i);
    std::vector<Index> out;
    out.reserve(category_ids.size());
    for (const auto& c : category_ids) {
      auto it = pos.find(c);
      require(it != pos.end(), ErrorKind::not_found, "category '" + c + "' missing from the category order");
      out.push_back(it->second);
    }
    return out;
  }

  [[nodiscard]] std::vector<Index> category_indices() const { return category_indices(categories()); }

  [[nodiscard]] EmbeddingSet subset(const std::vector<Index>& rows) const {
    EmbeddingSet out;
    out.matrix.resize(static_cast<Index>(rows.size()), matrix.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.matrix.row(static_cast<Index>(i)) = matrix.row(rows[i]);
      out.instance_ids.push_back(instance_ids[static_cast<std::size_t>(rows[i])]);
      out.category_ids.push_back(category_ids[static_cast<std::size_t>(rows[i])]);
    }
    out.meta = meta;
    return out;
  }
};

}  // namespace brainloop
