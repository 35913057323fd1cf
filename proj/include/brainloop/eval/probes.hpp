#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "brainloop/linalg.hpp"
#include "brainloop/random.hpp"

namespace brainloop::eval {

struct ProbeResult {
  std::string task_name;
  double accuracy = 0.0;
  int n_trials = 0;
  std::vector<double> per_trial;
};

inline ProbeResult summarize_trials(std::string name, std::vector<double> per_trial) {
  ProbeResult r;
  r.task_name = std::move(name);
  r.n_trials = static_cast<int>(per_trial.size());
  double total = 0.0;
  for (double v : per_trial) total += v;
  r.accuracy = per_trial.empty() ? 0.0 : total / static_cast<double>(per_trial.size());
  r.per_trial = std::move(per_trial);
  return r;
}

struct LogisticOptions {
  double l2 = 1.0;
  double tolerance = 1e-6;  ///< gradient-norm stopping threshold
  int max_iterations = 100000;
  bool standardize = false;
};

/// Multinomial logistic regression minimising
///   sum_i CE(softmax(W x_i + b), y_i) + (l2 / 2) ||W||^2
/// by full-batch gradient descent with step 1 / L (L a Lipschitz bound).
class LogisticRegression {
 public:
  void fit(const Matrix& x, const std::vector<Index>& y, Index n_classes, const LogisticOptions& options = {}) {
    require(x.rows() == static_cast<Index>(y.size()) && x.rows() > 0, ErrorKind::shape_mismatch,
            "logistic regression: label count differs from rows");
    require(n_classes >= 2, ErrorKind::invalid_argument, "logistic regression needs at least 2 classes");
    options_ = options;
    mean_ = Vector::Zero(x.cols());
    scale_ = Vector::Ones(x.cols());
    if (options.standardize) {
      mean_ = x.colwise().mean().transpose();
      const Matrix centered = x.rowwise() - mean_.transpose();
      for (Index c = 0; c < x.cols(); ++c) {
        const double sd = std::sqrt(centered.col(c).squaredNorm() / static_cast<double>(x.rows()));
        scale_(c) = sd > 0.0 ? sd : 1.0;
      }
    }
    const Matrix xs = transform(x);
    const Index n = xs.rows();
    const Index d = xs.cols();
    Matrix onehot = Matrix::Zero(n, n_classes);
    for (Index i = 0; i < n; ++i) {
      const Index c = y[static_cast<std::size_t>(i)];
      require(c >= 0 && c < n_classes, ErrorKind::invalid_argument, "logistic regression: label out of range");
      onehot(i, c) = 1.0;
    }
    // Softmax cross-entropy Hessian is bounded by (1/2) X~^T X~ with X~ = [X 1].
    Matrix aug(n, d + 1);
    aug.leftCols(d) = xs;
    aug.col(d).setOnes();
    const double spectral = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(aug.transpose() * aug).eigenvalues().maxCoeff();
    const double step = 1.0 / (0.5 * spectral + options.l2);
    weights_ = Matrix::Zero(d, n_classes);
    bias_ = Vector::Zero(n_classes);
    iterations_ = 0;
    converged_ = false;
    for (int it = 0; it < options.max_iterations; ++it) {
      const Matrix residual = probabilities_scaled(xs) - onehot;
      const Matrix gw = xs.transpose() * residual + options.l2 * weights_;
      const Vector gb = residual.colwise().sum().transpose();
      iterations_ = it + 1;
      if (std::sqrt(gw.squaredNorm() + gb.squaredNorm()) < options.tolerance) {
        converged_ = true;
        break;
      }
      weights_ -= step * gw;
      bias_ -= step * gb;
    }
  }

  [[nodiscard]] Matrix probabilities(const Matrix& x) const { return probabilities_scaled(transform(x)); }

  [[nodiscard]] std::vector<Index> predict(const Matrix& x) const {
    const Matrix p = probabilities(x);
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(p.rows()));
    for (Index r = 0; r < p.rows(); ++r) {
      Index best = 0;
      for (Index c = 1; c < p.cols(); ++c) {
        if (p(r, c) > p(r, best)) best = c;
      }
      out.push_back(best);
    }
    return out;
  }

  [[nodiscard]] int iterations() const { return iterations_; }
  [[nodiscard]] bool converged() const { return converged_; }

 private:
  [[nodiscard]] Matrix transform(const Matrix& x) const {
    Matrix out = x.rowwise() - mean_.transpose();
    return out * scale_.cwiseInverse().asDiagonal();
  }

  [[nodiscard]] Matrix probabilities_scaled(const Matrix& xs) const {
    Matrix logits = xs * weights_;
    logits.rowwise() += bias_.transpose();
    for (Index r = 0; r < logits.rows(); ++r) {
      const double mx = logits.row(r).maxCoeff();
      logits.row(r) = (logits.row(r).array() - mx).exp().matrix();
      logits.row(r) /= logits.row(r).sum();
    }
    return logits;
  }

  LogisticOptions options_;
  Vector mean_;
  Vector scale_;
  Matrix weights_;
  Vector bias_;
  int iterations_ = 0;
  bool converged_ = false;
};

inline double accuracy(const std::vector<Index>& predicted, const std::vector<Index>& truth) {
  require(predicted.size() == truth.size() && !truth.empty(), ErrorKind::shape_mismatch,
          "accuracy: prediction count differs from truth");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

inline Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

/// Remaps arbitrary labels to 0..k-1 in ascending order.
inline std::vector<Index> dense_labels(const std::vector<Index>& labels, Index* count = nullptr) {
  std::map<Index, Index> map;
  for (Index l : labels) map.emplace(l, 0);
  Index k = 0;
  for (auto& [label, id] : map) id = k++;
  if (count != nullptr) *count = k;
  std::vector<Index> out;
  out.reserve(labels.size());
  for (Index l : labels) out.push_back(map[l]);
  return out;
}

struct ProbeOptions {
  int trials = 100;
  std::uint64_t seed = 0;
  LogisticOptions logistic;
};

/// Each trial draws one exemplar per class, fits the classifier on them and
/// scores every other row.
inline ProbeResult one_shot_probe(const Matrix& x, const std::vector<Index>& labels, const ProbeOptions& options = {}) {
  require(x.rows() == static_cast<Index>(labels.size()), ErrorKind::shape_mismatch, "one_shot_probe: label count");
  Index k = 0;
  const std::vector<Index> y = dense_labels(labels, &k);
  require(k >= 2, ErrorKind::invalid_argument, "one_shot_probe needs at least 2 classes");
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(k));
  for (Index i = 0; i < x.rows(); ++i) members[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])].push_back(i);
  for (const auto& m : members) {
    require(m.size() >= 2, ErrorKind::invalid_argument, "one_shot_probe: every class needs a held-out instance");
  }
  Rng rng(options.seed);
  std::vector<double> per_trial;
  for (int t = 0; t < options.trials; ++t) {
    std::vector<Index> train;
    for (const auto& m : members) train.push_back(m[static_cast<std::size_t>(rng.index(static_cast<Index>(m.size())))]);
    std::vector<Index> train_y;
    for (Index i : train) train_y.push_back(y[static_cast<std::size_t>(i)]);
    const std::set<Index> chosen(train.begin(), train.end());
    std::vector<Index> test;
    std::vector<Index> test_y;
    for (Index i = 0; i < x.rows(); ++i) {
      if (chosen.count(i) == 0) {
        test.push_back(i);
        test_y.push_back(y[static_cast<std::size_t>(i)]);
      }
    }
    LogisticRegression lr;
    lr.fit(take_rows(x, train), train_y, k, options.logistic);
    per_trial.push_back(accuracy(lr.predict(take_rows(x, test)), test_y));
  }
  return summarize_trials("one_shot", std::move(per_trial));
}

/// Binary probe: `per_class` exemplars of each of the two training classes
/// carry the binary target; accuracy is scored on the unseen test rows.
inline ProbeResult ood_probe(const Matrix& train_x, const std::vector<Index>& train_class,
                             const std::vector<Index>& train_target, const Matrix& test_x,
                             const std::vector<Index>& test_target, int per_class = 5,
                             const ProbeOptions& options = {}) {
  require(train_x.rows() == static_cast<Index>(train_class.size()) &&
              train_class.size() == train_target.size() && test_x.rows() == static_cast<Index>(test_target.size()),
          ErrorKind::shape_mismatch, "ood_probe: label counts differ from rows");
  for (Index t : train_target) require(t == 0 || t == 1, ErrorKind::invalid_argument, "ood_probe: non-binary target");
  for (Index t : test_target) require(t == 0 || t == 1, ErrorKind::invalid_argument, "ood_probe: non-binary target");
  std::map<Index, std::vector<Index>> members;
  for (Index i = 0; i < train_x.rows(); ++i) members[train_class[static_cast<std::size_t>(i)]].push_back(i);
  require(members.size() == 2, ErrorKind::invalid_argument, "ood_probe: training data must hold exactly 2 classes");
  Rng rng(options.seed);
  std::vector<double> per_trial;
  for (int t = 0; t < options.trials; ++t) {
    std::vector<Index> rows;
    for (const auto& [cls, m] : members) {
      const auto take = std::min<Index>(per_class, static_cast<Index>(m.size()));
      for (Index pos : rng.sample(static_cast<Index>(m.size()), take)) rows.push_back(m[static_cast<std::size_t>(pos)]);
    }
    std::vector<Index> y;
    for (Index r : rows) y.push_back(train_target[static_cast<std::size_t>(r)]);
    LogisticRegression lr;
    lr.fit(take_rows(train_x, rows), y, 2, options.logistic);
    per_trial.push_back(accuracy(lr.predict(test_x), test_target));
  }
  return summarize_trials("ood", std::move(per_trial));
}

struct Triplet {
  Index i = 0;
  Index j = 0;
  Index k = 0;
  Index choice = 0;  ///< index of the item the respondent picked as odd (one of i, j, k)
};

/// Position (0, 1, 2) of the odd item: the one outside the most similar pair
/// under raw dot products; ties go to the first pair in (0,1), (0,2), (1,2) order.
inline int odd_one_out(const Vector& a, const Vector& b, const Vector& c) {
  const std::array<double, 3> sims{a.dot(b), a.dot(c), b.dot(c)};
  const std::array<int, 3> odd{2, 1, 0};
  int best = 0;
  for (int p = 1; p < 3; ++p) {
    if (sims[static_cast<std::size_t>(p)] > sims[static_cast<std::size_t>(best)]) best = p;
  }
  return odd[static_cast<std::size_t>(best)];
}

inline ProbeResult triplet_odd_one_out(const Matrix& embeddings, const std::vector<Triplet>& triplets) {
  require(!triplets.empty(), ErrorKind::invalid_argument, "triplet_odd_one_out: no triplets");
  std::size_t hits = 0;
  for (const auto& t : triplets) {
    require(t.i != t.j && t.i != t.k && t.j != t.k, ErrorKind::invalid_argument, "triplet with duplicate indices");
    for (Index v : {t.i, t.j, t.k}) {
      require(v >= 0 && v < embeddings.rows(), ErrorKind::invalid_argument, "triplet index out of range");
    }
    require(t.choice == t.i || t.choice == t.j || t.choice == t.k, ErrorKind::invalid_argument,
            "triplet choice is not one of its items");
    const std::array<Index, 3> items{t.i, t.j, t.k};
    const int odd = odd_one_out(embeddings.row(t.i).transpose(), embeddings.row(t.j).transpose(),
                                embeddings.row(t.k).transpose());
    hits += items[static_cast<std::size_t>(odd)] == t.choice ? 1 : 0;
  }
  ProbeResult r;
  r.task_name = "triplet_odd_one_out";
  r.n_trials = static_cast<int>(triplets.size());
  r.accuracy = static_cast<double>(hits) / static_cast<double>(triplets.size());
  return r;
}

struct RetrievalOptions {
  int n = 2;
  int trials = 500;
  int top_k = 1;
  bool distinct_categories = false;
  std::uint64_t seed = 0;
};

/// n-way retrieval: query q targets gallery class query_class[q]; each trial
/// mixes the target class with n - 1 random distractor classes and ranks the
/// candidate gallery rows by cosine similarity (ties to the lowest row).
inline ProbeResult nway_retrieval(const Matrix& queries, const std::vector<Index>& query_class, const Matrix& gallery,
                                  const std::vector<Index>& gallery_class, const RetrievalOptions& options = {}) {
  require(queries.rows() == static_cast<Index>(query_class.size()) &&
              gallery.rows() == static_cast<Index>(gallery_class.size()) && queries.rows() > 0,
          ErrorKind::shape_mismatch, "nway_retrieval: label counts differ from rows");
  require(queries.cols() == gallery.cols(), ErrorKind::shape_mismatch, "nway_retrieval: dimensions differ");
  std::map<Index, std::vector<Index>> by_class;
  for (Index g = 0; g < gallery.rows(); ++g) by_class[gallery_class[static_cast<std::size_t>(g)]].push_back(g);
  std::vector<Index> classes;
  for (const auto& [c, rows] : by_class) classes.push_back(c);
  require(options.n >= 2 && options.n <= static_cast<int>(classes.size()), ErrorKind::invalid_argument,
          "nway_retrieval: n=" + std::to_string(options.n) + " exceeds the " + std::to_string(classes.size()) +
              " gallery classes");
  require(options.top_k >= 1, ErrorKind::invalid_argument, "nway_retrieval: top_k must be positive");
  for (Index c : query_class) require(by_class.count(c) != 0, ErrorKind::not_found, "query class missing from gallery");
  const Matrix uq = unit_rows(queries);
  const Matrix ug = unit_rows(gallery);
  Rng rng(options.seed);
  std::vector<double> per_trial;
  for (int t = 0; t < options.trials; ++t) {
    const Index q = rng.index(queries.rows());
    const Index target = query_class[static_cast<std::size_t>(q)];
    std::vector<Index> others;
    for (Index c : classes) {
      if (c != target) others.push_back(c);
    }
    std::vector<Index> chosen{target};
    for (Index pos : rng.sample(static_cast<Index>(others.size()), options.n - 1)) {
      chosen.push_back(others[static_cast<std::size_t>(pos)]);
    }
    std::vector<std::pair<double, Index>> ranked;
    for (Index c : chosen) {
      for (Index g : by_class[c]) ranked.emplace_back(uq.row(q).dot(ug.row(g)), g);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::set<Index> seen;
    int rank = 0;
    bool hit = false;
    for (const auto& [sim, g] : ranked) {
      const Index c = gallery_class[static_cast<std::size_t>(g)];
      if (options.distinct_categories && !seen.insert(c).second) continue;
      if (c == target) {
        hit = true;
        break;
      }
      if (++rank >= options.top_k) break;
    }
    per_trial.push_back(hit ? 1.0 : 0.0);
  }
  return summarize_trials("nway_retrieval", std::move(per_trial));
}

}  // namespace brainloop::eval
