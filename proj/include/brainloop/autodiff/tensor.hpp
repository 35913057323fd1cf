#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "brainloop/error.hpp"

namespace brainloop::ad {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(Index rows, Index cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

/// Dense 2-D real tensor with row-major storage. Scalars are 1x1 and
/// vectors are n x 1 columns unless stated otherwise.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Index rows, Index cols) : values_(Matrix::Zero(rows, cols)) {}
  explicit Tensor(Matrix values) : values_(std::move(values)) {}

  Tensor(std::initializer_list<std::initializer_list<double>> rows) {
    const auto n = static_cast<Index>(rows.size());
    const auto m = n == 0 ? Index{0} : static_cast<Index>(rows.begin()->size());
    values_.resize(n, m);
    Index r = 0;
    for (const auto& row : rows) {
      require(static_cast<Index>(row.size()) == m, ErrorKind::shape_mismatch,
              "ragged initializer for Tensor");
      Index c = 0;
      for (double v : row) values_(r, c++) = v;
      ++r;
    }
  }

  static Tensor scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m));
  }

  static Tensor column(std::span<const double> values) {
    Matrix m(static_cast<Index>(values.size()), 1);
    for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Index>(i), 0) = values[i];
    return Tensor(std::move(m));
  }

  [[nodiscard]] Index rows() const noexcept { return values_.rows(); }
  [[nodiscard]] Index cols() const noexcept { return values_.cols(); }
  [[nodiscard]] std::array<Index, 2> shape() const noexcept { return {rows(), cols()}; }
  [[nodiscard]] Index size() const noexcept { return values_.size(); }

  [[nodiscard]] std::span<const double> data() const noexcept {
    return {values_.data(), static_cast<std::size_t>(values_.size())};
  }
  [[nodiscard]] std::span<double> data() noexcept {
    return {values_.data(), static_cast<std::size_t>(values_.size())};
  }

  [[nodiscard]] const Matrix& matrix() const noexcept { return values_; }
  [[nodiscard]] Matrix& matrix() noexcept { return values_; }

  double operator()(Index r, Index c) const { return values_(r, c); }
  double& operator()(Index r, Index c) { return values_(r, c); }

  [[nodiscard]] double item() const {
    require(size() == 1, ErrorKind::shape_mismatch,
            "item() on non-scalar tensor " + shape_string(rows(), cols()));
    return values_(0, 0);
  }

  [[nodiscard]] bool all_finite() const { return values_.allFinite(); }

 private:
  Matrix values_;
};

class Tape;

using NodeId = std::size_t;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Matrix& matrix() const { return value().matrix(); }
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] bool requires_grad() const;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// every node's parents precede it and a single reverse sweep suffices.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    require(value.all_finite(), ErrorKind::numeric, "non-finite value in tape leaf");
    nodes_.push_back(Node{std::move(value), Matrix{}, {}, {}, requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op result. The backward closure is kept only when some
  /// parent needs a gradient.
  Var record(const char* op, Matrix value, std::vector<NodeId> parents, BackwardFn backward) {
    if (!value.allFinite()) {
      throw Error(ErrorKind::numeric, std::string("non-finite value produced by ") + op);
    }
    bool needs = false;
    for (NodeId p : parents) needs = needs || nodes_.at(p).requires_grad;
    nodes_.push_back(Node{Tensor(std::move(value)), Matrix{}, std::move(parents),
                          needs ? std::move(backward) : BackwardFn{}, needs});
    return Var{this, nodes_.size() - 1};
  }

  [[nodiscard]] const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  [[nodiscard]] bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the most recent backward() target w.r.t. the node; zeros
  /// when the node did not influence it.
  [[nodiscard]] Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Tensor(n.value.rows(), n.value.cols());
    return Tensor(n.grad);
  }

  /// True when the last backward() sweep reached the node.
  [[nodiscard]] bool has_grad(Var v) const { return nodes_.at(v.id).grad.size() != 0; }

  /// Upstream gradient of a node during the backward sweep.
  [[nodiscard]] const Matrix& upstream(NodeId id) const { return nodes_[id].grad; }

  template <typename Derived>
  void accumulate(NodeId id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad.resize(0, 0);
  }

  /// Accumulates d(loss)/d(node) into every node that requires a gradient.
  void backward(Var loss) {
    require(loss.tape == this, ErrorKind::invalid_argument, "loss recorded on another tape");
    const Tensor& v = value(loss.id);
    require(v.size() == 1, ErrorKind::shape_mismatch,
            "backward() needs a scalar loss, got " + shape_string(v.rows(), v.cols()));
    if (!nodes_[loss.id].requires_grad) return;
    accumulate(loss.id, Matrix::Ones(1, 1));
    for (NodeId i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Matrix grad;
    std::vector<NodeId> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

}  // namespace brainloop::ad
