#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "brainloop/autodiff/tensor.hpp"

namespace brainloop::ad {

/// Floor applied by clamped logarithms so that zero-mass plan entries stay finite.
inline constexpr double kLogFloor = 1e-12;

namespace detail {

inline void same_tape(Var a, Var b) {
  require(a.tape != nullptr && a.tape == b.tape, ErrorKind::invalid_argument,
          "operands recorded on different tapes");
}

inline void same_shape(const char* op, Var a, Var b) {
  same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::shape_mismatch,
          std::string(op) + ": shapes " + shape_string(a.rows(), a.cols()) + " and " +
              shape_string(b.rows(), b.cols()) + " differ");
}

inline void column_vector(const char* op, Var v, Index n) {
  require(v.cols() == 1 && v.rows() == n, ErrorKind::shape_mismatch,
          std::string(op) + ": expected column vector of length " + std::to_string(n) + ", got " +
              shape_string(v.rows(), v.cols()));
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  require(a.cols() == b.rows(), ErrorKind::shape_mismatch,
          "matmul: inner dimensions of " + shape_string(a.rows(), a.cols()) + " and " +
              shape_string(b.rows(), b.cols()) + " disagree");
  Matrix out = a.matrix() * b.matrix();
  return a.tape->record("matmul", std::move(out), {a.id, b.id}, [a, b](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    if (a.requires_grad()) t.accumulate(a.id, g * b.matrix().transpose());
    if (b.requires_grad()) t.accumulate(b.id, a.matrix().transpose() * g);
  });
}

inline Var transpose(Var a) {
  Matrix out = a.matrix().transpose();
  return a.tape->record("transpose", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
    t.accumulate(a.id, t.upstream(self).transpose());
  });
}

inline Var add(Var a, Var b) {
  detail::same_shape("add", a, b);
  Matrix out = a.matrix() + b.matrix();
  return a.tape->record("add", std::move(out), {a.id, b.id}, [a, b](Tape& t, NodeId self) {
    t.accumulate(a.id, t.upstream(self));
    t.accumulate(b.id, t.upstream(self));
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape("sub", a, b);
  Matrix out = a.matrix() - b.matrix();
  return a.tape->record("sub", std::move(out), {a.id, b.id}, [a, b](Tape& t, NodeId self) {
    t.accumulate(a.id, t.upstream(self));
    t.accumulate(b.id, -t.upstream(self));
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  detail::same_shape("mul", a, b);
  Matrix out = a.matrix().cwiseProduct(b.matrix());
  return a.tape->record("mul", std::move(out), {a.id, b.id}, [a, b](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    if (a.requires_grad()) t.accumulate(a.id, g.cwiseProduct(b.matrix()));
    if (b.requires_grad()) t.accumulate(b.id, g.cwiseProduct(a.matrix()));
  });
}

inline Var div(Var a, Var b) {
  detail::same_shape("div", a, b);
  require((b.matrix().array() != 0.0).all(), ErrorKind::numeric, "div: zero denominator");
  Matrix out = a.matrix().cwiseQuotient(b.matrix());
  return a.tape->record("div", std::move(out), {a.id, b.id}, [a, b](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    if (a.requires_grad()) t.accumulate(a.id, g.cwiseQuotient(b.matrix()));
    if (b.requires_grad()) {
      const Matrix& q = t.value(self).matrix();
      t.accumulate(b.id, -g.cwiseProduct(q).cwiseQuotient(b.matrix()));
    }
  });
}

enum class Elementwise { exp, log, relu, neg, add_scalar, mul_scalar };

/// Unary elementwise op. `scalar` is the operand of add_scalar/mul_scalar and
/// the clamp floor of log (0 disables clamping, so nonpositive input is an error).
inline Var elementwise(Var a, Elementwise kind, double scalar = 0.0) {
  const Matrix& x = a.matrix();
  switch (kind) {
    case Elementwise::exp: {
      Matrix out = x.array().exp().matrix();
      return a.tape->record("exp", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
        t.accumulate(a.id, t.upstream(self).cwiseProduct(t.value(self).matrix()));
      });
    }
    case Elementwise::log: {
      const double floor = scalar;
      if (floor <= 0.0) {
        require((x.array() > 0.0).all(), ErrorKind::numeric,
                "log of nonpositive value without clamp floor");
      }
      Matrix out = x.array().max(floor > 0.0 ? floor : 0.0).log().matrix();
      return a.tape->record("log", std::move(out), {a.id}, [a, floor](Tape& t, NodeId self) {
        const Matrix& in = a.matrix();
        Matrix g = t.upstream(self).cwiseQuotient(in);
        if (floor > 0.0) g = (in.array() < floor).select(0.0, g.array()).matrix();
        t.accumulate(a.id, g);
      });
    }
    case Elementwise::relu: {
      Matrix out = x.cwiseMax(0.0);
      return a.tape->record("relu", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
        t.accumulate(a.id, (a.matrix().array() > 0.0).select(t.upstream(self).array(), 0.0).matrix());
      });
    }
    case Elementwise::neg: {
      Matrix out = -x;
      return a.tape->record("neg", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
        t.accumulate(a.id, -t.upstream(self));
      });
    }
    case Elementwise::add_scalar: {
      Matrix out = (x.array() + scalar).matrix();
      return a.tape->record("add_scalar", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
        t.accumulate(a.id, t.upstream(self));
      });
    }
    case Elementwise::mul_scalar: {
      Matrix out = x * scalar;
      return a.tape->record("mul_scalar", std::move(out), {a.id}, [a, scalar](Tape& t, NodeId self) {
        t.accumulate(a.id, t.upstream(self) * scalar);
      });
    }
  }
  throw Error(ErrorKind::invalid_argument, "unknown elementwise kind");
}

inline Var exp(Var a) { return elementwise(a, Elementwise::exp); }
inline Var log(Var a, double clamp_floor = 0.0) { return elementwise(a, Elementwise::log, clamp_floor); }
inline Var relu(Var a) { return elementwise(a, Elementwise::relu); }
inline Var neg(Var a) { return elementwise(a, Elementwise::neg); }
inline Var add_scalar(Var a, double s) { return elementwise(a, Elementwise::add_scalar, s); }
inline Var mul_scalar(Var a, double s) { return elementwise(a, Elementwise::mul_scalar, s); }

inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.matrix().sum();
  return a.tape->record("sum", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
    t.accumulate(a.id, Matrix::Constant(a.rows(), a.cols(), t.upstream(self)(0, 0)));
  });
}

/// Per-row sums as an n x 1 column.
inline Var row_sums(Var a) {
  Matrix out = a.matrix().rowwise().sum();
  return a.tape->record("row_sums", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(a.id, g.replicate(1, a.cols()));
  });
}

/// Per-column sums as an m x 1 column.
inline Var col_sums(Var a) {
  Matrix out = a.matrix().colwise().sum().transpose();
  return a.tape->record("col_sums", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(a.id, g.transpose().replicate(a.rows(), 1));
  });
}

/// diag(v) * m with v an n x 1 column.
inline Var scale_rows(Var m, Var v) {
  detail::same_tape(m, v);
  detail::column_vector("scale_rows", v, m.rows());
  Matrix out = v.matrix().col(0).asDiagonal() * m.matrix();
  return m.tape->record("scale_rows", std::move(out), {m.id, v.id}, [m, v](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    if (m.requires_grad()) t.accumulate(m.id, v.matrix().col(0).asDiagonal() * g);
    if (v.requires_grad()) t.accumulate(v.id, g.cwiseProduct(m.matrix()).rowwise().sum());
  });
}

/// m * diag(v) with v an m x 1 column.
inline Var scale_cols(Var m, Var v) {
  detail::same_tape(m, v);
  detail::column_vector("scale_cols", v, m.cols());
  Matrix out = m.matrix() * v.matrix().col(0).asDiagonal();
  return m.tape->record("scale_cols", std::move(out), {m.id, v.id}, [m, v](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    if (m.requires_grad()) t.accumulate(m.id, g * v.matrix().col(0).asDiagonal());
    if (v.requires_grad()) t.accumulate(v.id, g.cwiseProduct(m.matrix()).colwise().sum().transpose());
  });
}

/// Adds a 1 x c row (e.g. a bias) to every row of m.
inline Var add_row_vector(Var m, Var row) {
  detail::same_tape(m, row);
  require(row.rows() == 1 && row.cols() == m.cols(), ErrorKind::shape_mismatch,
          "add_row_vector: expected row of shape " + shape_string(1, m.cols()));
  Matrix out = m.matrix().rowwise() + row.matrix().row(0);
  return m.tape->record("add_row_vector", std::move(out), {m.id, row.id}, [m, row](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(m.id, g);
    if (row.requires_grad()) t.accumulate(row.id, g.colwise().sum());
  });
}

inline Var softmax_rows(Var a) {
  const Matrix& x = a.matrix();
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return a.tape->record("softmax_rows", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
    const Matrix& y = t.value(self).matrix();
    const Matrix& g = t.upstream(self);
    Matrix dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(a.id, y.cwiseProduct(g - dot.replicate(1, y.cols())));
  });
}

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

/// Softmax of x over the allowed entries; the rest get exactly 0.
inline void masked_softmax_row(const double* x, const bool* allowed, Index n, double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Index c = 0; c < n; ++c) {
    if (allowed[c]) mx = std::max(mx, x[c]);
  }
  require(std::isfinite(mx), ErrorKind::invalid_argument, "masked softmax: row fully masked");
  double total = 0.0;
  for (Index c = 0; c < n; ++c) {
    out[c] = allowed[c] ? std::exp(x[c] - mx) : 0.0;
    total += out[c];
  }
  for (Index c = 0; c < n; ++c) out[c] /= total;
}

/// Index of the largest entry, ties to the lowest index.
inline Index argmax_lowest(const double* p, Index n) {
  Index best = 0;
  for (Index c = 1; c < n; ++c) {
    if (p[c] > p[best]) best = c;
  }
  return best;
}

}  // namespace detail

/// Row softmax restricted to entries where `allowed` is true; disallowed
/// entries get probability exactly 0. Every row needs at least one allowed entry.
inline Var masked_softmax_rows(Var a, const BoolMatrix& allowed) {
  const Matrix& x = a.matrix();
  require(allowed.rows() == x.rows() && allowed.cols() == x.cols(), ErrorKind::shape_mismatch,
          "masked_softmax_rows: mask shape differs from input");
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    detail::masked_softmax_row(x.row(r).data(), allowed.row(r).data(), x.cols(), out.row(r).data());
  }
  return a.tape->record("masked_softmax_rows", std::move(out), {a.id}, [a](Tape& t, NodeId self) {
    const Matrix& y = t.value(self).matrix();
    const Matrix& g = t.upstream(self);
    Matrix dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(a.id, y.cwiseProduct(g - dot.replicate(1, y.cols())));
  });
}

/// Forward value is the row-wise one-hot argmax (ties to the lowest index);
/// the backward pass hands the upstream gradient to the soft input unchanged.
inline Var straight_through(Var soft) {
  const Matrix& p = soft.matrix();
  Matrix out = Matrix::Zero(p.rows(), p.cols());
  for (Index r = 0; r < p.rows(); ++r) out(r, detail::argmax_lowest(p.row(r).data(), p.cols())) = 1.0;
  return soft.tape->record("straight_through", std::move(out), {soft.id}, [soft](Tape& t, NodeId self) {
    t.accumulate(soft.id, t.upstream(self));
  });
}

/// Scales each row to unit Euclidean norm.
inline Var row_normalize(Var a) {
  const Matrix& x = a.matrix();
  Matrix norms = x.rowwise().norm();
  require((norms.array() > 0.0).all(), ErrorKind::numeric, "row_normalize: zero-norm row");
  Matrix out = norms.col(0).cwiseInverse().asDiagonal() * x;
  return a.tape->record("row_normalize", std::move(out), {a.id}, [a, norms](Tape& t, NodeId self) {
    const Matrix& y = t.value(self).matrix();
    const Matrix& g = t.upstream(self);
    Matrix dot = g.cwiseProduct(y).rowwise().sum();
    Matrix gx = g - y.cwiseProduct(dot.replicate(1, y.cols()));
    t.accumulate(a.id, norms.col(0).cwiseInverse().asDiagonal() * gx);
  });
}

inline Var gather_rows(Var a, std::vector<Index> indices) {
  Matrix out(static_cast<Index>(indices.size()), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < a.rows(), ErrorKind::invalid_argument,
            "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.matrix().row(indices[i]);
  }
  return a.tape->record("gather_rows", std::move(out), {a.id},
                        [a, idx = std::move(indices)](Tape& t, NodeId self) {
                          const Matrix& g = t.upstream(self);
                          Matrix ga = Matrix::Zero(a.rows(), a.cols());
                          for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Index>(i));
                          t.accumulate(a.id, ga);
                        });
}

/// Collects the listed (row, col) entries into an n x 1 column.
inline Var pick(Var a, std::vector<std::pair<Index, Index>> entries) {
  Matrix out(static_cast<Index>(entries.size()), 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    require(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(), ErrorKind::invalid_argument,
            "pick: entry out of range");
    out(static_cast<Index>(i), 0) = a.matrix()(r, c);
  }
  return a.tape->record("pick", std::move(out), {a.id},
                        [a, ent = std::move(entries)](Tape& t, NodeId self) {
                          const Matrix& g = t.upstream(self);
                          Matrix ga = Matrix::Zero(a.rows(), a.cols());
                          for (std::size_t i = 0; i < ent.size(); ++i) {
                            ga(ent[i].first, ent[i].second) += g(static_cast<Index>(i), 0);
                          }
                          t.accumulate(a.id, ga);
                        });
}

inline Var slice_rows(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), ErrorKind::shape_mismatch,
          "slice_rows: range exceeds row count");
  Matrix out = a.matrix().middleRows(start, count);
  return a.tape->record("slice_rows", std::move(out), {a.id}, [a, start, count](Tape& t, NodeId self) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleRows(start, count) = t.upstream(self);
    t.accumulate(a.id, ga);
  });
}

inline Var slice_cols(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), ErrorKind::shape_mismatch,
          "slice_cols: range exceeds column count");
  Matrix out = a.matrix().middleCols(start, count);
  return a.tape->record("slice_cols", std::move(out), {a.id}, [a, start, count](Tape& t, NodeId self) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleCols(start, count) = t.upstream(self);
    t.accumulate(a.id, ga);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::invalid_argument, "concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<NodeId> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p);
    require(p.rows() == rows, ErrorKind::shape_mismatch, "concat_cols: row counts differ");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.matrix();
    at += p.cols();
  }
  return parts.front().tape->record("concat_cols", std::move(out), std::move(ids), [parts](Tape& t, NodeId self) {
    const Matrix& g = t.upstream(self);
    Index offset = 0;
    for (const Var& p : parts) {
      t.accumulate(p.id, g.middleCols(offset, p.cols()));
      offset += p.cols();
    }
  });
}

/// Pairwise cosine distance 1 - <a_i, a_j> of rows that are already unit-normalized.
inline Var unit_self_similarity(Var unit_rows) {
  return add_scalar(neg(matmul(unit_rows, transpose(unit_rows))), 1.0);
}

}  // namespace brainloop::ad
