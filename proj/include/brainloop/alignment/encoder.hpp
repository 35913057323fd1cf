#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "brainloop/alignment/config.hpp"
#include "brainloop/autodiff/ops.hpp"
#include "brainloop/linalg.hpp"
#include "brainloop/random.hpp"

namespace brainloop::align {

/// ReLU MLP; weights are (fan_in x fan_out) so a batch multiplies on the left.
struct Mlp {
  std::vector<ad::Tensor> weights;
  std::vector<ad::Tensor> biases;

  [[nodiscard]] Index input_dim() const { return weights.front().rows(); }
  [[nodiscard]] Index output_dim() const { return weights.back().cols(); }
};

struct MlpVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

namespace detail {

inline Matrix uniform_fill(Rng& rng, Index rows, Index cols, double bound) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

}  // namespace detail

/// Builds the encoder for `input_dim` features.
///
/// Identity init: the first layer holds [I, -I] so that ReLU keeps x as
/// relu(x) - relu(-x), later hidden layers pass those 2*input_dim units through,
/// and the output layer recombines them, so the initial map is the (truncated
/// or zero-padded) identity plus small random terms from the remaining units.
/// A single linear layer is initialised to the exact identity.
inline Mlp make_mlp(Index input_dim, const EncoderSpec& spec, Rng& rng) {
  require(input_dim >= 1, ErrorKind::invalid_argument, "encoder input_dim must be positive");
  std::vector<Index> sizes{input_dim};
  for (int h : spec.hidden) {
    require(h >= 1, ErrorKind::config, "encoder hidden sizes must be positive");
    sizes.push_back(h);
  }
  sizes.push_back(spec.output_dim);
  const bool identity = spec.init == EncoderInit::identity;
  if (identity) {
    for (std::size_t l = 1; l + 1 < sizes.size(); ++l) {
      require(sizes[l] >= 2 * input_dim, ErrorKind::config,
              "identity init needs hidden sizes >= 2 * input_dim (" + std::to_string(2 * input_dim) + ")");
    }
  }
  Mlp mlp;
  const std::size_t layers = sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const Index fan_in = sizes[l];
    const Index fan_out = sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w;
    Matrix b;
    if (!identity) {
      w = detail::uniform_fill(rng, fan_in, fan_out, bound);
      b = detail::uniform_fill(rng, 1, fan_out, bound);
    } else if (layers == 1) {
      w = Matrix::Zero(fan_in, fan_out);
      b = Matrix::Zero(1, fan_out);
      for (Index i = 0; i < std::min(fan_in, fan_out); ++i) w(i, i) = 1.0;
    } else {
      w = detail::uniform_fill(rng, fan_in, fan_out, spec.init_scale * bound);
      b = Matrix::Zero(1, fan_out);
      const Index d = input_dim;
      if (l == 0) {
        w.leftCols(2 * d).setZero();
        for (Index i = 0; i < d; ++i) {
          w(i, i) = 1.0;
          w(i, d + i) = -1.0;
        }
      } else if (l + 1 < layers) {
        w.topRows(2 * d).setZero();
        w.leftCols(2 * d).setZero();
        for (Index i = 0; i < 2 * d; ++i) w(i, i) = 1.0;
      } else {
        w.topRows(2 * d).setZero();
        for (Index i = 0; i < std::min(d, fan_out); ++i) {
          w(i, i) = 1.0;
          w(d + i, i) = -1.0;
        }
      }
    }
    mlp.weights.emplace_back(std::move(w));
    mlp.biases.emplace_back(std::move(b));
  }
  return mlp;
}

inline MlpVars bind(ad::Tape& tape, const Mlp& mlp) {
  MlpVars vars;
  for (const auto& w : mlp.weights) vars.weights.push_back(tape.leaf(w));
  for (const auto& b : mlp.biases) vars.biases.push_back(tape.leaf(b));
  return vars;
}

/// Encoded rows, unit-normalized after the final layer.
inline ad::Var encode(const MlpVars& vars, ad::Var batch) {
  require(!vars.weights.empty(), ErrorKind::invalid_argument, "encode: empty encoder");
  require(batch.cols() == vars.weights.front().rows(), ErrorKind::shape_mismatch,
          "encode: input has " + std::to_string(batch.cols()) + " features, encoder expects " +
              std::to_string(vars.weights.front().rows()));
  ad::Var h = batch;
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    h = ad::add_row_vector(ad::matmul(h, vars.weights[l]), vars.biases[l]);
    if (l + 1 < vars.weights.size()) h = ad::relu(h);
  }
  return ad::row_normalize(h);
}

/// Forward pass without a tape.
inline Matrix encode(const Mlp& mlp, const Matrix& batch) {
  require(batch.cols() == mlp.input_dim(), ErrorKind::shape_mismatch,
          "encode: input has " + std::to_string(batch.cols()) + " features, encoder expects " +
              std::to_string(mlp.input_dim()));
  Matrix h = batch;
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    Matrix next = h * mlp.weights[l].matrix();
    next.rowwise() += mlp.biases[l].matrix().row(0);
    if (l + 1 < mlp.weights.size()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  return unit_rows(h);
}

}  // namespace brainloop::align
