#pragma once

#include <cmath>

#include "brainloop/autodiff/tensor.hpp"

namespace brainloop::ad {

struct AdamOptions {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Matrix m;
  Matrix v;
  long step_count = 0;
  AdamOptions options;
};

inline AdamState make_adam_state(const Tensor& param, AdamOptions options = {}) {
  return AdamState{Matrix::Zero(param.rows(), param.cols()), Matrix::Zero(param.rows(), param.cols()), 0,
                   options};
}

/// One bias-corrected Adam update applied to `param` in place.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
  require(param.rows() == grad.rows() && param.cols() == grad.cols(), ErrorKind::shape_mismatch,
          "adam_step: gradient shape " + shape_string(grad.rows(), grad.cols()) +
              " differs from parameter " + shape_string(param.rows(), param.cols()));
  require(state.m.rows() == param.rows() && state.m.cols() == param.cols(), ErrorKind::shape_mismatch,
          "adam_step: optimizer state shape differs from parameter");
  const auto& o = state.options;
  const Matrix& g = grad.matrix();
  ++state.step_count;
  state.m = o.beta1 * state.m + (1.0 - o.beta1) * g;
  state.v = o.beta2 * state.v + (1.0 - o.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step_count));
  param.matrix().array() -=
      o.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + o.eps);
}

}  // namespace brainloop::ad
