#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "brainloop/autodiff/ops.hpp"
#include "brainloop/linalg.hpp"

namespace brainloop::ot {

/// Entropic OT problem between discrete measures mu (rows) and nu (columns).
struct TransportProblem {
  Matrix cost;
  Vector mu;
  Vector nu;
  double epsilon = 1.0;
};

/// Scalings of the Gibbs kernel: plan = diag(a) * kernel * diag(b).
struct SinkhornState {
  Vector a;
  Vector b;
  Matrix kernel;
};

struct TransportPlan {
  Matrix plan;
  double value = 0.0;  ///< <plan, cost>
  int iterations_run = 0;
  double marginal_residual = 0.0;
  SinkhornState state;
};

struct SinkhornOptions {
  int iterations = 100;
  /// Stop early once the marginal residual drops below this; 0 runs every iteration.
  double tolerance = 0.0;
};

/// Pairwise 1 - cos(x_i, y_j).
inline Matrix cosine_cost_matrix(const Matrix& xs, const Matrix& ys) {
  require(xs.cols() == ys.cols(), ErrorKind::shape_mismatch,
          "cosine_cost_matrix: feature dimensions " + std::to_string(xs.cols()) + " and " +
              std::to_string(ys.cols()) + " differ");
  Matrix c = (-(unit_rows(xs) * unit_rows(ys).transpose())).array() + 1.0;
  return c.cwiseMax(0.0).cwiseMin(2.0);
}

/// max |row sums - mu| + max |col sums - nu|.
inline double marginal_residual(const Matrix& plan, const Vector& mu, const Vector& nu) {
  const Vector rows = plan.rowwise().sum();
  const Vector cols = plan.colwise().sum().transpose();
  return (rows - mu).cwiseAbs().maxCoeff() + (cols - nu).cwiseAbs().maxCoeff();
}

namespace detail {

inline void check_simplex(const Vector& w, const char* name) {
  require(w.size() > 0, ErrorKind::invalid_argument, std::string(name) + " is empty");
  require((w.array() >= 0.0).all(), ErrorKind::invalid_argument, std::string(name) + " has negative mass");
  require(std::abs(w.sum() - 1.0) < 1e-9, ErrorKind::invalid_argument,
          std::string(name) + " does not sum to 1");
}

inline void check_kernel(const Matrix& k) {
  const double tiny = std::numeric_limits<double>::min();
  const bool rows_ok = (k.rowwise().sum().array() > tiny).all();
  const bool cols_ok = (k.colwise().sum().array() > tiny).all();
  require(rows_ok && cols_ok, ErrorKind::numeric,
          "Gibbs kernel underflow: cost/epsilon too large, increase epsilon");
}

}  // namespace detail

/// Sinkhorn matrix scaling of an arbitrary nonnegative kernel. `b` is used
/// as the warm start and holds the final column scaling on return.
inline TransportPlan scale_kernel(const Matrix& kernel, const Vector& mu, const Vector& nu,
                                  const SinkhornOptions& options, Vector b) {
  require(options.iterations >= 1, ErrorKind::invalid_argument, "sinkhorn needs at least one iteration");
  detail::check_kernel(kernel);
  if (b.size() != kernel.cols()) b = Vector::Ones(kernel.cols());
  Vector a(kernel.rows());
  TransportPlan out;
  for (int it = 0; it < options.iterations; ++it) {
    a = mu.cwiseQuotient(kernel * b);
    b = nu.cwiseQuotient(kernel.transpose() * a);
    require(a.allFinite() && b.allFinite(), ErrorKind::numeric,
            "Sinkhorn scaling overflow: cost/epsilon too large, increase epsilon");
    out.iterations_run = it + 1;
    if (options.tolerance > 0.0) {
      const Vector rows = a.cwiseProduct(kernel * b);
      if ((rows - mu).cwiseAbs().maxCoeff() < options.tolerance) break;
    }
  }
  out.plan = a.asDiagonal() * kernel * b.asDiagonal();
  out.marginal_residual = marginal_residual(out.plan, mu, nu);
  out.state = SinkhornState{std::move(a), std::move(b), kernel};
  return out;
}

inline TransportPlan sinkhorn(const TransportProblem& problem, SinkhornOptions options = {}) {
  require(problem.epsilon > 0.0, ErrorKind::invalid_argument, "sinkhorn: epsilon must be positive");
  require(problem.cost.rows() == problem.mu.size() && problem.cost.cols() == problem.nu.size(),
          ErrorKind::shape_mismatch, "sinkhorn: marginals do not match cost shape");
  require(problem.cost.allFinite(), ErrorKind::numeric, "sinkhorn: non-finite cost");
  detail::check_simplex(problem.mu, "mu");
  detail::check_simplex(problem.nu, "nu");
  const Matrix kernel = (-problem.cost / problem.epsilon).array().exp().matrix();
  TransportPlan out = scale_kernel(kernel, problem.mu, problem.nu, options, Vector::Ones(problem.cost.cols()));
  out.value = out.plan.cwiseProduct(problem.cost).sum();
  return out;
}

/// Sinkhorn unrolled on a gradient tape; the returned plan is differentiable
/// w.r.t. the cost through every iteration.
inline ad::Var sinkhorn_on_tape(ad::Var cost, const Vector& mu, const Vector& nu, double epsilon, int iterations) {
  require(epsilon > 0.0 && iterations >= 1, ErrorKind::invalid_argument,
          "sinkhorn_on_tape: epsilon must be positive and iterations >= 1");
  require(cost.rows() == mu.size() && cost.cols() == nu.size(), ErrorKind::shape_mismatch,
          "sinkhorn_on_tape: marginals do not match cost shape");
  detail::check_simplex(mu, "mu");
  detail::check_simplex(nu, "nu");
  ad::Tape& tape = *cost.tape;
  ad::Var kernel = ad::exp(ad::mul_scalar(cost, -1.0 / epsilon));
  detail::check_kernel(kernel.matrix());
  ad::Var kernel_t = ad::transpose(kernel);
  ad::Var mu_v = tape.constant(ad::Tensor(ad::Matrix(mu)));
  ad::Var nu_v = tape.constant(ad::Tensor(ad::Matrix(nu)));
  ad::Var b = tape.constant(ad::Tensor(ad::Matrix::Ones(cost.cols(), 1)));
  ad::Var a = b;
  for (int it = 0; it < iterations; ++it) {
    a = ad::div(mu_v, ad::matmul(kernel, b));
    b = ad::div(nu_v, ad::matmul(kernel_t, a));
  }
  return ad::scale_cols(ad::scale_rows(kernel, a), b);
}

}  // namespace brainloop::ot
