#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "brainloop/autodiff/ops.hpp"
#include "brainloop/linalg.hpp"
#include "brainloop/ot/sinkhorn.hpp"

namespace brainloop::ot {

/// Pairwise cosine-distance matrix of the rows: zero diagonal, symmetric.
inline Matrix self_similarity(const Matrix& points) {
  require(points.rows() >= 2, ErrorKind::invalid_argument, "self_similarity needs at least 2 rows");
  const Matrix u = unit_rows(points);
  Matrix c = (-(u * u.transpose())).array() + 1.0;
  c = c.cwiseMax(0.0).cwiseMin(2.0);
  c = 0.5 * (c + c.transpose()).eval();
  c.diagonal().setZero();
  return c;
}

/// Linearised GW cost for the squared loss L(a, b) = (a - b)^2 / 2:
/// tens_ij = sum_kl L(cx_ik, cy_jl) * plan_kl.
inline Matrix gw_tensor_product(const Matrix& cx, const Matrix& cy, const Matrix& plan) {
  const Vector p = plan.rowwise().sum();
  const Vector q = plan.colwise().sum().transpose();
  const Vector row_term = 0.5 * cx.cwiseProduct(cx) * p;
  const Vector col_term = 0.5 * cy.cwiseProduct(cy) * q;
  Matrix t = -(cx * plan * cy.transpose());
  t.colwise() += row_term;
  t.rowwise() += col_term.transpose();
  return t;
}

/// sum_ijkl L(cx_ik, cy_jl) * left_ij * right_kl.
inline double gw_bilinear(const Matrix& cx, const Matrix& cy, const Matrix& left, const Matrix& right) {
  return left.cwiseProduct(gw_tensor_product(cx, cy, right)).sum();
}

/// GW discrepancy of a fixed coupling.
inline double gw_objective(const Matrix& cx, const Matrix& cy, const Matrix& plan) {
  return gw_bilinear(cx, cy, plan, plan);
}

struct GwOptions {
  double epsilon = 1.0;
  int outer_iterations = 50;
  double tolerance = 1e-7;  ///< Frobenius change of the coupling between outer steps
  int inner_iterations = 1000;
  double inner_tolerance = 1e-12;
};

struct GwResult {
  double distance = 0.0;  ///< raw discrepancy, no square root
  TransportPlan plan;
  int outer_iterations_run = 0;
};

/// Entropic GW by projected mirror descent: each outer step linearises the
/// objective at the current coupling and takes a KL-proximal step, solved by
/// Sinkhorn on the kernel plan .* exp(-tens / epsilon).
inline GwResult entropic_gw(const Matrix& cx, const Matrix& cy, const Vector& p, const Vector& q,
                            const GwOptions& options = {}, const std::optional<Matrix>& init = std::nullopt) {
  require(cx.rows() == cx.cols() && cy.rows() == cy.cols(), ErrorKind::shape_mismatch,
          "entropic_gw: structure matrices must be square");
  require(cx.rows() == p.size() && cy.rows() == q.size(), ErrorKind::shape_mismatch,
          "entropic_gw: marginal lengths do not match structure sizes");
  require(options.epsilon > 0.0 && options.outer_iterations >= 1, ErrorKind::invalid_argument,
          "entropic_gw: epsilon must be positive and outer_iterations >= 1");
  detail::check_simplex(p, "p");
  detail::check_simplex(q, "q");

  Matrix plan = p * q.transpose();
  if (init) {
    require(init->rows() == p.size() && init->cols() == q.size(), ErrorKind::shape_mismatch,
            "entropic_gw: initial coupling has wrong shape");
    plan = *init;
  }
  const SinkhornOptions inner{options.inner_iterations, options.inner_tolerance};
  GwResult out;
  Vector b = Vector::Ones(q.size());
  for (int it = 0; it < options.outer_iterations; ++it) {
    Matrix tens = gw_tensor_product(cx, cy, plan);
    tens.array() -= tens.minCoeff();
    const Matrix kernel = plan.cwiseProduct((-tens / options.epsilon).array().exp().matrix());
    TransportPlan next = scale_kernel(kernel, p, q, inner, b);
    b = next.state.b;
    const double change = (next.plan - plan).norm();
    plan = next.plan;
    out.plan = std::move(next);
    out.outer_iterations_run = it + 1;
    if (change < options.tolerance) break;
  }
  out.distance = gw_objective(cx, cy, plan);
  out.plan.value = out.distance;
  return out;
}

inline GwResult entropic_gw(const Matrix& cx, const Matrix& cy, const GwOptions& options = {}) {
  return entropic_gw(cx, cy, uniform_weights(cx.rows()), uniform_weights(cy.rows()), options);
}

/// sum_ijkl L(cx_ik, cy_jl) * left_ij * right_kl recorded on the tape. Every
/// argument may carry gradients.
inline ad::Var gw_bilinear_on_tape(ad::Var cx, ad::Var cy, ad::Var left, ad::Var right) {
  ad::Var right_rows = ad::row_sums(right);
  ad::Var right_cols = ad::col_sums(right);
  ad::Var sq_x = ad::sum(ad::mul(ad::row_sums(left), ad::matmul(ad::mul(cx, cx), right_rows)));
  ad::Var sq_y = ad::sum(ad::mul(ad::col_sums(left), ad::matmul(ad::mul(cy, cy), right_cols)));
  ad::Var cross = ad::sum(ad::mul(left, ad::matmul(ad::matmul(cx, right), ad::transpose(cy))));
  return ad::sub(ad::mul_scalar(ad::add(sq_x, sq_y), 0.5), cross);
}

/// Same with both couplings held constant; gradients reach cx and cy only.
inline ad::Var gw_bilinear_on_tape(ad::Var cx, ad::Var cy, const Matrix& left, const Matrix& right) {
  ad::Tape& tape = *cx.tape;
  return gw_bilinear_on_tape(cx, cy, tape.constant(ad::Tensor(left)), tape.constant(ad::Tensor(right)));
}

/// The mirror-descent coupling with every outer step and inner Sinkhorn
/// iteration unrolled on the tape. Fixed iteration counts.
inline ad::Var entropic_gw_plan_on_tape(ad::Var cx, ad::Var cy, double epsilon, int outer_iterations,
                                        int inner_iterations) {
  require(epsilon > 0.0 && outer_iterations >= 1 && inner_iterations >= 1, ErrorKind::invalid_argument,
          "entropic_gw_on_tape: epsilon must be positive and iteration counts >= 1");
  ad::Tape& tape = *cx.tape;
  const Index n = cx.rows();
  const Index m = cy.rows();
  const Vector p = uniform_weights(n);
  const Vector q = uniform_weights(m);
  ad::Var mu = tape.constant(ad::Tensor(ad::Matrix(p)));
  ad::Var nu = tape.constant(ad::Tensor(ad::Matrix(q)));
  ad::Var plan = tape.constant(ad::Tensor(Matrix(p * q.transpose())));
  ad::Var cy_t = ad::transpose(cy);
  for (int it = 0; it < outer_iterations; ++it) {
    // Separable terms of the linearised cost are absorbed by the scalings.
    ad::Var tens = ad::neg(ad::matmul(ad::matmul(cx, plan), cy_t));
    ad::Var shifted = ad::add_scalar(tens, -tens.matrix().minCoeff());
    ad::Var kernel = ad::mul(plan, ad::exp(ad::mul_scalar(shifted, -1.0 / epsilon)));
    ad::Var kernel_t = ad::transpose(kernel);
    ad::Var b = tape.constant(ad::Tensor(ad::Matrix::Ones(m, 1)));
    ad::Var a = b;
    for (int k = 0; k < inner_iterations; ++k) {
      a = ad::div(mu, ad::matmul(kernel, b));
      b = ad::div(nu, ad::matmul(kernel_t, a));
    }
    plan = ad::scale_cols(ad::scale_rows(kernel, a), b);
  }
  return plan;
}

/// GW objective at the unrolled coupling, differentiated through the coupling too.
inline ad::Var entropic_gw_on_tape(ad::Var cx, ad::Var cy, double epsilon, int outer_iterations,
                                   int inner_iterations) {
  ad::Var plan = entropic_gw_plan_on_tape(cx, cy, epsilon, outer_iterations, inner_iterations);
  return gw_bilinear_on_tape(cx, cy, plan, plan);
}

}  // namespace brainloop::ot
