#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "brainloop/autodiff/ops.hpp"
#include "brainloop/ot/gromov.hpp"
#include "brainloop/structure/sampler.hpp"

namespace brainloop::align {

using PairList = std::vector<std::pair<Index, Index>>;

/// L_W = -sum_V log plan_ij - lambda1 * sum_V log softmax_rows(similarity)_ij.
inline ad::Var loss_w(ad::Var plan, ad::Var similarity, const PairList& ground_truth, double lambda1) {
  require(!ground_truth.empty(), ErrorKind::invalid_argument, "loss_w: empty ground truth");
  require(plan.rows() == similarity.rows() && plan.cols() == similarity.cols(), ErrorKind::shape_mismatch,
          "loss_w: plan and similarity shapes differ");
  ad::Var nll = ad::neg(ad::sum(ad::log(ad::pick(plan, ground_truth), ad::kLogFloor)));
  if (lambda1 == 0.0) return nll;
  ad::Var ce = ad::sum(ad::log(ad::pick(ad::softmax_rows(similarity), ground_truth), ad::kLogFloor));
  return ad::sub(nll, ad::mul_scalar(ce, lambda1));
}

inline double loss_w(const Matrix& plan, const Matrix& similarity, const PairList& ground_truth, double lambda1) {
  ad::Tape tape;
  return loss_w(tape.constant(ad::Tensor(plan)), tape.constant(ad::Tensor(similarity)), ground_truth, lambda1)
      .value()
      .item();
}

/// Differentiable pieces of one local structure.
struct StructureTerms {
  ad::Var x_hard;  ///< K1 x N straight-through picks s_i*
  ad::Var y_soft;  ///< K1 x N soft scores z_i on the same candidate indices
  ad::Var cx;
  ad::Var cy;
  int true_count = 0;
  PairList false_set;
};

struct GwLossOptions {
  double lambda2 = 100.0;
  double epsilon = 1.0;
  int outer_iterations = 50;
  int inner_iterations = 100;
  bool unroll = false;
};

/// Cross-entropy part -sum s* log z.
inline ad::Var neighbor_cross_entropy(ad::Var x_hard, ad::Var y_soft) {
  return ad::neg(ad::sum(ad::mul(x_hard, ad::log(y_soft, ad::kLogFloor))));
}

/// (lambda2 / W) * sum over V of L(cx_ik, cy_jl) G_ij G_kl, or nothing when W = 0.
inline std::optional<ad::Var> false_pair_penalty(ad::Var cx, ad::Var cy, int true_count, const PairList& false_set,
                                                 const GwLossOptions& options) {
  if (true_count <= 0 || false_set.empty() || options.lambda2 == 0.0) return std::nullopt;
  ad::Tape& tape = *cx.tape;
  Matrix mask = Matrix::Zero(cx.rows(), cy.rows());
  for (const auto& [i, j] : false_set) mask(i, j) = 1.0;
  ad::Var penalty;
  if (options.unroll) {
    ad::Var plan = ot::entropic_gw_plan_on_tape(cx, cy, options.epsilon, options.outer_iterations,
                                                 options.inner_iterations);
    ad::Var left = ad::mul(plan, tape.constant(ad::Tensor(std::move(mask))));
    penalty = ot::gw_bilinear_on_tape(cx, cy, left, plan);
  } else {
    ot::GwOptions gw;
    gw.epsilon = options.epsilon;
    gw.outer_iterations = options.outer_iterations;
    gw.inner_iterations = options.inner_iterations;
    const Matrix plan = ot::entropic_gw(cx.matrix(), cy.matrix(), gw).plan.plan;
    penalty = ot::gw_bilinear_on_tape(cx, cy, Matrix(plan.cwiseProduct(mask)), plan);
  }
  return ad::mul_scalar(penalty, options.lambda2 / static_cast<double>(true_count));
}

/// L_GW averaged over the structures.
inline ad::Var loss_gw(const std::vector<StructureTerms>& structures, const GwLossOptions& options) {
  require(!structures.empty(), ErrorKind::invalid_argument, "loss_gw: no structures");
  ad::Var total;
  bool first = true;
  for (const auto& s : structures) {
    require(s.x_hard.rows() == s.y_soft.rows() && s.x_hard.cols() == s.y_soft.cols(), ErrorKind::shape_mismatch,
            "loss_gw: hard and soft score shapes differ");
    ad::Var term = neighbor_cross_entropy(s.x_hard, s.y_soft);
    if (auto pen = false_pair_penalty(s.cx, s.cy, s.true_count, s.false_set, options)) term = ad::add(term, *pen);
    total = first ? term : ad::add(total, term);
    first = false;
  }
  return ad::mul_scalar(total, 1.0 / static_cast<double>(structures.size()));
}

}  // namespace brainloop::align
