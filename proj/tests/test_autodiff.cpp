#include <gtest/gtest.h>

#include "brainloop/autodiff/adam.hpp"
#include "brainloop/autodiff/ops.hpp"
#include "support/grad_cases.hpp"

using namespace brainloop;
using brainloop::testing::check_gradient;

namespace {

struct CaseParam {
  std::size_t index;
  std::string name;
};

std::vector<CaseParam> all_cases() {
  std::vector<CaseParam> out;
  const auto cases = brainloop::testing::gradient_cases();
  for (std::size_t i = 0; i < cases.size(); ++i) out.push_back({i, cases[i].name});
  return out;
}

class GradientSuite : public ::testing::TestWithParam<CaseParam> {};

TEST_P(GradientSuite, MatchesCentralDifferencesOnTenInstances) {
  const auto c = brainloop::testing::gradient_cases()[GetParam().index];
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = c.make(seed);
    const auto r = check_gradient(inst.analytic, inst.numeric, inst.inputs);
    EXPECT_LT(r.rel_error, 1e-4) << c.name << " seed " << seed << " |analytic| " << r.analytic_norm
                                 << " |numeric| " << r.numeric_norm;
    EXPECT_GT(r.analytic_norm, 0.0) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Ops, GradientSuite, ::testing::ValuesIn(all_cases()),
                         [](const ::testing::TestParamInfo<CaseParam>& info) { return info.param.name; });

TEST(Tape, MatmulValueAndGradientByHand) {
  ad::Tape t;
  ad::Var a = t.leaf(ad::Tensor{{1, 2}, {3, 4}});
  ad::Var b = t.leaf(ad::Tensor{{5}, {6}});
  ad::Var y = ad::sum(ad::matmul(a, b));
  EXPECT_DOUBLE_EQ(y.value().item(), 17.0 + 39.0);
  t.backward(y);
  // d/dA sum(A b) = 1 b^T, d/db = A^T 1
  EXPECT_DOUBLE_EQ(t.grad(a)(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(t.grad(a)(1, 1), 6.0);
  EXPECT_DOUBLE_EQ(t.grad(b)(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(t.grad(b)(1, 0), 6.0);
}

TEST(Tape, GradientAccumulatesOverReuse) {
  ad::Tape t;
  ad::Var x = t.leaf(ad::Tensor::scalar(3.0));
  ad::Var y = ad::mul(x, x);
  t.backward(ad::add(y, x));
  EXPECT_DOUBLE_EQ(t.grad(x).item(), 7.0);
}

TEST(Tape, ConstantsGetNoGradient) {
  ad::Tape t;
  ad::Var c = t.constant(ad::Tensor::scalar(2.0));
  ad::Var x = t.leaf(ad::Tensor::scalar(1.0));
  t.backward(ad::mul(c, x));
  EXPECT_FALSE(t.has_grad(c));
  EXPECT_DOUBLE_EQ(t.grad(x).item(), 2.0);
}

TEST(Tape, BackwardRejectsNonScalar) {
  ad::Tape t;
  ad::Var x = t.leaf(ad::Tensor(2, 2));
  try {
    t.backward(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
  }
}

TEST(Tape, NonFiniteValuesAreRejected) {
  ad::Tape t;
  ad::Var x = t.leaf(ad::Tensor::scalar(1000.0));
  EXPECT_THROW(ad::exp(x), Error);
  ad::Var z = t.leaf(ad::Tensor::scalar(0.0));
  EXPECT_THROW(ad::log(z), Error);
  EXPECT_NO_THROW(ad::log(z, ad::kLogFloor));
}

TEST(Tape, ShapeMismatchIsReported) {
  ad::Tape t;
  ad::Var a = t.leaf(ad::Tensor(2, 3));
  ad::Var b = t.leaf(ad::Tensor(2, 2));
  try {
    ad::add(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
  }
  EXPECT_THROW(ad::matmul(a, a), Error);
}

TEST(StraightThrough, ForwardIsOneHotAndBackwardIsIdentity) {
  ad::Tape t;
  ad::Var s = t.leaf(ad::Tensor{{0.2, 0.5, 0.3}, {0.4, 0.4, 0.2}});
  ad::Var h = ad::straight_through(s);
  EXPECT_DOUBLE_EQ(h.matrix()(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(h.matrix().row(0).sum(), 1.0);
  // tie between columns 0 and 1 goes to the lowest index
  EXPECT_DOUBLE_EQ(h.matrix()(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(h.matrix()(1, 1), 0.0);
  ad::Var w = t.constant(ad::Tensor{{1, 2, 3}, {4, 5, 6}});
  t.backward(ad::sum(ad::mul(h, w)));
  EXPECT_TRUE(t.grad(s).matrix().isApprox(w.matrix()));
}

TEST(MaskedSoftmax, MaskedEntriesAreZeroAndRowsSumToOne) {
  ad::Tape t;
  ad::BoolMatrix mask(1, 4);
  mask << true, false, true, false;
  ad::Var p = ad::masked_softmax_rows(t.leaf(ad::Tensor{{0.0, 5.0, std::log(3.0), 9.0}}), mask);
  EXPECT_DOUBLE_EQ(p.matrix()(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(p.matrix()(0, 3), 0.0);
  EXPECT_NEAR(p.matrix()(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(p.matrix()(0, 2), 0.75, 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ad::Tensor p{{1.0, -2.0}};
  ad::Tensor g{{0.3, -5.0}};
  auto state = ad::make_adam_state(p, ad::AdamOptions{0.1, 0.9, 0.999, 0.0});
  ad::adam_step(p, g, state);
  EXPECT_NEAR(p(0, 0), 0.9, 1e-12);
  EXPECT_NEAR(p(0, 1), -1.9, 1e-12);
  EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, SecondStepMatchesHandComputation) {
  ad::Tensor p{{0.0}};
  auto state = ad::make_adam_state(p, ad::AdamOptions{0.01, 0.9, 0.999, 1e-8});
  ad::adam_step(p, ad::Tensor{{1.0}}, state);
  ad::adam_step(p, ad::Tensor{{3.0}}, state);
  const double m = 0.9 * 0.1 + 0.1 * 3.0;
  const double v = 0.999 * 0.001 + 0.001 * 9.0;
  const double step2 = 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p(0, 0), -0.01 / (1.0 + 1e-8) - step2, 1e-12);
}

}  // namespace
