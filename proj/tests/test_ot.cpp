#include <gtest/gtest.h>

#include <Eigen/QR>

#include "brainloop/ot/gromov.hpp"
#include "brainloop/ot/sinkhorn.hpp"
#include "brainloop/random.hpp"
#include "support/oracles.hpp"

using namespace brainloop;

namespace {

Vector random_simplex(Rng& rng, Index n) {
  Vector w(n);
  for (Index i = 0; i < n; ++i) w(i) = rng.uniform(0.2, 1.0);
  return w / w.sum();
}

Matrix random_cost(Rng& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

Matrix random_rotation(Rng& rng, Index d) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(rng.normal_matrix(d, d)));
  return Matrix(qr.householderQ());
}

TEST(Sinkhorn, MarginalsWithinOneMillionthOnTwentyProblems) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const Index n = 2 + rng.index(63);
    const Index m = 2 + rng.index(63);
    const ot::TransportProblem p{random_cost(rng, n, m), random_simplex(rng, n), random_simplex(rng, m), 1.0};
    const auto plan = ot::sinkhorn(p, ot::SinkhornOptions{100, 0.0});
    EXPECT_LT(plan.marginal_residual, 1e-6) << "seed " << s << " " << n << "x" << m;
    EXPECT_EQ(plan.iterations_run, 100);
    EXPECT_NEAR(plan.value, plan.plan.cwiseProduct(p.cost).sum(), 1e-14);
    EXPECT_TRUE((plan.plan.array() >= 0.0).all());
  }
}

TEST(Sinkhorn, MatchesBruteForceEmdOnFiveByFive) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(1000 + s);
    const Matrix cost = random_cost(rng, 5, 5);
    const auto plan = ot::sinkhorn({cost, uniform_weights(5), uniform_weights(5), 0.02}, ot::SinkhornOptions{1000, 0.0});
    const double emd = brainloop::testing::brute_force_emd(cost);
    EXPECT_GE(plan.value, emd - 1e-9);
    EXPECT_LE(plan.value, 1.05 * emd) << "seed " << s;
  }
}

TEST(Sinkhorn, ConstantCostGivesProductCoupling) {
  Rng rng(3);
  const Vector mu = random_simplex(rng, 4);
  const Vector nu = random_simplex(rng, 6);
  const auto plan = ot::sinkhorn({Matrix::Constant(4, 6, 0.7), mu, nu, 0.3});
  EXPECT_LT((plan.plan - mu * nu.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sinkhorn, PlanHasScalingForm) {
  Rng rng(5);
  const Matrix cost = random_cost(rng, 4, 3);
  const auto plan = ot::sinkhorn({cost, uniform_weights(4), uniform_weights(3), 0.5});
  const Matrix k = (-cost / 0.5).array().exp().matrix();
  const Matrix rebuilt = plan.state.a.asDiagonal() * k * plan.state.b.asDiagonal();
  EXPECT_LT((rebuilt - plan.plan).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sinkhorn, KernelUnderflowIsAnError) {
  const Matrix cost = Matrix::Constant(3, 3, 1e4);
  try {
    ot::sinkhorn({cost, uniform_weights(3), uniform_weights(3), 1e-2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("epsilon"), std::string::npos);
  }
}

TEST(Sinkhorn, RejectsBadInputs) {
  const Matrix cost = Matrix::Zero(2, 2);
  Vector bad(2);
  bad << 0.7, 0.7;
  EXPECT_THROW(ot::sinkhorn({cost, bad, uniform_weights(2), 1.0}), Error);
  EXPECT_THROW(ot::sinkhorn({cost, uniform_weights(3), uniform_weights(2), 1.0}), Error);
  EXPECT_THROW(ot::sinkhorn({cost, uniform_weights(2), uniform_weights(2), 0.0}), Error);
  Matrix nan_cost = cost;
  nan_cost(0, 0) = std::nan("");
  EXPECT_THROW(ot::sinkhorn({nan_cost, uniform_weights(2), uniform_weights(2), 1.0}), Error);
}

TEST(Sinkhorn, TapeVersionMatchesPlainSolver) {
  Rng rng(9);
  const Matrix cost = random_cost(rng, 5, 4);
  const auto plain = ot::sinkhorn({cost, uniform_weights(5), uniform_weights(4), 0.4}, ot::SinkhornOptions{10, 0.0});
  ad::Tape t;
  ad::Var plan = ot::sinkhorn_on_tape(t.leaf(ad::Tensor(cost)), uniform_weights(5), uniform_weights(4), 0.4, 10);
  EXPECT_LT((plan.matrix() - plain.plan).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sinkhorn, CosineCostRange) {
  Rng rng(2);
  const Matrix x = rng.normal_matrix(6, 3);
  const Matrix c = ot::cosine_cost_matrix(x, -x);
  EXPECT_TRUE((c.array() >= 0.0).all() && (c.array() <= 2.0).all());
  for (Index i = 0; i < 6; ++i) EXPECT_NEAR(c(i, i), 2.0, 1e-12);
  EXPECT_THROW(ot::cosine_cost_matrix(x, rng.normal_matrix(2, 4)), Error);
}

ot::GwOptions gw_options() {
  ot::GwOptions o;
  o.epsilon = 0.01;
  o.outer_iterations = 50;
  return o;
}

TEST(GromovWasserstein, SelfDistanceIsZero) {
  for (Index n : {3, 5, 10, 20, 35, 50}) {
    Rng rng(static_cast<std::uint64_t>(n));
    const Matrix c = ot::self_similarity(rng.normal_matrix(n, 6));
    const auto r = ot::entropic_gw(c, c, gw_options());
    EXPECT_LT(r.distance, 1e-3) << "n=" << n;
    EXPECT_GE(r.distance, 0.0);
  }
}

// With two points the swap symmetry makes the product coupling a fixed point
// of mirror descent, so only a diagonal start finds the zero.
TEST(GromovWasserstein, TwoPointProductStartIsStationary) {
  const Matrix c = ot::self_similarity(Matrix{{1.0, 0.0}, {0.0, 1.0}});
  const auto r = ot::entropic_gw(c, c, gw_options());
  EXPECT_LT((r.plan.plan - Matrix::Constant(2, 2, 0.25)).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix diag{{0.45, 0.05}, {0.05, 0.45}};
  EXPECT_LT(ot::entropic_gw(c, c, uniform_weights(2), uniform_weights(2), gw_options(), diag).distance, 1e-3);
}

TEST(GromovWasserstein, InvariantToRotationOfOneCloud) {
  for (Index n : {4, 12, 25, 50}) {
    Rng rng(100 + static_cast<std::uint64_t>(n));
    const Matrix x = rng.normal_matrix(n, 5);
    const Matrix cx = ot::self_similarity(x);
    const Matrix cr = ot::self_similarity(x * random_rotation(rng, 5));
    EXPECT_LT(ot::entropic_gw(cx, cr, gw_options()).distance, 1e-3) << "n=" << n;
  }
}

TEST(GromovWasserstein, InvariantToRelabelling) {
  Rng rng(4);
  const Index n = 15;
  const Matrix x = rng.normal_matrix(n, 4);
  const auto perm = rng.permutation(n);
  Matrix shuffled(n, 4);
  for (Index i = 0; i < n; ++i) shuffled.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  EXPECT_LT(ot::entropic_gw(ot::self_similarity(x), ot::self_similarity(shuffled), gw_options()).distance, 1e-3);
}

TEST(GromovWasserstein, WithinTenPercentOfPermutationBruteForceOnThreeByThree) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    Rng rng(s);
    const Matrix cx = ot::self_similarity(rng.normal_matrix(3, 3));
    const Matrix cy = ot::self_similarity(rng.normal_matrix(3, 3));
    const double bf = brainloop::testing::brute_force_gw(cx, cy);
    const double gw = ot::entropic_gw(cx, cy, gw_options()).distance;
    EXPECT_LE(std::abs(gw - bf), 0.1 * bf) << "seed " << s << " gw " << gw << " brute " << bf;
  }
}

TEST(GromovWasserstein, ObjectiveMatchesQuadrupleSum) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(s);
    const Matrix cx = ot::self_similarity(rng.normal_matrix(4, 3));
    const Matrix cy = ot::self_similarity(rng.normal_matrix(5, 3));
    Matrix plan = random_cost(rng, 4, 5);
    plan /= plan.sum();
    EXPECT_NEAR(ot::gw_objective(cx, cy, plan), brainloop::testing::gw_quadruple_sum(cx, cy, plan), 1e-13);
  }
}

TEST(GromovWasserstein, CouplingKeepsMarginals) {
  Rng rng(8);
  const Matrix cx = ot::self_similarity(rng.normal_matrix(7, 3));
  const Matrix cy = ot::self_similarity(rng.normal_matrix(9, 3));
  const auto r = ot::entropic_gw(cx, cy, gw_options());
  EXPECT_LT(ot::marginal_residual(r.plan.plan, uniform_weights(7), uniform_weights(9)), 1e-9);
  EXPECT_DOUBLE_EQ(r.distance, ot::gw_objective(cx, cy, r.plan.plan));
}

TEST(GromovWasserstein, TapeObjectiveMatchesPlainObjective) {
  Rng rng(12);
  const Matrix cx = ot::self_similarity(rng.normal_matrix(5, 3));
  const Matrix cy = ot::self_similarity(rng.normal_matrix(4, 3));
  Matrix plan = random_cost(rng, 5, 4);
  plan /= plan.sum();
  ad::Tape t;
  const double v =
      ot::gw_bilinear_on_tape(t.constant(ad::Tensor(cx)), t.constant(ad::Tensor(cy)), plan, plan).value().item();
  EXPECT_NEAR(v, ot::gw_objective(cx, cy, plan), 1e-13);
}

TEST(GromovWasserstein, SelfSimilarityIsSymmetricWithZeroDiagonal) {
  Rng rng(1);
  const Matrix c = ot::self_similarity(rng.normal_matrix(6, 4));
  EXPECT_TRUE(c.isApprox(c.transpose()));
  EXPECT_DOUBLE_EQ(c.diagonal().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(ot::self_similarity(Matrix::Ones(1, 3)), Error);
  EXPECT_THROW(ot::entropic_gw(Matrix::Zero(2, 3), Matrix::Zero(2, 2)), Error);
}

TEST(Examples, CosineCostOfIdenticalOrthogonalAndAntipodalVectors) {
  const Matrix x{{1, 0}};
  const Matrix y{{1, 0}, {0, 1}, {-1, 0}};
  const Matrix c = ot::cosine_cost_matrix(x, y);
  EXPECT_NEAR(c(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(c(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(c(0, 2), 2.0, 1e-15);
}

TEST(Examples, SinkhornZeroCostAndDiagonalOptimum) {
  const auto flat = ot::sinkhorn({Matrix::Zero(2, 2), uniform_weights(2), uniform_weights(2), 1.0});
  EXPECT_LT((flat.plan - Matrix::Constant(2, 2, 0.25)).cwiseAbs().maxCoeff(), 1e-15);
  const auto diag = ot::sinkhorn({Matrix{{0, 1}, {1, 0}}, uniform_weights(2), uniform_weights(2), 0.01});
  EXPECT_LT((diag.plan - Matrix{{0.5, 0}, {0, 0.5}}).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Examples, SinkhornWithinFivePercentOfFourByFourEmd) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(2000 + s);
    const Matrix cost = random_cost(rng, 4, 4);
    const auto plan = ot::sinkhorn({cost, uniform_weights(4), uniform_weights(4), 0.02}, ot::SinkhornOptions{1000, 0.0});
    EXPECT_LE(std::abs(plan.value - brainloop::testing::brute_force_emd(cost)),
              0.05 * brainloop::testing::brute_force_emd(cost))
        << "seed " << s;
  }
}

TEST(Examples, SelfSimilarityOfDuplicatedAndOrthogonalRows) {
  EXPECT_LT(ot::self_similarity(Matrix{{0.3, 0.4}, {0.3, 0.4}, {0.3, 0.4}}).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_TRUE(ot::self_similarity(Matrix{{2, 0}, {0, 5}}).isApprox(Matrix{{0, 1}, {1, 0}}));
}

}  // namespace
