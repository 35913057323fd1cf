#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "brainloop/structure/sampler.hpp"

using namespace brainloop;
using namespace brainloop::structure;

namespace {

Vector softmax(const Vector& v) {
  const Vector e = (v.array() - v.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Matrix random_points(std::uint64_t seed, Index n, Index d) {
  Rng rng(seed);
  return rng.normal_matrix(n, d);
}

TEST(Gumbel, ArgmaxFrequenciesMatchSoftmaxOverHundredThousandDraws) {
  const Matrix pts = random_points(7, 6, 3);
  const Index anchor = 2;
  const Vector logits = anchor_logits(unit_rows(pts), anchor);
  Vector others(5);
  for (Index j = 0, c = 0; j < 6; ++j) {
    if (j != anchor) others(c++) = logits(j);
  }
  const Vector p = softmax(others);
  Vector freq = Vector::Zero(5);
  const int draws = 100000;
  for (int s = 0; s < draws; ++s) {
    const auto sc = gumbel_scores(anchor, pts, static_cast<std::uint64_t>(s));
    Index k = 0;
    sc.hard.maxCoeff(&k);
    freq(k) += 1.0;
  }
  freq /= draws;
  for (Index k = 0; k < 5; ++k) EXPECT_NEAR(freq(k), p(k), 0.01) << "class " << k;
}

TEST(Gumbel, StreamIsDeterministicPerSeed) {
  GumbelStream a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const double x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_TRUE(std::isfinite(x));
  }
  EXPECT_NE(GumbelStream(42).next(), c.next());
}

TEST(Gumbel, ScoresExcludeAnchorAndHardIsArgmaxOfSoft) {
  const Matrix pts = random_points(3, 8, 4);
  const auto sc = gumbel_scores(5, pts, 11);
  ASSERT_EQ(sc.candidates.size(), 7u);
  EXPECT_EQ(std::count(sc.candidates.begin(), sc.candidates.end(), Index{5}), 0);
  EXPECT_TRUE(std::is_sorted(sc.candidates.begin(), sc.candidates.end()));
  EXPECT_NEAR(sc.soft.sum(), 1.0, 1e-12);
  Index best = 0;
  sc.soft.maxCoeff(&best);
  EXPECT_DOUBLE_EQ(sc.hard(best), 1.0);
  EXPECT_DOUBLE_EQ(sc.hard.sum(), 1.0);
  EXPECT_EQ(sc.gumbel_seed, mix_seed(11, 5));
}

TEST(Gumbel, StraightThroughTiesGoToLowestIndex) {
  Vector v(4);
  v << 0.1, 0.4, 0.4, 0.1;
  const Vector h = structure::straight_through(v);
  EXPECT_DOUBLE_EQ(h(1), 1.0);
  EXPECT_DOUBLE_EQ(h.sum(), 1.0);
}

TEST(Sampler, WithoutNoiseDrawsAreBruteForceTopK) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix u = unit_rows(random_points(s, 12, 5));
    const Index anchor = static_cast<Index>(s % 12);
    const Vector logits = anchor_logits(u, anchor);
    const int k = 1 + static_cast<int>(s % 6);
    const auto d = draw_without_replacement(logits.data(), 12, anchor, k, 0, false);
    std::vector<Index> order;
    for (Index j = 0; j < 12; ++j) {
      if (j != anchor) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return logits(a) > logits(b); });
    order.resize(static_cast<std::size_t>(k));
    EXPECT_EQ(d.picks, order) << "seed " << s;
  }
}

TEST(Sampler, SecondDrawFollowsSamplingWithoutReplacement) {
  Vector logits(5);
  logits << 0.3, -0.2, 0.8, 0.1, 0.0;
  const Index anchor = 4;
  Vector others = logits.head(4);
  const Vector p = softmax(others);
  std::map<std::pair<Index, Index>, double> freq;
  const int draws = 100000;
  for (int s = 0; s < draws; ++s) {
    const auto d = draw_without_replacement(logits.data(), 5, anchor, 2, static_cast<std::uint64_t>(s) * 7919, true);
    freq[{d.picks[0], d.picks[1]}] += 1.0 / draws;
  }
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) {
      if (i == j) continue;
      const double expected = p(i) * p(j) / (1.0 - p(i));
      EXPECT_NEAR(freq[std::make_pair(i, j)], expected, 0.01) << i << "," << j;
    }
  }
}

TEST(Sampler, PicksAreDistinctAndNeverTheAnchor) {
  const Matrix u = unit_rows(random_points(9, 30, 6));
  for (Index anchor = 0; anchor < 30; anchor += 7) {
    const Vector l = anchor_logits(u, anchor);
    const auto d = draw_without_replacement(l.data(), 30, anchor, 20, mix_seed(1, anchor), true);
    std::vector<Index> sorted = d.picks;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
    EXPECT_EQ(std::count(d.picks.begin(), d.picks.end(), anchor), 0);
    for (int t = 0; t < 20; ++t) EXPECT_FALSE(d.allowed(t, anchor));
  }
}

TEST(Sampler, RejectsKAtOrAboveCandidates) {
  const Vector l = Vector::Zero(5);
  EXPECT_THROW(draw_without_replacement(l.data(), 5, 0, 5, 0, true), Error);
  EXPECT_THROW(draw_without_replacement(l.data(), 5, 0, 0, 0, true), Error);
  EXPECT_NO_THROW(draw_without_replacement(l.data(), 5, 0, 4, 0, true));
}

TEST(Sampler, SeedsSeparateSidesAndPairs) {
  EXPECT_NE(side_seed(1, 0, 0), side_seed(1, 0, 1));
  EXPECT_NE(side_seed(1, 0, 0), side_seed(1, 1, 0));
  EXPECT_EQ(side_seed(5, 3, 1), side_seed(5, 3, 1));
  EXPECT_NE(mix_seed(0, 0), mix_seed(0, 1));
  EXPECT_NE(mix_seed(0, 0), mix_seed(1, 0));
}

TEST(LocalStructure, ClassifiesTrueAndFalsePairsByHand) {
  LocalStructure s;
  s.x_neighbors = {1, 2, 3};
  s.y_neighbors = {2, 5, 7};
  classify_pairs(s, {{1, 1}, {2, 2}, {3, 3}, {5, 5}, {7, 7}});
  EXPECT_EQ(s.true_count, 1);
  EXPECT_EQ(s.false_set.size(), 8u);
  EXPECT_EQ(std::count(s.false_set.begin(), s.false_set.end(), std::pair<Index, Index>{1, 0}), 0);

  // x=1 matches y=5 and x=3 matches y=2: W = 2, the two true pairs are excluded.
  classify_pairs(s, {{1, 5}, {3, 2}});
  EXPECT_EQ(s.true_count, 2);
  EXPECT_EQ(s.false_set.size(), 5u);
  for (auto p : {std::pair<Index, Index>{0, 0}, {0, 1}, {2, 0}, {2, 1}}) {
    EXPECT_EQ(std::count(s.false_set.begin(), s.false_set.end(), p), 0);
  }
}

TEST(LocalStructure, NoMatchesMeansEveryPairIsFalse) {
  LocalStructure s;
  s.x_neighbors = {0, 1};
  s.y_neighbors = {2, 3, 4};
  classify_pairs(s, {{5, 5}});
  EXPECT_EQ(s.true_count, 0);
  EXPECT_EQ(s.false_set.size(), 6u);
}

TEST(LocalStructure, BuildUsesSelfSimilarityOfSelectedLatents) {
  const Matrix x = random_points(1, 15, 4);
  const Matrix y = random_points(2, 15, 4);
  CorrespondenceSet cs;
  for (Index i = 0; i < 15; ++i) {
    cs.pairs.push_back({i, i, 1.0 / 15});
    cs.ground_truth.emplace(i, i);
  }
  const auto s = build_local_structure(3, cs, x, y, 5, 4, 99);
  ASSERT_EQ(s.x_neighbors.size(), 5u);
  ASSERT_EQ(s.y_neighbors.size(), 4u);
  Matrix nx(5, 4);
  for (int i = 0; i < 5; ++i) nx.row(i) = x.row(s.x_neighbors[static_cast<std::size_t>(i)]);
  EXPECT_LT((s.cx - ot::self_similarity(nx)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(s.cy.rows(), 4);
  const auto again = build_local_structure(3, cs, x, y, 5, 4, 99);
  EXPECT_EQ(again.x_neighbors, s.x_neighbors);
  EXPECT_EQ(again.y_neighbors, s.y_neighbors);
  EXPECT_THROW(build_local_structure(3, cs, x, y, 15, 4, 99), Error);
}

TEST(LocalStructure, TapeSamplerAgreesWithPlainDraws) {
  const Matrix u = unit_rows(random_points(4, 12, 3));
  const std::vector<Index> anchors{0, 7};
  ad::Tape t;
  const auto s = sample_on_tape(t.leaf(ad::Tensor(u)), anchors, 3, 21, 1);
  ASSERT_EQ(s.hard.rows(), 6);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const Vector l = anchor_logits(u, anchors[a]);
    const auto d = draw_without_replacement(l.data(), 12, anchors[a], 3, side_seed(21, anchors[a], 1), true);
    EXPECT_EQ(d.picks, s.picks[a]);
    for (int k = 0; k < 3; ++k) {
      const Index row = static_cast<Index>(a) * 3 + k;
      EXPECT_DOUBLE_EQ(s.hard.matrix()(row, d.picks[static_cast<std::size_t>(k)]), 1.0);
      EXPECT_NEAR(s.soft.matrix().row(row).sum(), 1.0, 1e-12);
    }
  }
}

TEST(Examples, DuplicateGetsMaxProbabilityWithoutNoise) {
  Matrix pts = random_points(12, 6, 4);
  pts.row(4) = pts.row(1) * 2.0;
  const auto sc = gumbel_scores(1, pts, 0, false);
  Index best = 0;
  sc.soft.maxCoeff(&best);
  EXPECT_EQ(sc.candidates[static_cast<std::size_t>(best)], 4);
}

TEST(Examples, IdenticalCandidatesGiveUniformScores) {
  Matrix pts = Matrix::Ones(5, 3);
  pts.row(0) << 1, -2, 0.5;
  const auto sc = gumbel_scores(0, pts, 0, false);
  EXPECT_LT((sc.soft - Vector::Constant(4, 0.25)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Examples, StraightThroughForwardCases) {
  EXPECT_EQ(structure::straight_through(Vector{{0.2, 0.5, 0.3}}), (Vector{{0.0, 1.0, 0.0}}));
  EXPECT_EQ(structure::straight_through(Vector{{0.5, 0.5}}), (Vector{{1.0, 0.0}}));
}

TEST(Examples, StraightThroughGradientEqualsSoftmaxGradient) {
  Rng rng(40);
  for (int t = 0; t < 10; ++t) {
    const Matrix v = rng.normal_matrix(1, 6);
    const Matrix w = rng.normal_matrix(1, 6);
    ad::Tape a;
    ad::Var va = a.leaf(ad::Tensor(v));
    a.backward(ad::sum(ad::mul(ad::straight_through(ad::softmax_rows(va)), a.constant(ad::Tensor(w)))));
    ad::Tape b;
    ad::Var vb = b.leaf(ad::Tensor(v));
    b.backward(ad::sum(ad::mul(ad::softmax_rows(vb), b.constant(ad::Tensor(w)))));
    EXPECT_LT((a.grad(va).matrix() - b.grad(vb).matrix()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Examples, IdenticalCloudsWithIdentityCorrespondenceMatchPerfectly) {
  const Matrix x = random_points(41, 20, 5);
  CorrespondenceSet cs;
  for (Index i = 0; i < 20; ++i) {
    cs.pairs.push_back({i, i, 1.0 / 20});
    cs.ground_truth.emplace(i, i);
  }
  for (Index p = 0; p < 20; p += 3) {
    const auto s = build_local_structure(p, cs, x, x, 6, 6, 5, false);
    EXPECT_EQ(s.true_count, 6);
    EXPECT_TRUE(s.false_set.empty());
  }
}

TEST(Examples, SingleNeighborIsNearestByDotProduct) {
  const Matrix x = random_points(42, 10, 3);
  const Matrix y = random_points(43, 10, 3);
  CorrespondenceSet cs;
  cs.pairs.push_back({2, 7, 0.1});
  const auto s = build_local_structure(0, cs, x, y, 1, 1, 0, false);
  auto nearest = [](const Matrix& m, Index anchor) {
    const Vector l = anchor_logits(unit_rows(m), anchor);
    Index best = anchor == 0 ? 1 : 0;
    for (Index j = 0; j < m.rows(); ++j) {
      if (j != anchor && l(j) > l(best)) best = j;
    }
    return best;
  };
  EXPECT_EQ(s.x_neighbors[0], nearest(x, 2));
  EXPECT_EQ(s.y_neighbors[0], nearest(y, 7));
}

}  // namespace
