#pragma once

#include <map>
#include <optional>
#include <vector>

#include "brainloop/alignment/losses.hpp"
#include "brainloop/alignment/model.hpp"
#include "brainloop/embedding_set.hpp"
#include "brainloop/eval/rsa.hpp"
#include "brainloop/ot/sinkhorn.hpp"

namespace brainloop::align {

/// Rows of x and y paired position-wise; x[i] and y[i] share a category.
struct Batch {
  std::vector<Index> x;
  std::vector<Index> y;
};

/// Pairs every x row with a distinct same-category y row where possible,
/// shuffles, and cuts into batches. A short tail batch that could not host a
/// K-neighborhood is folded into the previous one.
inline std::vector<Batch> make_batches(const std::vector<Index>& x_category, const std::vector<Index>& y_category,
                                       int batch_size, int min_batch, Rng& rng) {
  require(!x_category.empty(), ErrorKind::invalid_argument, "make_batches: empty data");
  std::map<Index, std::vector<Index>> pools;
  for (std::size_t j = 0; j < y_category.size(); ++j) pools[y_category[j]].push_back(static_cast<Index>(j));
  for (auto& [c, pool] : pools) rng.shuffle(pool);
  std::map<Index, std::size_t> next;
  std::vector<Index> order = rng.permutation(static_cast<Index>(x_category.size()));
  std::vector<Batch> batches;
  Batch current;
  for (Index i : order) {
    const Index c = x_category[static_cast<std::size_t>(i)];
    auto it = pools.find(c);
    require(it != pools.end(), ErrorKind::not_found,
            "make_batches: category " + std::to_string(c) + " has no rows in the second domain");
    const auto& pool = it->second;
    std::size_t& cursor = next[c];
    const Index j = cursor < pool.size() ? pool[cursor] : pool[static_cast<std::size_t>(rng.index(static_cast<Index>(pool.size())))];
    ++cursor;
    current.x.push_back(i);
    current.y.push_back(j);
    if (static_cast<int>(current.x.size()) == batch_size) {
      batches.push_back(std::move(current));
      current = Batch{};
    }
  }
  if (!current.x.empty()) {
    if (static_cast<int>(current.x.size()) < min_batch && !batches.empty()) {
      batches.back().x.insert(batches.back().x.end(), current.x.begin(), current.x.end());
      batches.back().y.insert(batches.back().y.end(), current.y.begin(), current.y.end());
    } else {
      batches.push_back(std::move(current));
    }
  }
  return batches;
}

struct Proposal {
  structure::CorrespondenceSet correspondences;
  ot::TransportPlan plan;
};

/// Sinkhorn on 1 - cosine similarity with uniform marginals; each x row is
/// paired with the argmax of its plan row (ties to the lowest column).
inline Proposal propose_correspondences(const Matrix& x, const Matrix& y, double epsilon, int iterations) {
  require(x.rows() > 0 && y.rows() > 0, ErrorKind::invalid_argument, "propose_correspondences: empty batch");
  Proposal out;
  out.plan = ot::sinkhorn(
      ot::TransportProblem{ot::cosine_cost_matrix(x, y), uniform_weights(x.rows()), uniform_weights(y.rows()), epsilon},
      ot::SinkhornOptions{iterations, 0.0});
  for (Index i = 0; i < x.rows(); ++i) {
    const Index j = ad::detail::argmax_lowest(out.plan.plan.row(i).data(), y.rows());
    out.correspondences.pairs.push_back({i, j, out.plan.plan(i, j)});
  }
  return out;
}

inline Matrix gather(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

inline PairList diagonal_pairs(Index n) {
  PairList v;
  for (Index i = 0; i < n; ++i) v.emplace_back(i, i);
  return v;
}

/// Step A: L_W on the refined latents of one batch, then an Adam update.
inline double step_w(AlignmentModel& model, const Matrix& x, const Matrix& y, const Batch& batch) {
  const AlignmentConfig& cfg = model.config;
  ad::Tape tape;
  ModelVars vars = bind(tape, model);
  ad::Var zx = encode(vars.image, tape.constant(ad::Tensor(gather(x, batch.x))));
  ad::Var zy = encode(vars.signal, tape.constant(ad::Tensor(gather(y, batch.y))));
  auto [rx, ry] = refine(vars.refiner, zx, zy);
  ad::Var sim = ad::matmul(rx, ad::transpose(ry));
  const Index n = sim.rows();
  ad::Var plan;
  if (cfg.detach_plan) {
    const Matrix cost = (-sim.matrix()).array() + 1.0;
    plan = tape.constant(ad::Tensor(
        ot::sinkhorn(ot::TransportProblem{cost, uniform_weights(n), uniform_weights(n), cfg.epsilon},
                     ot::SinkhornOptions{cfg.sinkhorn_iters, 0.0})
            .plan));
  } else {
    plan = ot::sinkhorn_on_tape(ad::add_scalar(ad::neg(sim), 1.0), uniform_weights(n), uniform_weights(n),
                                cfg.epsilon, cfg.sinkhorn_iters);
  }
  ad::Var loss = loss_w(plan, sim, diagonal_pairs(n), cfg.lambda1);
  tape.backward(loss);
  apply_gradients(model, tape, vars);
  return loss.value().item();
}

struct GwStepResult {
  double loss = 0.0;
  double mean_true_count = 0.0;
};

/// Step B: rebuild local structures around sampled anchors from the current
/// latents and putative correspondences, then L_GW and an Adam update.
inline GwStepResult step_gw(AlignmentModel& model, const Matrix& x, const Matrix& y, const Batch& batch,
                            std::uint64_t seed) {
  const AlignmentConfig& cfg = model.config;
  ad::Tape tape;
  ModelVars vars = bind(tape, model);
  ad::Var zx = encode(vars.image, tape.constant(ad::Tensor(gather(x, batch.x))));
  ad::Var zy = encode(vars.signal, tape.constant(ad::Tensor(gather(y, batch.y))));
  const Index n = zx.rows();
  Matrix rx = zx.matrix();
  Matrix ry = zy.matrix();
  if (cfg.refiner.layers > 0) {
    ad::Tape scratch;
    RefinerVars rv = bind(scratch, model.refiner);
    auto [a, b] = refine(rv, scratch.constant(ad::Tensor(rx)), scratch.constant(ad::Tensor(ry)));
    rx = a.matrix();
    ry = b.matrix();
  }
  const Proposal proposal = propose_correspondences(rx, ry, cfg.epsilon, cfg.sinkhorn_iters);
  std::vector<Index> partner;
  for (const auto& p : proposal.correspondences.pairs) partner.push_back(p.y);
  // y reindexed so that row i is the putative partner of x row i.
  ad::Var zy_matched = ad::gather_rows(zy, partner);

  Rng rng(structure::mix_seed(seed, 0xA4C));
  const Index n_anchors = std::min<Index>(cfg.anchors_per_batch, n);
  const std::vector<Index> anchors = rng.sample(n, n_anchors);
  const auto sx = structure::sample_on_tape(zx, anchors, cfg.k1, seed, 0, cfg.gumbel_noise);
  const auto sy = structure::sample_on_tape(zy_matched, anchors, cfg.k2, seed, 1, cfg.gumbel_noise);
  std::set<std::pair<Index, Index>> truth;
  for (Index i = 0; i < n; ++i) truth.emplace(i, i);
  const int k_common = std::min(cfg.k1, cfg.k2);
  std::vector<StructureTerms> terms;
  double true_total = 0.0;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const auto ra = static_cast<Index>(a);
    ad::Var hx = ad::slice_rows(sx.hard, ra * cfg.k1, cfg.k1);
    ad::Var hy = ad::slice_rows(sy.hard, ra * cfg.k2, cfg.k2);
    structure::LocalStructure ls;
    ls.x_neighbors = sx.picks[a];
    for (Index j : sy.picks[a]) ls.y_neighbors.push_back(partner[static_cast<std::size_t>(j)]);
    structure::classify_pairs(ls, truth);
    true_total += ls.true_count;
    StructureTerms t;
    t.x_hard = ad::slice_rows(hx, 0, k_common);
    t.y_soft = ad::slice_rows(sy.soft, ra * cfg.k2, k_common);
    t.cx = ad::unit_self_similarity(ad::matmul(hx, zx));
    t.cy = ad::unit_self_similarity(ad::matmul(hy, zy_matched));
    t.true_count = ls.true_count;
    t.false_set = std::move(ls.false_set);
    terms.push_back(std::move(t));
  }
  GwLossOptions options;
  options.lambda2 = cfg.lambda2;
  options.epsilon = cfg.gw_epsilon;
  options.outer_iterations = cfg.gw_outer_iters;
  options.inner_iterations = cfg.sinkhorn_iters;
  options.unroll = cfg.unroll_gw;
  ad::Var loss = loss_gw(terms, options);
  tape.backward(loss);
  apply_gradients(model, tape, vars);
  return {loss.value().item(), true_total / static_cast<double>(anchors.size())};
}

struct EpochStats {
  int epoch = 0;
  double loss_w = 0.0;
  double loss_gw = 0.0;
  double mean_true_count = 0.0;
  int batches = 0;
};

/// Category index of every row of `y` relative to the categories of `x`.
inline std::pair<std::vector<Index>, std::vector<Index>> shared_categories(const EmbeddingSet& x,
                                                                           const EmbeddingSet& y) {
  const auto cats = x.categories();
  return {x.category_indices(cats), y.category_indices(cats)};
}

/// One pass over the paired training data with the two alternating steps.
inline EpochStats train_epoch(AlignmentModel& model, const EmbeddingSet& x, const EmbeddingSet& y, int epoch) {
  const AlignmentConfig& cfg = model.config;
  require(x.size() > 0 && y.size() > 0, ErrorKind::invalid_argument, "train_epoch: empty data");
  const auto [xc, yc] = shared_categories(x, y);
  const std::uint64_t epoch_seed =
      cfg.reshuffle_each_epoch ? structure::mix_seed(cfg.seed, 0xE0000 + static_cast<std::uint64_t>(epoch))
                               : structure::mix_seed(cfg.seed, 0xE0000);
  Rng rng(epoch_seed);
  const int min_batch = std::max(cfg.k1, cfg.k2) + 1;
  const std::vector<Batch> batches = make_batches(xc, yc, cfg.batch_size, min_batch, rng);
  for (const auto& b : batches) {
    require(static_cast<int>(b.x.size()) >= min_batch, ErrorKind::invalid_argument,
            "train_epoch: batch of " + std::to_string(b.x.size()) + " rows cannot host k=" +
                std::to_string(std::max(cfg.k1, cfg.k2)) + " neighborhoods");
  }
  set_learning_rate(model, warmup_factor(cfg, epoch));
  EpochStats stats;
  stats.epoch = epoch;
  stats.batches = static_cast<int>(batches.size());
  auto run_w = [&](const Batch& b) { stats.loss_w += step_w(model, x.matrix, y.matrix, b); };
  auto run_gw = [&](const Batch& b, std::size_t index) {
    const auto r = step_gw(model, x.matrix, y.matrix, b, structure::mix_seed(epoch_seed, index));
    stats.loss_gw += r.loss;
    stats.mean_true_count += r.mean_true_count;
  };
  if (cfg.alternation == Alternation::per_batch) {
    for (std::size_t i = 0; i < batches.size(); ++i) {
      if (cfg.use_loss_w) run_w(batches[i]);
      if (cfg.use_loss_gw) run_gw(batches[i], i);
    }
  } else {
    if (cfg.use_loss_w) {
      for (const auto& b : batches) run_w(b);
    }
    if (cfg.use_loss_gw) {
      for (std::size_t i = 0; i < batches.size(); ++i) run_gw(batches[i], i);
    }
  }
  const double nb = static_cast<double>(batches.size());
  stats.loss_w /= nb;
  stats.loss_gw /= nb;
  stats.mean_true_count /= nb;
  return stats;
}

/// Latents of a whole set through the image (x) or signal (y) encoder.
inline Matrix encode_image(const AlignmentModel& model, const Matrix& x) { return encode(model.image_encoder, x); }
inline Matrix encode_signal(const AlignmentModel& model, const Matrix& y) { return encode(model.signal_encoder, y); }

struct StructuralGwOptions {
  double epsilon = 0.01;
  int outer_iterations = 50;
  int inner_iterations = 1000;
};

/// GW discrepancy between two structures, taking the better of the
/// independent-coupling start and (for equal sizes) a start concentrated on
/// the index-matched diagonal. Mirror descent only finds local optima, and
/// the two starts bracket the typical failure modes.
inline double structural_gw(const Matrix& cx, const Matrix& cy, const StructuralGwOptions& options = {}) {
  ot::GwOptions gw;
  gw.epsilon = options.epsilon;
  gw.outer_iterations = options.outer_iterations;
  gw.inner_iterations = options.inner_iterations;
  const Vector p = uniform_weights(cx.rows());
  const Vector q = uniform_weights(cy.rows());
  double best = ot::entropic_gw(cx, cy, p, q, gw).distance;
  if (cx.rows() == cy.rows()) {
    const Index n = cx.rows();
    const Matrix init = 0.9 * Matrix::Identity(n, n) / static_cast<double>(n) + 0.1 * p * q.transpose();
    best = std::min(best, ot::entropic_gw(cx, cy, p, q, gw, init).distance);
  }
  return best;
}

/// GW between the category-centroid self-similarities of the two encoded domains.
inline double centroid_gw(const AlignmentModel& model, const EmbeddingSet& x, const EmbeddingSet& y,
                          const StructuralGwOptions& options = {}) {
  const auto cats = x.categories();
  const auto k = static_cast<Index>(cats.size());
  const Matrix cx = ot::self_similarity(eval::centroids(encode_image(model, x.matrix), x.category_indices(cats), k));
  const Matrix cy = ot::self_similarity(eval::centroids(encode_signal(model, y.matrix), y.category_indices(cats), k));
  return structural_gw(cx, cy, options);
}

struct TrackPoint {
  int step = 0;
  double gw_train = 0.0;
  double gw_heldout = 0.0;
};

inline TrackPoint track_alignment(const AlignmentModel& model, int step, const EmbeddingSet& train_x,
                                  const EmbeddingSet& train_y, const EmbeddingSet& heldout_x,
                                  const EmbeddingSet& heldout_y) {
  return TrackPoint{step, centroid_gw(model, train_x, train_y), centroid_gw(model, heldout_x, heldout_y)};
}

}  // namespace brainloop::align
