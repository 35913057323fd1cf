// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <Eigen/QR>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>

#include "brainloop/experiment/checkpoint.hpp"
#include "brainloop/experiment/runner.hpp"
#include "support/grad_cases.hpp"
#include "support/oracles.hpp"

using namespace brainloop;
using nlohmann::json;

namespace {

int failures = 0;

void line(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Stopwatch {
 public:
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

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

void sinkhorn_criteria() {
  Stopwatch clock;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const Index n = 2 + rng.index(63);
    const Index m = 2 + rng.index(63);
    const ot::TransportProblem p{random_cost(rng, n, m), random_simplex(rng, n), random_simplex(rng, m), 1.0};
    worst = std::max(worst, ot::sinkhorn(p, ot::SinkhornOptions{100, 0.0}).marginal_residual);
  }
  line("sinkhorn.marginals", worst < 1e-6, fmt("max residual %.2e over 20 problems up to 64x64 (< 1e-6)", worst));

  double worst_gap = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(1000 + s);
    const Matrix cost = random_cost(rng, 5, 5);
    const auto plan = ot::sinkhorn({cost, uniform_weights(5), uniform_weights(5), 0.02}, ot::SinkhornOptions{1000, 0.0});
    const double emd = brainloop::testing::brute_force_emd(cost);
    worst_gap = std::max(worst_gap, std::abs(plan.value - emd) / emd);
  }
  line("sinkhorn.emd_5x5", worst_gap < 0.05, fmt("max relative gap %.2f%% vs 120-permutation EMD (< 5%%)", 100 * worst_gap));
  const double t = clock.seconds();
  line("sinkhorn.runtime", t < 5.0, fmt("%.2f s (< 5 s)", t));
}

ot::GwOptions gw_options() {
  ot::GwOptions o;
  o.epsilon = 0.01;
  o.outer_iterations = 50;
  return o;
}

void gw_criteria() {
  Stopwatch clock;
  double plain = 0.0;
  double structural = 0.0;
  for (Index n : {2, 3, 5, 10, 20, 35, 50}) {
    Rng rng(static_cast<std::uint64_t>(n));
    const Matrix c = ot::self_similarity(rng.normal_matrix(n, 6));
    if (n >= 3) plain = std::max(plain, ot::entropic_gw(c, c, gw_options()).distance);
    structural = std::max(structural, align::structural_gw(c, c));
  }
  line("gw.self_distance", plain < 1e-3 && structural < 1e-3,
       fmt("max gw(C,C) %.2e (n=3..50), two-start %.2e (n=2..50) (< 1e-3)", plain, structural));

  double rot = 0.0;
  for (Index n : {4, 12, 25, 50}) {
    Rng rng(100 + static_cast<std::uint64_t>(n));
    const Matrix x = rng.normal_matrix(n, 5);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(rng.normal_matrix(5, 5)));
    const Matrix r = qr.householderQ();
    rot = std::max(rot, ot::entropic_gw(ot::self_similarity(x), ot::self_similarity(x * r), gw_options()).distance);
  }
  line("gw.rotation_invariance", rot < 1e-3, fmt("max gw(C_X, C_XR) %.2e (< 1e-3)", rot));

  double gap = 0.0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    Rng rng(s);
    const Matrix cx = ot::self_similarity(rng.normal_matrix(3, 3));
    const Matrix cy = ot::self_similarity(rng.normal_matrix(3, 3));
    const double bf = brainloop::testing::brute_force_gw(cx, cy);
    gap = std::max(gap, std::abs(ot::entropic_gw(cx, cy, gw_options()).distance - bf) / bf);
  }
  line("gw.bruteforce_3x3", gap <= 0.10, fmt("max relative gap %.2f%% over 30 instances (<= 10%%)", 100 * gap));
  const double t = clock.seconds();
  line("gw.runtime", t < 10.0, fmt("%.2f s (< 10 s)", t));
}

void gradient_criteria() {
  Stopwatch clock;
  const auto cases = brainloop::testing::gradient_cases();
  double worst = 0.0;
  std::string worst_name;
  int bad = 0;
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto inst = c.make(seed);
      const auto r = brainloop::testing::check_gradient(inst.analytic, inst.numeric, inst.inputs);
      if (!(r.rel_error < 1e-4) || r.analytic_norm == 0.0) ++bad;
      if (r.rel_error > worst) {
        worst = r.rel_error;
        worst_name = c.name;
      }
    }
  }
  line("gradients.finite_difference", bad == 0,
       fmt("%zu cases x 10 instances, max rel error %.2e (%s), %d over 1e-4, %.1f s", cases.size(), worst,
           worst_name.c_str(), bad, clock.seconds()));
}

void gumbel_criterion() {
  Rng rng(7);
  const Matrix pts = rng.normal_matrix(6, 3);
  const Index anchor = 2;
  const Vector logits = structure::anchor_logits(unit_rows(pts), anchor);
  Vector others(5);
  for (Index j = 0, c = 0; j < 6; ++j) {
    if (j != anchor) others(c++) = logits(j);
  }
  const Vector e = (others.array() - others.maxCoeff()).exp().matrix();
  const Vector p = e / e.sum();
  Vector freq = Vector::Zero(5);
  const int draws = 100000;
  for (int s = 0; s < draws; ++s) {
    Index k = 0;
    structure::gumbel_scores(anchor, pts, static_cast<std::uint64_t>(s)).hard.maxCoeff(&k);
    freq(k) += 1.0 / draws;
  }
  const double dev = (freq - p).cwiseAbs().maxCoeff();
  line("gumbel.softmax_frequencies", dev <= 0.01, fmt("max |freq - softmax| %.4f over 1e5 draws (<= 0.01)", dev));
}

void benchmark_criteria() {
  Stopwatch clock;
  const experiment::ExperimentConfig cfg;
  const auto data = experiment::load_data(cfg.data);
  const auto run = experiment::run_align(cfg, data);
  const double t = clock.seconds();
  const json s = experiment::summarize_run(run);
  const auto num = [&](const char* key) { return s[key].is_number() ? s[key].get<double>() : std::nan(""); };
  const double drop = num("gw_train_drop");
  const double r_train = num("pearson_epoch_gw_train");
  const double r_held = num("pearson_epoch_gw_heldout");
  const double sc0 = num("silhouette_initial");
  const double sc1 = num("silhouette_final");
  const double os0 = num("one_shot_initial");
  const double os1 = num("one_shot_final");
  const double r_gwsc = num("pearson_gw_heldout_silhouette");
  const auto checkpoints = s["checkpoints"].get<std::size_t>();
  line("benchmark.gw_train_drop", drop >= 0.5,
       fmt("GW(train) %.4f -> %.6f, drop %.1f%% (>= 50%%)", num("gw_train_initial"), num("gw_train_final"), 100 * drop));
  line("benchmark.trend_train", r_train <= -0.8, fmt("r(epoch, GW train) %.3f (<= -0.8)", r_train));
  line("benchmark.trend_heldout", r_held <= -0.7, fmt("r(epoch, GW held-out) %.3f (<= -0.7)", r_held));
  line("benchmark.silhouette", sc1 > sc0, fmt("held-out silhouette %.4f -> %.4f (strictly up)", sc0, sc1));
  line("benchmark.one_shot", os1 - os0 >= 0.10,
       fmt("held-out 2-superclass one-shot %.1f%% -> %.1f%% (+%.1f pp, >= 10 pp)", 100 * os0, 100 * os1, 100 * (os1 - os0)));
  line("benchmark.runtime", t <= 600.0,
       fmt("%.1f s for %d epochs on %zu train / %zu held-out categories (<= 600 s)", t, cfg.alignment.epochs,
           data.x.categories().size(), data.heldout_x.categories().size()));
  line("gw_sc.correlation", checkpoints >= 10 && r_gwsc <= -0.8,
       fmt("r(GW held-out, silhouette) %.3f over %zu checkpoints (<= -0.8, >= 10)", r_gwsc, checkpoints));
}

void probe_criteria() {
  {
    Rng rng(11);
    const Matrix e = rng.normal_matrix(300, 16);
    std::vector<eval::Triplet> ts;
    for (int t = 0; t < 100000; ++t) {
      const auto pick = rng.sample(300, 3);
      ts.push_back({pick[0], pick[1], pick[2], pick[static_cast<std::size_t>(rng.index(3))]});
    }
    const double a = eval::triplet_odd_one_out(e, ts).accuracy;
    line("probe.triplet_chance", std::abs(a - 1.0 / 3.0) <= 0.01, fmt("%.2f%% over 1e5 triplets (33.3 +- 1)", 100 * a));
  }
  {
    Rng rng(12);
    const Matrix train = rng.normal_matrix(200, 16);
    std::vector<Index> cls;
    for (Index i = 0; i < 200; ++i) cls.push_back(i % 2);
    const Matrix test = rng.normal_matrix(4000, 16);
    std::vector<Index> target;
    for (Index i = 0; i < 4000; ++i) target.push_back(rng.index(2));
    eval::ProbeOptions o;
    o.seed = 5;
    const double a = eval::ood_probe(train, cls, cls, test, target, 5, o).accuracy;
    line("probe.ood_chance", std::abs(a - 0.5) <= 0.02, fmt("%.2f%% over 100 trials (50 +- 2)", 100 * a));
  }
  {
    Rng rng(13);
    const Matrix q = rng.normal_matrix(200, 16);
    const Matrix g = rng.normal_matrix(200, 16);
    std::vector<Index> labels;
    for (Index i = 0; i < 200; ++i) labels.push_back(i % 20);
    eval::RetrievalOptions o;
    o.n = 10;
    o.trials = 500;
    o.seed = 3;
    const double a = eval::nway_retrieval(q, labels, g, labels, o).accuracy;
    line("probe.retrieval_chance", std::abs(a - 0.1) <= 0.04, fmt("10-way %.3f over 500 trials (0.1 +- 0.04)", a));
  }
}

void oracle_criteria() {
  double sil = 0.0;
  for (std::uint64_t s = 0; s < 25; ++s) {
    Rng rng(s);
    const Index n = 3 + rng.index(18);
    const Index k = 2 + rng.index(std::min<Index>(4, n - 1));
    std::vector<Index> labels;
    for (Index i = 0; i < n; ++i) labels.push_back(i < k ? i : rng.index(k));
    const Matrix x = rng.normal_matrix(n, 2 + rng.index(5));
    sil = std::max(sil, std::abs(eval::silhouette(x, labels) - brainloop::testing::brute_force_silhouette(x, labels)));
  }
  line("oracle.silhouette", sil <= 1e-9, fmt("max |diff| %.1e vs brute force on 25 instances <= 20 points", sil));

  Matrix d(4, 4);
  const double p[] = {0, 1, 5, 11};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) d(i, j) = std::abs(p[i] - p[j]);
  }
  const auto m = eval::average_linkage(d);
  const bool linkage = m.size() == 3 && m[0].left == 0 && m[0].right == 1 && m[0].distance == 1.0 && m[1].left == 2 &&
                       m[1].right == 4 && m[1].distance == 4.5 && m[2].left == 3 && m[2].right == 5 &&
                       m[2].distance == 9.0 && m[2].size == 4;
  line("oracle.average_linkage", linkage, "points {0,1,5,11}: merges at 1, 4.5, 9");

  double pca = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(s);
    const Matrix x = rng.normal_matrix(20, 6) * rng.normal_matrix(6, 6);
    const auto model = eval::pca_fit(x, 6);
    pca = std::max(pca, (eval::pca_inverse(model, eval::pca_project(model, x)) - x).cwiseAbs().maxCoeff());
  }
  line("oracle.pca_round_trip", pca < 1e-8, fmt("max error %.1e (< 1e-8)", pca));

  Vector a(3), b(3);
  a << 1, 2, 3;
  b << 1, 2, 4;
  const double r = eval::pearson(a, b);
  const double closed = 9.0 / std::sqrt(84.0);
  line("oracle.pearson", std::abs(r - closed) < 1e-4, fmt("r = %.6f, closed form 9/sqrt(84) = %.6f", r, closed));
}

experiment::ExperimentConfig small_experiment() {
  experiment::ExperimentConfig c;
  c.data.synth.n_categories = 8;
  c.data.synth.per_category = 8;
  c.data.synth.dim_x = 12;
  c.data.synth.dim_y = 10;
  c.data.synth.latent_dim = 4;
  c.data.synth.heldout_categories = 4;
  auto& a = c.alignment;
  a.epochs = 3;
  a.warmup_epochs = 0;
  a.batch_size = 16;
  a.k1 = 4;
  a.k2 = 4;
  a.anchors_per_batch = 4;
  a.gw_outer_iters = 10;
  a.sinkhorn_iters = 30;
  a.lr = 1e-3;
  a.lambda2 = 10;
  a.image_encoder.hidden = {24};
  a.image_encoder.output_dim = 8;
  a.signal_encoder.hidden = {20};
  a.signal_encoder.output_dim = 8;
  a.refiner = align::RefinerSpec{1, 2, 4};
  for (const char* kind : {"silhouette", "retrieval", "gw", "one_shot", "rdm", "csm", "manifold"}) {
    json t{{"kind", kind}};
    if (std::string(kind) == "retrieval") t["n"] = 3;
    if (std::string(kind) == "one_shot") t["trials"] = 10;
    if (std::string(kind) == "rdm") t["n_components"] = 4;
    c.tasks.push_back(experiment::detail::read_task(t, "eval.tasks"));
  }
  c.apply_seed(21);
  return c;
}

void determinism_criterion() {
  namespace fs = std::filesystem;
  const auto cfg = small_experiment();
  const auto data = experiment::load_data(cfg.data);
  auto once = [&](const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("brainloop_acceptance_" + tag);
    fs::remove_all(dir);
    auto c = cfg;
    c.checkpoint = (dir / "model.bin").string();
    experiment::Report ar((dir / "align").string(), experiment::to_json(c), c.seed);
    auto run = experiment::run_align(c, data, &ar);
    fs::create_directories(dir);
    experiment::save_checkpoint(run.model, c.checkpoint);
    experiment::Report er((dir / "eval").string(), experiment::to_json(c), c.seed);
    const json out{{"summary", experiment::summarize_run(run)}, {"eval", experiment::run_eval(c, data, er)}};
    fs::remove_all(dir);
    return out.dump();
  };
  const std::string a = once("a");
  const std::string b = once("b");
  line("determinism.align_eval", a == b, fmt("two align+eval runs, seed %llu: %zu-byte metric dumps %s",
                                            static_cast<unsigned long long>(cfg.seed), a.size(),
                                            a == b ? "identical" : "differ"));
}

}  // namespace

int main() {
  const auto guarded = [](const char* section, void (*f)()) {
    try {
      f();
    } catch (const std::exception& e) {
      line(section, false, std::string("raised: ") + e.what());
    }
  };
  guarded("sinkhorn", sinkhorn_criteria);
  guarded("gw", gw_criteria);
  guarded("gradients", gradient_criteria);
  guarded("gumbel", gumbel_criterion);
  guarded("probe", probe_criteria);
  guarded("oracle", oracle_criteria);
  guarded("determinism", determinism_criterion);
  guarded("benchmark", benchmark_criteria);
  std::printf("%s: %d failing criteria\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
