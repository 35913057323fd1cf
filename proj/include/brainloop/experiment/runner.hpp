#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "brainloop/alignment/trainer.hpp"
#include "brainloop/eval/manifold.hpp"
#include "brainloop/eval/probes.hpp"
#include "brainloop/eval/silhouette.hpp"
#include "brainloop/eval/stats.hpp"
#include "brainloop/experiment/checkpoint.hpp"
#include "brainloop/experiment/config.hpp"
#include "brainloop/experiment/embd_io.hpp"
#include "brainloop/experiment/report.hpp"
#include "brainloop/experiment/synth.hpp"

namespace brainloop::experiment {

struct Datasets {
  EmbeddingSet x;
  EmbeddingSet y;
  EmbeddingSet heldout_x;
  EmbeddingSet heldout_y;

  [[nodiscard]] const EmbeddingSet& get(const std::string& name) const {
    if (name == "x") return x;
    if (name == "y") return y;
    if (name == "heldout_x") return heldout_x;
    if (name == "heldout_y") return heldout_y;
    throw Error(ErrorKind::invalid_argument, "unknown embedding set '" + name + "'");
  }
};

inline Datasets load_data(const DataConfig& data) {
  if (data.source == "synth") {
    auto s = synth::isomorphic_clusters(data.synth);
    return {std::move(s.x), std::move(s.y), std::move(s.heldout_x), std::move(s.heldout_y)};
  }
  auto load = [](const std::string& path, const char* field) {
    require(!path.empty(), ErrorKind::config, std::string("data.") + field + ": missing path");
    require(std::filesystem::exists(path), ErrorKind::not_found, std::string("data.") + field + ": no such file " + path);
    return io::load_embeddings(path);
  };
  return {load(data.x, "x"), load(data.y, "y"), load(data.heldout_x, "heldout_x"), load(data.heldout_y, "heldout_y")};
}

/// Held-out categories must not occur in the training sets.
inline void check_no_leakage(const Datasets& d) {
  std::set<std::string> train(d.x.category_ids.begin(), d.x.category_ids.end());
  train.insert(d.y.category_ids.begin(), d.y.category_ids.end());
  for (const auto* set : {&d.heldout_x, &d.heldout_y}) {
    for (const auto& c : set->category_ids) {
      require(train.count(c) == 0, ErrorKind::invalid_argument, "held-out category '" + c + "' also appears in training data");
    }
  }
}

inline std::vector<Index> superclass_labels(const EmbeddingSet& set) {
  std::map<std::string, Index> ids;
  std::vector<Index> out;
  for (const auto& c : set.category_ids) {
    const auto it = ids.emplace(synth::superclass_of(c), static_cast<Index>(ids.size())).first;
    out.push_back(it->second);
  }
  return out;
}

inline Index distinct_count(const std::vector<Index>& labels) {
  return static_cast<Index>(std::set<Index>(labels.begin(), labels.end()).size());
}

/// Held-out silhouette and superclass one-shot accuracy of the encoded image side.
struct ProbePoint {
  double silhouette = 0.0;
  std::optional<double> one_shot_superclass;
};

inline ProbePoint probe_heldout(const align::AlignmentModel& model, const EmbeddingSet& heldout_x, std::uint64_t seed) {
  const Matrix z = align::encode_image(model, heldout_x.matrix);
  ProbePoint out;
  out.silhouette = eval::silhouette(z, heldout_x.category_indices());
  const auto sup = superclass_labels(heldout_x);
  if (distinct_count(sup) >= 2) {
    eval::ProbeOptions po;
    po.seed = structure::mix_seed(seed, 0x05E);
    out.one_shot_superclass = eval::one_shot_probe(z, sup, po).accuracy;
  }
  return out;
}

struct AlignOutcome {
  align::AlignmentModel model;
  std::vector<align::TrackPoint> track;
  std::vector<double> silhouette;
  std::vector<double> one_shot;
  std::vector<align::EpochStats> epochs;
};

inline Vector as_vector(const std::vector<double>& v) {
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Index>(i)) = v[i];
  return out;
}

inline std::optional<double> safe_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || a.size() != b.size()) return std::nullopt;
  try {
    return eval::pearson(as_vector(a), as_vector(b));
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

/// Summary statistics of a tracked run: trend of GW over epochs, GW vs held-out SC, and probe gains.
inline json summarize_run(const AlignOutcome& run) {
  std::vector<double> steps;
  std::vector<double> train;
  std::vector<double> held;
  for (const auto& p : run.track) {
    steps.push_back(p.step);
    train.push_back(p.gw_train);
    held.push_back(p.gw_heldout);
  }
  json s{{"epochs", run.track.empty() ? 0 : run.track.back().step},
         {"checkpoints", run.track.size()},
         {"pearson_epoch_gw_train", optional_json(safe_pearson(steps, train))},
         {"pearson_epoch_gw_heldout", optional_json(safe_pearson(steps, held))}};
  if (!train.empty()) {
    s["gw_train_initial"] = train.front();
    s["gw_train_final"] = train.back();
    s["gw_train_drop"] = train.front() > 0.0 ? 1.0 - train.back() / train.front() : 0.0;
    s["gw_heldout_initial"] = held.front();
    s["gw_heldout_final"] = held.back();
  }
  if (!run.silhouette.empty()) {
    s["pearson_gw_heldout_silhouette"] = optional_json(safe_pearson(held, run.silhouette));
    s["pearson_gw_train_silhouette"] = optional_json(safe_pearson(train, run.silhouette));
    s["silhouette_initial"] = run.silhouette.front();
    s["silhouette_final"] = run.silhouette.back();
  }
  if (!run.one_shot.empty()) {
    s["one_shot_initial"] = run.one_shot.front();
    s["one_shot_final"] = run.one_shot.back();
  }
  return s;
}

/// Trains on x/y, tracks GW (and optionally held-out probes) before training
/// and after every epoch, and writes one report record per tracked step.
inline AlignOutcome run_align(const ExperimentConfig& cfg, const Datasets& data, Report* report = nullptr) {
  check_no_leakage(data);
  AlignOutcome run{align::make_model(data.x.dim(), data.y.dim(), cfg.alignment), {}, {}, {}, {}};
  const bool probes = cfg.track_probes && data.heldout_x.categories().size() >= 2;
  for (int e = 0; e <= cfg.alignment.epochs; ++e) {
    json metrics;
    if (e > 0) {
      const align::EpochStats st = align::train_epoch(run.model, data.x, data.y, e - 1);
      run.epochs.push_back(st);
      metrics["loss_w"] = st.loss_w;
      metrics["loss_gw"] = st.loss_gw;
      metrics["mean_true_count"] = st.mean_true_count;
      metrics["batches"] = st.batches;
    }
    const align::TrackPoint tp = align::track_alignment(run.model, e, data.x, data.y, data.heldout_x, data.heldout_y);
    run.track.push_back(tp);
    metrics["gw_train"] = tp.gw_train;
    metrics["gw_heldout"] = tp.gw_heldout;
    if (probes) {
      const ProbePoint pp = probe_heldout(run.model, data.heldout_x, cfg.seed);
      run.silhouette.push_back(pp.silhouette);
      metrics["silhouette_heldout"] = pp.silhouette;
      if (pp.one_shot_superclass) {
        run.one_shot.push_back(*pp.one_shot_superclass);
        metrics["one_shot_superclass_heldout"] = *pp.one_shot_superclass;
      }
    }
    if (report != nullptr) report->record(e, "epoch", metrics);
  }
  if (report != nullptr) report->record(cfg.alignment.epochs, "summary", summarize_run(run));
  return run;
}

/// Triplet file: one "i j k choice" line per triplet (row indices), '#' starts a comment.
inline std::vector<eval::Triplet> load_triplets(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::not_found, "cannot open triplet file " + path);
  std::vector<eval::Triplet> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    eval::Triplet t;
    if (!(ss >> t.i)) continue;
    std::string rest;
    require(static_cast<bool>(ss >> t.j >> t.k >> t.choice) && !(ss >> rest), ErrorKind::invalid_argument,
            path + ":" + std::to_string(lineno) + ": expected 'i j k choice'");
    out.push_back(t);
  }
  return out;
}

namespace detail {

inline std::vector<Index> labels_for(const EmbeddingSet& set, const std::string& kind) {
  return kind == "superclass" ? superclass_labels(set) : set.category_indices();
}

/// The row categories of `a` and `b` as indices into one shared category list.
inline std::pair<std::vector<Index>, std::vector<Index>> joint_labels(const EmbeddingSet& a, const EmbeddingSet& b) {
  std::map<std::string, Index> ids;
  auto index = [&ids](const EmbeddingSet& s) {
    std::vector<Index> out;
    for (const auto& c : s.category_ids) out.push_back(ids.emplace(c, static_cast<Index>(ids.size())).first->second);
    return out;
  };
  auto la = index(a);
  auto lb = index(b);
  return {la, lb};
}

inline json run_task(const EvalTask& t, std::size_t index, const Datasets& data,
                     const std::optional<align::AlignmentModel>& model, std::uint64_t seed, Report& report) {
  const std::string path = "eval.tasks[" + std::to_string(index) + "]";
  const bool aligned = t.space == "aligned" || (t.space == "auto" && model.has_value());
  require(!aligned || model.has_value(), ErrorKind::config, path + ".space: aligned needs --checkpoint");
  auto view = [&](const std::string& name) {
    EmbeddingSet s = data.get(name);
    if (aligned) {
      const bool image_side = name == "x" || name == "heldout_x";
      s.matrix = image_side ? align::encode_image(*model, s.matrix) : align::encode_signal(*model, s.matrix);
    }
    return s;
  };
  const std::uint64_t task_seed = structure::mix_seed(seed, 0x7A5C0000ULL + index);
  const EmbeddingSet set = view(t.set);
  json m{{"kind", t.kind}, {"set", t.set}, {"space", aligned ? "aligned" : "raw"}};
  eval::ProbeOptions po;
  po.trials = t.trials;
  po.seed = task_seed;
  po.logistic.l2 = t.l2;

  if (t.kind == "silhouette") {
    m["labels"] = t.labels;
    m["value"] = eval::silhouette(set.matrix, labels_for(set, t.labels));
  } else if (t.kind == "rdm") {
    const auto rdm = eval::compute_rdm(set.matrix, t.n_components);
    m["components_used"] = rdm.components_used;
    m["components_reduced"] = rdm.components_reduced;
    m["matrix"] = report.matrix(t.name + "_rdm", rdm.values, set.instance_ids);
  } else if (t.kind == "csm") {
    auto csm = eval::compute_csm(set);
    std::vector<std::string> order;
    for (Index i : eval::cluster_order(csm)) order.push_back(csm.labels[static_cast<std::size_t>(i)]);
    m["cluster_order"] = order;
    m["matrix"] = report.matrix(t.name + "_csm", csm.values, csm.labels);
  } else if (t.kind == "taxonomy_rsa") {
    require(std::filesystem::exists(t.path), ErrorKind::not_found, path + ".path: no such file " + t.path);
    const auto csm = eval::compute_csm(set);
    const auto tax = eval::taxonomy_csm(eval::load_taxonomy(t.path), csm.labels);
    m["pearson_matrixwise"] = eval::pearson(csm.values, tax.values, eval::PearsonMode::matrixwise);
    m["pearson_rowwise"] = eval::pearson(csm.values, tax.values, eval::PearsonMode::rowwise);
    m["matrix"] = report.matrix(t.name + "_csm", csm.values, csm.labels);
    m["taxonomy_matrix"] = report.matrix(t.name + "_taxonomy", tax.values, tax.labels);
  } else if (t.kind == "one_shot") {
    const auto r = eval::one_shot_probe(set.matrix, labels_for(set, t.labels), po);
    m["labels"] = t.labels;
    m["accuracy"] = r.accuracy;
    m["trials"] = r.n_trials;
  } else if (t.kind == "ood") {
    std::vector<std::string> known = t.train_categories;
    if (known.empty()) {
      std::set<std::string> supers;
      for (const auto& c : set.categories()) {
        if (supers.insert(synth::superclass_of(c)).second) known.push_back(c);
        if (known.size() == 2) break;
      }
      require(known.size() == 2, ErrorKind::invalid_argument, path + ": ood needs categories from two superclasses");
    }
    const std::string s0 = synth::superclass_of(known[0]);
    const std::string s1 = synth::superclass_of(known[1]);
    require(s0 != s1, ErrorKind::invalid_argument, path + ".train_categories: both lie in superclass " + s0);
    std::vector<Index> train_rows, train_class, train_target, test_rows, test_target;
    for (Index r = 0; r < set.size(); ++r) {
      const auto& c = set.category_ids[static_cast<std::size_t>(r)];
      const std::string s = synth::superclass_of(c);
      if (s != s0 && s != s1) continue;
      const Index target = s == s0 ? 0 : 1;
      if (c == known[0] || c == known[1]) {
        train_rows.push_back(r);
        train_class.push_back(c == known[0] ? 0 : 1);
        train_target.push_back(target);
      } else {
        test_rows.push_back(r);
        test_target.push_back(target);
      }
    }
    require(!train_rows.empty() && !test_rows.empty(), ErrorKind::invalid_argument,
            path + ": ood needs training rows and unseen test rows");
    const auto r = eval::ood_probe(eval::take_rows(set.matrix, train_rows), train_class, train_target,
                                   eval::take_rows(set.matrix, test_rows), test_target, t.per_class, po);
    m["train_categories"] = known;
    m["accuracy"] = r.accuracy;
    m["trials"] = r.n_trials;
  } else if (t.kind == "triplet") {
    const auto r = eval::triplet_odd_one_out(set.matrix, load_triplets(t.path));
    m["accuracy"] = r.accuracy;
    m["triplets"] = r.n_trials;
  } else if (t.kind == "retrieval") {
    const EmbeddingSet gallery = view(t.gallery);
    const auto [qc, gc] = joint_labels(set, gallery);
    eval::RetrievalOptions ro;
    ro.n = t.n;
    ro.trials = t.trials;
    ro.top_k = t.top_k;
    ro.distinct_categories = t.distinct_categories;
    ro.seed = task_seed;
    const auto r = eval::nway_retrieval(set.matrix, qc, gallery.matrix, gc, ro);
    m["gallery"] = t.gallery;
    m["n"] = t.n;
    m["accuracy"] = r.accuracy;
    m["trials"] = r.n_trials;
  } else if (t.kind == "manifold") {
    const auto pca = eval::pca_fit(set.matrix, 2);
    const auto r = eval::manifold_consistency(pca, set.matrix, set.category_indices(), t.n_samples, t.range_lo,
                                              t.range_hi, task_seed);
    m["accuracy"] = r.accuracy;
    m["mean_cosine_to_truth"] = r.mean_cosine_to_truth;
    m["samples"] = r.n_samples;
  } else if (t.kind == "gw") {
    const EmbeddingSet gallery = view(t.gallery);
    const auto cats = set.categories();
    const auto k = static_cast<Index>(cats.size());
    const Matrix cx = ot::self_similarity(eval::centroids(set.matrix, set.category_indices(cats), k));
    const Matrix cy = ot::self_similarity(eval::centroids(gallery.matrix, gallery.category_indices(cats), k));
    m["gallery"] = t.gallery;
    m["value"] = align::structural_gw(cx, cy);
  } else {
    throw Error(ErrorKind::config, path + ".kind: unknown task kind '" + t.kind + "'");
  }
  return m;
}

}  // namespace detail

/// Runs every configured task; zero tasks still yields a valid (config-only) report.
inline json run_eval(const ExperimentConfig& cfg, const Datasets& data, Report& report) {
  std::optional<align::AlignmentModel> model;
  if (!cfg.checkpoint.empty()) {
    require(std::filesystem::exists(cfg.checkpoint), ErrorKind::not_found, "checkpoint: no such file " + cfg.checkpoint);
    model = load_checkpoint(cfg.checkpoint);
    require(model->image_encoder.input_dim() == data.x.dim() && model->signal_encoder.input_dim() == data.y.dim(),
            ErrorKind::shape_mismatch, "checkpoint dimensions do not match the data");
  }
  json results = json::object();
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    const EvalTask& t = cfg.tasks[i];
    json m = detail::run_task(t, i, data, model, cfg.seed, report);
    report.record(static_cast<long>(i), t.name, m);
    results[t.name] = m;
  }
  return results;
}

}  // namespace brainloop::experiment
