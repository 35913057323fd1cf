#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "brainloop/alignment/config.hpp"
#include "brainloop/experiment/synth.hpp"

namespace brainloop::experiment {

using nlohmann::json;

struct DataConfig {
  std::string source = "synth";  ///< "synth" or "files"
  synth::SynthOptions synth;
  std::string x;  ///< EMBD paths, used when source == "files"
  std::string y;
  std::string heldout_x;
  std::string heldout_y;
};

/// One evaluation task. Which fields apply depends on `kind`; see task_keys().
struct EvalTask {
  std::string kind;
  std::string name;                 ///< record key, defaults to kind
  std::string set = "heldout_x";    ///< x, y, heldout_x or heldout_y
  std::string gallery = "heldout_y";
  std::string space = "auto";       ///< raw, aligned, or aligned when a checkpoint is given
  std::string labels = "category";  ///< category or superclass
  std::string path;                 ///< taxonomy edge list or triplet file
  std::vector<std::string> train_categories;
  int trials = 100;
  int n = 10;
  int top_k = 1;
  bool distinct_categories = false;
  int per_class = 5;
  int n_components = 8;
  int n_samples = 1000;
  double range_lo = -5.0;
  double range_hi = 5.0;
  double l2 = 1.0;
};

/// Training settings of the synthetic benchmark; the defaults of ExperimentConfig.
inline align::AlignmentConfig benchmark_alignment() {
  align::AlignmentConfig a;
  a.lr = 2e-4;
  a.epochs = 150;
  a.warmup_epochs = 100;
  a.batch_size = 100;
  a.lambda2 = 1000.0;
  a.signal_lr_scale = 0.1;
  a.reshuffle_each_epoch = true;
  a.refiner.layers = 1;
  return a;
}

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  align::AlignmentConfig alignment = benchmark_alignment();
  std::vector<EvalTask> tasks;
  std::string output_dir = "out";
  std::string checkpoint;  ///< eval: model to encode with; empty means raw embeddings
  bool track_probes = true;  ///< align: held-out silhouette and superclass one-shot per epoch

  /// The top-level seed drives data generation, training and evaluation.
  void apply_seed(std::uint64_t s) {
    seed = s;
    alignment.seed = s;
    data.synth.seed = s;
  }
};

namespace detail {

/// Strict object reader: every key must be consumed, type errors name the field path.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j.is_object(), ErrorKind::config, where() + ": expected an object");
  }

  [[nodiscard]] std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, int& out) { if (const json* v = find(key)) out = as_int(*v, child(key)); }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      require(v->is_number(), ErrorKind::config, child(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      require(v->is_boolean(), ErrorKind::config, child(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      require(v->is_string(), ErrorKind::config, child(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      require(v->is_number_unsigned(), ErrorKind::config, child(key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      require(v->is_array(), ErrorKind::config, child(key) + ": expected an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_int((*v)[i], child(key) + "[" + std::to_string(i) + "]"));
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      require(v->is_array(), ErrorKind::config, child(key) + ": expected an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        require((*v)[i].is_string(), ErrorKind::config, child(key) + "[" + std::to_string(i) + "]: expected a string");
        out.push_back((*v)[i].get<std::string>());
      }
    }
  }

  /// Rejects keys that were never asked for, or that are outside `allowed` when given.
  void finish(const std::set<std::string>* allowed = nullptr) const {
    for (const auto& item : j_.items()) {
      const bool known = used_.count(item.key()) != 0 && (allowed == nullptr || allowed->count(item.key()) != 0);
      require(known, ErrorKind::config, "unknown key '" + child(item.key()) + "'");
    }
  }

 private:
  [[nodiscard]] std::string where() const { return path_.empty() ? "config" : path_; }
  static int as_int(const json& v, const std::string& path) {
    require(v.is_number_integer(), ErrorKind::config, path + ": expected an integer");
    return v.get<int>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline void read_encoder(const json& j, const std::string& path, align::EncoderSpec& e) {
  Fields f(j, path);
  f.get("hidden", e.hidden);
  f.get("output_dim", e.output_dim);
  std::string init = e.init == align::EncoderInit::identity ? "identity" : "random";
  f.get("init", init);
  require(init == "identity" || init == "random", ErrorKind::config, f.child("init") + ": expected identity or random");
  e.init = init == "identity" ? align::EncoderInit::identity : align::EncoderInit::random;
  f.get("init_scale", e.init_scale);
  f.finish();
}

inline json write_encoder(const align::EncoderSpec& e) {
  return {{"hidden", e.hidden},
          {"output_dim", e.output_dim},
          {"init", e.init == align::EncoderInit::identity ? "identity" : "random"},
          {"init_scale", e.init_scale}};
}

inline void read_alignment(const json& j, const std::string& path, align::AlignmentConfig& a) {
  Fields f(j, path);
  f.get("epsilon", a.epsilon);
  f.get("lambda1", a.lambda1);
  f.get("lambda2", a.lambda2);
  f.get("k1", a.k1);
  f.get("k2", a.k2);
  f.get("sinkhorn_iters", a.sinkhorn_iters);
  f.get("lr", a.lr);
  f.get("beta1", a.beta1);
  f.get("beta2", a.beta2);
  f.get("batch_size", a.batch_size);
  f.get("epochs", a.epochs);
  f.get("anchors_per_batch", a.anchors_per_batch);
  f.get("gw_epsilon", a.gw_epsilon);
  f.get("gw_outer_iters", a.gw_outer_iters);
  f.get("detach_plan", a.detach_plan);
  f.get("unroll_gw", a.unroll_gw);
  f.get("gumbel_noise", a.gumbel_noise);
  f.get("signal_lr_scale", a.signal_lr_scale);
  f.get("warmup_epochs", a.warmup_epochs);
  f.get("reshuffle_each_epoch", a.reshuffle_each_epoch);
  f.get("use_loss_w", a.use_loss_w);
  f.get("use_loss_gw", a.use_loss_gw);
  std::string alternation = a.alternation == align::Alternation::per_batch ? "per_batch" : "per_epoch";
  f.get("alternation", alternation);
  require(alternation == "per_batch" || alternation == "per_epoch", ErrorKind::config,
          f.child("alternation") + ": expected per_batch or per_epoch");
  a.alternation = alternation == "per_batch" ? align::Alternation::per_batch : align::Alternation::per_epoch;
  if (const json* v = f.find("image_encoder")) read_encoder(*v, f.child("image_encoder"), a.image_encoder);
  if (const json* v = f.find("signal_encoder")) read_encoder(*v, f.child("signal_encoder"), a.signal_encoder);
  if (const json* v = f.find("refiner")) {
    Fields r(*v, f.child("refiner"));
    r.get("layers", a.refiner.layers);
    r.get("heads", a.refiner.heads);
    r.get("head_dim", a.refiner.head_dim);
    r.finish();
  }
  f.finish();
}

inline json write_alignment(const align::AlignmentConfig& a) {
  return {{"epsilon", a.epsilon},
          {"lambda1", a.lambda1},
          {"lambda2", a.lambda2},
          {"k1", a.k1},
          {"k2", a.k2},
          {"sinkhorn_iters", a.sinkhorn_iters},
          {"lr", a.lr},
          {"beta1", a.beta1},
          {"beta2", a.beta2},
          {"batch_size", a.batch_size},
          {"epochs", a.epochs},
          {"anchors_per_batch", a.anchors_per_batch},
          {"gw_epsilon", a.gw_epsilon},
          {"gw_outer_iters", a.gw_outer_iters},
          {"detach_plan", a.detach_plan},
          {"unroll_gw", a.unroll_gw},
          {"gumbel_noise", a.gumbel_noise},
          {"signal_lr_scale", a.signal_lr_scale},
          {"warmup_epochs", a.warmup_epochs},
          {"reshuffle_each_epoch", a.reshuffle_each_epoch},
          {"use_loss_w", a.use_loss_w},
          {"use_loss_gw", a.use_loss_gw},
          {"alternation", a.alternation == align::Alternation::per_batch ? "per_batch" : "per_epoch"},
          {"image_encoder", write_encoder(a.image_encoder)},
          {"signal_encoder", write_encoder(a.signal_encoder)},
          {"refiner", {{"layers", a.refiner.layers}, {"heads", a.refiner.heads}, {"head_dim", a.refiner.head_dim}}}};
}

inline void read_synth(const json& j, const std::string& path, synth::SynthOptions& s) {
  Fields f(j, path);
  f.get("kind", s.kind);
  f.get("n_categories", s.n_categories);
  f.get("per_category", s.per_category);
  f.get("dim_x", s.dim_x);
  f.get("dim_y", s.dim_y);
  f.get("noise", s.noise);
  f.get("heldout_categories", s.heldout_categories);
  f.get("latent_dim", s.latent_dim);
  f.get("n_superclasses", s.n_superclasses);
  f.get("spread", s.spread);
  f.get("superclass_gain", s.superclass_gain);
  f.get("anisotropy", s.anisotropy);
  f.get("ambient_noise", s.ambient_noise);
  f.get("identical_distortions", s.identical_distortions);
  f.finish();
}

inline json write_synth(const synth::SynthOptions& s) {
  return {{"kind", s.kind},
          {"n_categories", s.n_categories},
          {"per_category", s.per_category},
          {"dim_x", s.dim_x},
          {"dim_y", s.dim_y},
          {"noise", s.noise},
          {"heldout_categories", s.heldout_categories},
          {"latent_dim", s.latent_dim},
          {"n_superclasses", s.n_superclasses},
          {"spread", s.spread},
          {"superclass_gain", s.superclass_gain},
          {"anisotropy", s.anisotropy},
          {"ambient_noise", s.ambient_noise},
          {"identical_distortions", s.identical_distortions}};
}

/// Keys each task kind accepts besides kind and name.
inline const std::set<std::string>& task_keys(const std::string& kind, const std::string& path) {
  static const std::map<std::string, std::set<std::string>> table{
      {"silhouette", {"set", "space", "labels"}},
      {"rdm", {"set", "space", "n_components"}},
      {"csm", {"set", "space"}},
      {"taxonomy_rsa", {"set", "space", "path"}},
      {"one_shot", {"set", "space", "labels", "trials", "l2"}},
      {"ood", {"set", "space", "train_categories", "per_class", "trials", "l2"}},
      {"triplet", {"set", "space", "path"}},
      {"retrieval", {"set", "gallery", "space", "n", "trials", "top_k", "distinct_categories"}},
      {"manifold", {"set", "space", "n_samples", "range_lo", "range_hi"}},
      {"gw", {"set", "gallery", "space"}},
  };
  auto it = table.find(kind);
  require(it != table.end(), ErrorKind::config, path + ".kind: unknown task kind '" + kind + "'");
  return it->second;
}

inline EvalTask read_task(const json& j, const std::string& path) {
  EvalTask t;
  Fields f(j, path);
  f.get("kind", t.kind);
  require(!t.kind.empty(), ErrorKind::config, path + ".kind: missing");
  f.get("name", t.name);
  if (t.name.empty()) t.name = t.kind;
  f.get("set", t.set);
  f.get("gallery", t.gallery);
  f.get("space", t.space);
  f.get("labels", t.labels);
  f.get("path", t.path);
  f.get("train_categories", t.train_categories);
  f.get("trials", t.trials);
  f.get("n", t.n);
  f.get("top_k", t.top_k);
  f.get("distinct_categories", t.distinct_categories);
  f.get("per_class", t.per_class);
  f.get("n_components", t.n_components);
  f.get("n_samples", t.n_samples);
  f.get("range_lo", t.range_lo);
  f.get("range_hi", t.range_hi);
  f.get("l2", t.l2);
  std::set<std::string> allowed = task_keys(t.kind, path);
  allowed.insert({"kind", "name"});
  f.finish(&allowed);
  const std::set<std::string> sets{"x", "y", "heldout_x", "heldout_y"};
  require(sets.count(t.set) != 0, ErrorKind::config, path + ".set: expected x, y, heldout_x or heldout_y");
  require(sets.count(t.gallery) != 0, ErrorKind::config, path + ".gallery: expected x, y, heldout_x or heldout_y");
  require(t.space == "auto" || t.space == "raw" || t.space == "aligned", ErrorKind::config,
          path + ".space: expected auto, raw or aligned");
  require(t.labels == "category" || t.labels == "superclass", ErrorKind::config,
          path + ".labels: expected category or superclass");
  require(t.trials >= 1 && t.n >= 2 && t.top_k >= 1 && t.per_class >= 1 && t.n_components >= 1 && t.n_samples >= 1,
          ErrorKind::config, path + ": trials, n, top_k, per_class, n_components and n_samples must be positive (n >= 2)");
  require(t.range_lo < t.range_hi, ErrorKind::config, path + ": range_lo must be below range_hi");
  require(t.l2 >= 0.0, ErrorKind::config, path + ".l2: must be non-negative");
  require((t.kind != "taxonomy_rsa" && t.kind != "triplet") || !t.path.empty(), ErrorKind::config,
          path + ".path: required for " + t.kind);
  require(t.train_categories.empty() || t.train_categories.size() == 2, ErrorKind::config,
          path + ".train_categories: expected exactly two categories");
  return t;
}

inline json write_task(const EvalTask& t) {
  json out{{"kind", t.kind}, {"name", t.name}};
  const json all{{"set", t.set},
                 {"gallery", t.gallery},
                 {"space", t.space},
                 {"labels", t.labels},
                 {"path", t.path},
                 {"train_categories", t.train_categories},
                 {"trials", t.trials},
                 {"n", t.n},
                 {"top_k", t.top_k},
                 {"distinct_categories", t.distinct_categories},
                 {"per_class", t.per_class},
                 {"n_components", t.n_components},
                 {"n_samples", t.n_samples},
                 {"range_lo", t.range_lo},
                 {"range_hi", t.range_hi},
                 {"l2", t.l2}};
  for (const auto& key : task_keys(t.kind, "task")) out[key] = all.at(key);
  return out;
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json data{{"source", c.data.source}};
  if (c.data.source == "synth") {
    data["synth"] = detail::write_synth(c.data.synth);
  } else {
    data["x"] = c.data.x;
    data["y"] = c.data.y;
    data["heldout_x"] = c.data.heldout_x;
    data["heldout_y"] = c.data.heldout_y;
  }
  json tasks = json::array();
  for (const auto& t : c.tasks) tasks.push_back(detail::write_task(t));
  return {{"seed", c.seed},
          {"data", data},
          {"alignment", detail::write_alignment(c.alignment)},
          {"eval", {{"tasks", tasks}}},
          {"output_dir", c.output_dir},
          {"checkpoint", c.checkpoint},
          {"track_probes", c.track_probes}};
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::Fields f(j, "");
  f.get("seed", c.seed);
  if (const json* d = f.find("data")) {
    detail::Fields df(*d, "data");
    df.get("source", c.data.source);
    require(c.data.source == "synth" || c.data.source == "files", ErrorKind::config,
            "data.source: expected synth or files");
    if (const json* s = df.find("synth")) detail::read_synth(*s, "data.synth", c.data.synth);
    df.get("x", c.data.x);
    df.get("y", c.data.y);
    df.get("heldout_x", c.data.heldout_x);
    df.get("heldout_y", c.data.heldout_y);
    df.finish();
  }
  if (const json* a = f.find("alignment")) detail::read_alignment(*a, "alignment", c.alignment);
  if (const json* e = f.find("eval")) {
    detail::Fields ef(*e, "eval");
    if (const json* tasks = ef.find("tasks")) {
      require(tasks->is_array(), ErrorKind::config, "eval.tasks: expected an array");
      for (std::size_t i = 0; i < tasks->size(); ++i) {
        c.tasks.push_back(detail::read_task((*tasks)[i], "eval.tasks[" + std::to_string(i) + "]"));
      }
    }
    ef.finish();
  }
  f.get("output_dir", c.output_dir);
  f.get("checkpoint", c.checkpoint);
  f.get("track_probes", c.track_probes);
  f.finish();
  c.apply_seed(c.seed);
  c.alignment.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::config, path + ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace brainloop::experiment
