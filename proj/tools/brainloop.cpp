#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "brainloop/experiment/checkpoint.hpp"
#include "brainloop/experiment/config.hpp"
#include "brainloop/experiment/embd_io.hpp"
#include "brainloop/experiment/report.hpp"
#include "brainloop/experiment/runner.hpp"
#include "brainloop/ot/gromov.hpp"
#include "brainloop/ot/sinkhorn.hpp"

namespace {

using namespace brainloop;
using nlohmann::json;
namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
};

experiment::ExperimentConfig resolve(const CommonFlags& f) {
  experiment::ExperimentConfig cfg = f.config.empty() ? experiment::ExperimentConfig{} : experiment::load_config(f.config);
  if (f.seed) cfg.apply_seed(*f.seed);
  if (!f.out.empty()) cfg.output_dir = f.out;
  return cfg;
}

void print(const json& j) { std::cout << j.dump() << std::endl; }

void cmd_synth(const CommonFlags& f) {
  const auto cfg = resolve(f);
  auto data = synth::isomorphic_clusters(cfg.data.synth);
  fs::create_directories(cfg.output_dir);
  json files;
  for (auto [name, set] : {std::pair<const char*, const EmbeddingSet*>{"x", &data.x},
                           {"y", &data.y},
                           {"heldout_x", &data.heldout_x},
                           {"heldout_y", &data.heldout_y}}) {
    const std::string path = (fs::path(cfg.output_dir) / (std::string(name) + ".embd")).string();
    io::save_embeddings(*set, path);
    files[name] = {{"path", path}, {"count", set->size()}, {"dim", set->dim()}};
  }
  print({{"command", "synth"}, {"seed", cfg.seed}, {"files", files}});
}

void cmd_align(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto data = experiment::load_data(cfg.data);
  experiment::Report report(cfg.output_dir, experiment::to_json(cfg), cfg.seed);
  auto run = experiment::run_align(cfg, data, &report);
  const std::string ckpt =
      f.checkpoint.empty() ? (fs::path(cfg.output_dir) / "checkpoint.bin").string() : f.checkpoint;
  experiment::save_checkpoint(run.model, ckpt);
  print({{"command", "align"},
         {"seed", cfg.seed},
         {"run_id", report.run_id()},
         {"report", (fs::path(cfg.output_dir) / "report.jsonl").string()},
         {"checkpoint", ckpt},
         {"summary", experiment::summarize_run(run)}});
}

void cmd_eval(const CommonFlags& f) {
  auto cfg = resolve(f);
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  const auto data = experiment::load_data(cfg.data);
  experiment::Report report(cfg.output_dir, experiment::to_json(cfg), cfg.seed);
  const json results = experiment::run_eval(cfg, data, report);
  print({{"command", "eval"},
         {"seed", cfg.seed},
         {"run_id", report.run_id()},
         {"report", (fs::path(cfg.output_dir) / "report.jsonl").string()},
         {"results", results}});
}

struct OtFlags {
  std::string x;
  std::string y;
  double epsilon = 1.0;
  int iterations = 100;
  bool centroids = false;
  bool plan = false;
};

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Matrix structure_of(const EmbeddingSet& set, bool centroids) {
  if (!centroids) return ot::self_similarity(set.matrix);
  const auto cats = set.categories();
  return ot::self_similarity(
      eval::centroids(set.matrix, set.category_indices(cats), static_cast<Index>(cats.size())));
}

void cmd_sinkhorn(const OtFlags& o) {
  const auto x = io::load_embeddings(o.x);
  const auto y = io::load_embeddings(o.y);
  const ot::TransportProblem problem{ot::cosine_cost_matrix(x.matrix, y.matrix), uniform_weights(x.size()),
                                     uniform_weights(y.size()), o.epsilon};
  const auto plan = ot::sinkhorn(problem, ot::SinkhornOptions{o.iterations, 0});
  json out{{"command", "ot sinkhorn"},
           {"epsilon", o.epsilon},
           {"iterations", o.iterations},
           {"cost", plan.value},
           {"marginal_residual", plan.marginal_residual}};
  if (o.plan) out["plan"] = matrix_json(plan.plan);
  print(out);
}

void cmd_gw(const OtFlags& o) {
  const auto x = io::load_embeddings(o.x);
  const auto y = io::load_embeddings(o.y);
  ot::GwOptions g;
  g.epsilon = o.epsilon;
  g.outer_iterations = o.iterations;
  const auto r = ot::entropic_gw(structure_of(x, o.centroids), structure_of(y, o.centroids), g);
  json out{{"command", "ot gw"}, {"epsilon", o.epsilon}, {"outer_iterations", o.iterations}, {"distance", r.distance}};
  if (o.plan) out["plan"] = matrix_json(r.plan.plan);
  print(out);
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool checkpoint) {
  cmd->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "overrides the config seed");
  cmd->add_option("--out", f.out, "output directory");
  if (checkpoint) cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"brainloop: structural alignment of embedding spaces"};
  app.require_subcommand(1);
  CommonFlags common;
  OtFlags ot_flags;

  auto* synth_cmd = app.add_subcommand("synth", "write the synthetic benchmark as EMBD files");
  add_common(synth_cmd, common, false);
  auto* align_cmd = app.add_subcommand("align", "train the alignment model and track GW per epoch");
  add_common(align_cmd, common, true);
  auto* eval_cmd = app.add_subcommand("eval", "run evaluation tasks on raw or aligned embeddings");
  add_common(eval_cmd, common, true);
  auto* ot_cmd = app.add_subcommand("ot", "optimal transport solvers");
  ot_cmd->require_subcommand(1);
  auto* sink_cmd = ot_cmd->add_subcommand("sinkhorn", "entropic OT between two EMBD files (cosine cost)");
  auto* gw_cmd = ot_cmd->add_subcommand("gw", "entropic GW between the self-similarities of two EMBD files");
  for (auto* cmd : {sink_cmd, gw_cmd}) {
    cmd->add_option("--x", ot_flags.x, "first EMBD file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--y", ot_flags.y, "second EMBD file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--epsilon", ot_flags.epsilon, "entropic regularization");
    cmd->add_option("--iterations", ot_flags.iterations, "Sinkhorn iterations or GW outer iterations");
    cmd->add_flag("--plan", ot_flags.plan, "print the coupling");
  }
  gw_cmd->add_flag("--centroids", ot_flags.centroids, "compare category-centroid structures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*synth_cmd) cmd_synth(common);
    if (*align_cmd) cmd_align(common);
    if (*eval_cmd) cmd_eval(common);
    if (*sink_cmd) cmd_sinkhorn(ot_flags);
    if (*gw_cmd) cmd_gw(ot_flags);
  } catch (const Error& e) {
    return fail(std::string(to_string(e.kind())), e.what(), e.kind() == ErrorKind::config ? 2 : 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
