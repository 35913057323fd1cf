#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "brainloop/alignment/config.hpp"
#include "brainloop/alignment/encoder.hpp"
#include "brainloop/alignment/refiner.hpp"
#include "brainloop/autodiff/adam.hpp"
#include "brainloop/structure/sampler.hpp"

namespace brainloop::align {

/// Parameters of both encoders and the refiner, with optimizer state.
struct AlignmentModel {
  AlignmentConfig config;
  Mlp image_encoder;
  Mlp signal_encoder;
  Refiner refiner;
  std::vector<ad::AdamState> adam;
  std::vector<bool> grad_seen;  ///< parameter received a nonzero gradient at least once
  long step_counter = 0;

  std::vector<ad::Tensor*> parameters() {
    std::vector<ad::Tensor*> out;
    for (Mlp* m : {&image_encoder, &signal_encoder}) {
      for (auto& w : m->weights) out.push_back(&w);
      for (auto& b : m->biases) out.push_back(&b);
    }
    for (auto* list : {&refiner.self_attention, &refiner.cross_attention}) {
      for (auto& a : *list) {
        for (ad::Tensor* t : {&a.wq, &a.wk, &a.wv, &a.wo}) out.push_back(t);
      }
    }
    return out;
  }

  [[nodiscard]] std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    auto mlp_names = [&out](const Mlp& m, const std::string& prefix) {
      for (std::size_t l = 0; l < m.weights.size(); ++l) out.push_back(prefix + ".w" + std::to_string(l));
      for (std::size_t l = 0; l < m.biases.size(); ++l) out.push_back(prefix + ".b" + std::to_string(l));
    };
    mlp_names(image_encoder, "image");
    mlp_names(signal_encoder, "signal");
    for (const char* kind : {"self", "cross"}) {
      for (int l = 0; l < refiner.spec.layers; ++l) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) {
          out.push_back(std::string("refiner.") + kind + std::to_string(l) + "." + w);
        }
      }
    }
    return out;
  }

  [[nodiscard]] bool all_finite() {
    for (ad::Tensor* t : parameters()) {
      if (!t->all_finite()) return false;
    }
    return true;
  }
};

/// Sets every Adam learning rate to factor * lr, with the signal encoder scaled by signal_lr_scale.
inline void set_learning_rate(AlignmentModel& model, double factor) {
  const std::size_t image = model.image_encoder.weights.size() + model.image_encoder.biases.size();
  const std::size_t signal = model.signal_encoder.weights.size() + model.signal_encoder.biases.size();
  for (std::size_t i = 0; i < model.adam.size(); ++i) {
    const bool is_signal = i >= image && i < image + signal;
    model.adam[i].options.lr = factor * model.config.lr * (is_signal ? model.config.signal_lr_scale : 1.0);
  }
}

inline double warmup_factor(const AlignmentConfig& config, int epoch) {
  if (config.warmup_epochs <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch + 1) / config.warmup_epochs);
}

inline AlignmentModel make_model(Index image_dim, Index signal_dim, const AlignmentConfig& config) {
  config.validate();
  AlignmentModel model;
  model.config = config;
  Rng rng(structure::mix_seed(config.seed, 0x5EED));
  model.image_encoder = make_mlp(image_dim, config.image_encoder, rng);
  model.signal_encoder = make_mlp(signal_dim, config.signal_encoder, rng);
  model.refiner = make_refiner(config.image_encoder.output_dim, config.refiner, rng);
  const ad::AdamOptions options{config.lr, config.beta1, config.beta2, 1e-8};
  for (ad::Tensor* p : model.parameters()) model.adam.push_back(ad::make_adam_state(*p, options));
  model.grad_seen.assign(model.adam.size(), false);
  set_learning_rate(model, 1.0);
  return model;
}

/// Tape leaves for every parameter; `flat` follows AlignmentModel::parameters().
struct ModelVars {
  MlpVars image;
  MlpVars signal;
  RefinerVars refiner;
  std::vector<ad::Var> flat;
};

inline ModelVars bind(ad::Tape& tape, AlignmentModel& model) {
  ModelVars v;
  v.image = bind(tape, model.image_encoder);
  v.signal = bind(tape, model.signal_encoder);
  v.refiner = bind(tape, model.refiner);
  for (const MlpVars* m : {&v.image, &v.signal}) {
    v.flat.insert(v.flat.end(), m->weights.begin(), m->weights.end());
    v.flat.insert(v.flat.end(), m->biases.begin(), m->biases.end());
  }
  for (const auto* list : {&v.refiner.self_attention, &v.refiner.cross_attention}) {
    for (const auto& a : *list) v.flat.insert(v.flat.end(), {a.wq, a.wk, a.wv, a.wo});
  }
  return v;
}

/// Adam update of every parameter the last backward() reached.
inline void apply_gradients(AlignmentModel& model, const ad::Tape& tape, const ModelVars& vars) {
  std::vector<ad::Tensor*> params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!tape.has_grad(vars.flat[i])) continue;
    const ad::Tensor g = tape.grad(vars.flat[i]);
    if (g.matrix().cwiseAbs().maxCoeff() > 0.0) model.grad_seen[i] = true;
    ad::adam_step(*params[i], g, model.adam[i]);
  }
  ++model.step_counter;
  require(model.all_finite(), ErrorKind::numeric, "non-finite parameter after optimizer step");
}

}  // namespace brainloop::align
