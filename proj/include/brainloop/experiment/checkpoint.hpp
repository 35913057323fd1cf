#pragma once

#include <nlohmann/json.hpp>

#include <string>

#include "brainloop/alignment/model.hpp"
#include "brainloop/experiment/config.hpp"
#include "brainloop/experiment/embd_io.hpp"

namespace brainloop::experiment {

inline constexpr std::array<char, 4> kCheckpointMagic{'B', 'L', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Layout (little-endian): "BLCK", u16 version, u16 flags, u32 header length,
/// JSON header (config, dims, parameter names and shapes), then per parameter
/// its values, Adam first and second moments as row-major f64.
inline std::vector<unsigned char> encode_checkpoint(align::AlignmentModel& model) {
  json params = json::array();
  std::vector<ad::Tensor*> tensors = model.parameters();
  const auto names = model.parameter_names();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    params.push_back({{"name", names[i]},
                      {"rows", tensors[i]->rows()},
                      {"cols", tensors[i]->cols()},
                      {"adam_steps", model.adam[i].step_count},
                      {"lr", model.adam[i].options.lr},
                      {"grad_seen", static_cast<bool>(model.grad_seen[i])}});
  }
  const json header{{"alignment", detail::write_alignment(model.config)},
                    {"seed", model.config.seed},
                    {"image_dim", model.image_encoder.input_dim()},
                    {"signal_dim", model.signal_encoder.input_dim()},
                    {"step_counter", model.step_counter},
                    {"parameters", params}};
  const std::string text = header.dump();
  io::detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), 4);
  w.le(kCheckpointVersion);
  w.le(std::uint16_t{0});
  w.le(static_cast<std::uint32_t>(text.size()));
  w.raw(text.data(), text.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    for (const Matrix* m : {&tensors[i]->matrix(), &model.adam[i].m, &model.adam[i].v}) {
      for (Index r = 0; r < m->rows(); ++r) {
        for (Index c = 0; c < m->cols(); ++c) w.f64((*m)(r, c));
      }
    }
  }
  return w.bytes();
}

inline align::AlignmentModel decode_checkpoint(const std::vector<unsigned char>& bytes,
                                               const std::string& source = "<memory>") {
  io::detail::ByteReader r(bytes, source);
  const std::string magic = r.str(4, "magic");
  require(std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin()), ErrorKind::bad_magic,
          source + ": bad magic, not a checkpoint");
  const auto version = r.le<std::uint16_t>("version");
  require(version == kCheckpointVersion, ErrorKind::version_mismatch,
          source + ": unsupported checkpoint version " + std::to_string(version));
  r.le<std::uint16_t>("flags");
  const auto len = r.le<std::uint32_t>("header length");
  json header;
  try {
    header = json::parse(r.str(len, "header"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_argument, source + ": malformed checkpoint header: " + e.what());
  }
  align::AlignmentConfig cfg;
  detail::read_alignment(header.at("alignment"), "checkpoint.alignment", cfg);
  cfg.seed = header.at("seed").get<std::uint64_t>();
  align::AlignmentModel model =
      align::make_model(header.at("image_dim").get<Index>(), header.at("signal_dim").get<Index>(), cfg);
  model.step_counter = header.at("step_counter").get<long>();
  std::vector<ad::Tensor*> tensors = model.parameters();
  const auto names = model.parameter_names();
  const json& params = header.at("parameters");
  require(params.size() == tensors.size(), ErrorKind::shape_mismatch, source + ": parameter count differs");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const json& p = params[i];
    require(p.at("name").get<std::string>() == names[i] && p.at("rows").get<Index>() == tensors[i]->rows() &&
                p.at("cols").get<Index>() == tensors[i]->cols(),
            ErrorKind::shape_mismatch, source + ": parameter " + names[i] + " does not match the model");
    model.adam[i].step_count = p.at("adam_steps").get<long>();
    model.adam[i].options.lr = p.at("lr").get<double>();
    model.grad_seen[i] = p.at("grad_seen").get<bool>();
    for (Matrix* m : {&tensors[i]->matrix(), &model.adam[i].m, &model.adam[i].v}) {
      for (Index row = 0; row < m->rows(); ++row) {
        for (Index c = 0; c < m->cols(); ++c) (*m)(row, c) = r.f64("parameters");
      }
    }
  }
  require(r.remaining() == 0, ErrorKind::invalid_argument, source + ": trailing bytes after parameters");
  require(model.all_finite(), ErrorKind::non_finite_value, source + ": non-finite parameter");
  return model;
}

inline void save_checkpoint(align::AlignmentModel& model, const std::string& path) {
  io::detail::write_file(path, encode_checkpoint(model));
}

inline align::AlignmentModel load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::detail::read_file(path), path);
}

}  // namespace brainloop::experiment
