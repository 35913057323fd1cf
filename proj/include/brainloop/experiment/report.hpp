#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "brainloop/experiment/embd_io.hpp"

namespace brainloop::experiment {

using nlohmann::json;

/// FNV-1a, used for run ids that depend only on the config.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex_id(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Little-endian float64 .npy (format 1.0) bytes for a row-major matrix.
inline std::vector<unsigned char> encode_npy(const Matrix& m) {
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + std::to_string(m.rows()) + ", " +
                       std::to_string(m.cols()) + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  io::detail::ByteWriter w;
  const char magic[] = "\x93NUMPY";
  w.raw(magic, 6);
  w.raw("\x01\x00", 2);
  w.le(static_cast<std::uint16_t>(header.size()));
  w.raw(header.data(), header.size());
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
  }
  return w.bytes();
}

/// Line-delimited JSON report. Every record carries run_id, seed and step;
/// matrices go to .npy sidecars next to the report and are referenced by file name.
class Report {
 public:
  Report(const std::string& dir, const json& config_snapshot, std::uint64_t seed)
      : dir_(dir), seed_(seed), run_id_(hex_id(fnv1a(config_snapshot.dump()))) {
    std::filesystem::create_directories(dir_);
    out_.open(std::filesystem::path(dir_) / "report.jsonl", std::ios::trunc);
    require(out_.good(), ErrorKind::io, "cannot write report in " + dir_);
    write(json{{"run_id", run_id_}, {"seed", seed_}, {"step", 0}, {"kind", "config"}, {"config", config_snapshot}});
  }

  void record(long step, const std::string& kind, const json& metrics) {
    write(json{{"run_id", run_id_}, {"seed", seed_}, {"step", step}, {"kind", kind}, {"metrics", metrics}});
  }

  /// Writes `<name>.npy` and returns the reference stored in the record.
  json matrix(const std::string& name, const Matrix& m, const std::vector<std::string>& labels = {}) {
    const std::string file = name + ".npy";
    io::detail::write_file((std::filesystem::path(dir_) / file).string(), encode_npy(m));
    json ref{{"path", file}, {"rows", m.rows()}, {"cols", m.cols()}};
    if (!labels.empty()) ref["labels"] = labels;
    return ref;
  }

  [[nodiscard]] const std::string& run_id() const { return run_id_; }
  [[nodiscard]] const std::string& dir() const { return dir_; }
  [[nodiscard]] const std::vector<json>& records() const { return records_; }

 private:
  void write(const json& line) {
    out_ << line.dump() << '\n';
    out_.flush();
    require(out_.good(), ErrorKind::io, "report write failed in " + dir_);
    records_.push_back(line);
  }

  std::string dir_;
  std::uint64_t seed_;
  std::string run_id_;
  std::ofstream out_;
  std::vector<json> records_;
};

}  // namespace brainloop::experiment
