#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "brainloop/embedding_set.hpp"

namespace brainloop::io {

inline constexpr std::array<char, 4> kEmbdMagic{'E', 'M', 'B', 'D'};
inline constexpr std::uint16_t kEmbdVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    le(bits);
  }
  void f64(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    le(bits);
  }
  [[nodiscard]] const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  void need(std::size_t n, const char* what) const {
    require(pos_ + n <= bytes_.size(), ErrorKind::truncated_payload,
            source_ + ": truncated payload while reading " + what);
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  float f32(const char* what) {
    const auto bits = le<std::uint32_t>(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  double f64(const char* what) {
    const auto bits = le<std::uint64_t>(what);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::io, "write failed for " + path);
}

}  // namespace detail

/// Rounds every entry to the nearest float so the set survives the file format unchanged.
inline void round_to_float(EmbeddingSet& set) {
  set.matrix = set.matrix.cast<float>().cast<double>();
}

/// EMBD layout (little-endian): "EMBD", u16 version, u16 flags, u32 count,
/// u32 dim, count*dim f32 row-major, u32 trailer length, UTF-8 JSON trailer.
inline std::vector<unsigned char> encode_embeddings(const EmbeddingSet& set) {
  set.validate();
  detail::ByteWriter w;
  w.raw(kEmbdMagic.data(), 4);
  w.le(kEmbdVersion);
  w.le(std::uint16_t{0});
  w.le(static_cast<std::uint32_t>(set.size()));
  w.le(static_cast<std::uint32_t>(set.dim()));
  for (Index r = 0; r < set.size(); ++r) {
    for (Index c = 0; c < set.dim(); ++c) w.f32(static_cast<float>(set.matrix(r, c)));
  }
  nlohmann::json trailer{{"instance_ids", set.instance_ids}, {"category_ids", set.category_ids}, {"meta", set.meta}};
  const std::string text = trailer.dump();
  w.le(static_cast<std::uint32_t>(text.size()));
  w.raw(text.data(), text.size());
  return w.bytes();
}

inline EmbeddingSet decode_embeddings(const std::vector<unsigned char>& bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  const std::string magic = r.str(4, "magic");
  require(std::equal(magic.begin(), magic.end(), kEmbdMagic.begin()), ErrorKind::bad_magic,
          source + ": bad magic, not an EMBD file");
  const auto version = r.le<std::uint16_t>("version");
  require(version == kEmbdVersion, ErrorKind::version_mismatch,
          source + ": unsupported EMBD version " + std::to_string(version));
  r.le<std::uint16_t>("flags");
  const auto count = r.le<std::uint32_t>("count");
  const auto dim = r.le<std::uint32_t>("dim");
  r.need(static_cast<std::size_t>(count) * dim * 4, "matrix");
  EmbeddingSet set;
  set.matrix.resize(count, dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j) {
      const float f = r.f32("matrix");
      require(std::isfinite(f), ErrorKind::non_finite_value,
              source + ": non-finite value at row " + std::to_string(i) + ", column " + std::to_string(j));
      set.matrix(i, j) = f;
    }
  }
  const auto len = r.le<std::uint32_t>("trailer length");
  const std::string text = r.str(len, "trailer");
  nlohmann::json trailer;
  try {
    trailer = nlohmann::json::parse(text);
    set.instance_ids = trailer.at("instance_ids").get<std::vector<std::string>>();
    set.category_ids = trailer.at("category_ids").get<std::vector<std::string>>();
    if (trailer.contains("meta")) {
      set.meta = trailer["meta"].is_string() ? trailer["meta"].get<std::string>() : trailer["meta"].dump();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_argument, source + ": malformed trailer: " + e.what());
  }
  set.validate();
  return set;
}

inline void save_embeddings(const EmbeddingSet& set, const std::string& path) {
  detail::write_file(path, encode_embeddings(set));
}

inline EmbeddingSet load_embeddings(const std::string& path) {
  return decode_embeddings(detail::read_file(path), path);
}

}  // namespace brainloop::io
