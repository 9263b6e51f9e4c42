#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "coach/detail/binary_io.hpp"
#include "coach/error.hpp"
#include "coach/textenc/vocabulary.hpp"

namespace coach::textenc {

// Row-major input (center) and output (context) vectors, one row per token.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), in_(rows * dim), out_(rows * dim) {
    if (dim == 0) throw ConfigError("embedding dim must be >= 1");
  }

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }

  std::span<double> input(std::size_t row) { return {in_.data() + row * dim_, dim_}; }
  std::span<const double> input(std::size_t row) const { return {in_.data() + row * dim_, dim_}; }
  std::span<double> output(std::size_t row) { return {out_.data() + row * dim_, dim_}; }
  std::span<const double> output(std::size_t row) const { return {out_.data() + row * dim_, dim_}; }

  const std::vector<double>& input_data() const { return in_; }
  const std::vector<double>& output_data() const { return out_; }

  bool all_finite() const {
    for (double x : in_)
      if (!std::isfinite(x)) return false;
    for (double x : out_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> in_;
  std::vector<double> out_;
};

// Everything needed to turn text into vectors.
struct Encoder {
  Vocabulary vocab;
  EmbeddingMatrix emb;

  std::size_t dim() const { return emb.dim(); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Cosine similarity; 0 when either vector has zero norm.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ContractViolation("cosine: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

struct TextEmbedding {
  std::vector<double> vector;
  bool oov = false;  // no token was in vocabulary; vector is all zeros
  std::size_t known_tokens = 0;
};

// L2-normalized mean of the input vectors of in-vocabulary tokens.
inline TextEmbedding embed_text(std::string_view text, const EmbeddingMatrix& emb, const Vocabulary& vocab) {
  TextEmbedding out;
  out.vector.assign(emb.dim(), 0.0);
  const auto ids = vocab.encode(text);
  out.known_tokens = ids.size();
  if (ids.empty()) {
    out.oov = true;
    return out;
  }
  for (auto id : ids) {
    const auto row = emb.input(id);
    for (std::size_t k = 0; k < row.size(); ++k) out.vector[k] += row[k];
  }
  for (auto& x : out.vector) x /= static_cast<double>(ids.size());
  const double n = norm(out.vector);
  if (n == 0.0) {
    out.oov = true;
    return out;
  }
  for (auto& x : out.vector) x /= n;
  return out;
}

inline TextEmbedding embed_text(std::string_view text, const Encoder& enc) { return embed_text(text, enc.emb, enc.vocab); }

// ---------------------------------------------------------------------------
// Persistence: header {magic, version, dim, vocab_size, min_count}, then the
// vocabulary as (length-prefixed token, u64 frequency) in id order, then the
// input and output matrices as row-major little-endian f64.

inline constexpr std::uint32_t kEmbeddingMagic = 0x424D4543;  // "CEMB"
inline constexpr std::uint32_t kEmbeddingVersion = 1;

inline void save_encoder(std::ostream& out, const Encoder& enc) {
  if (enc.vocab.size() != enc.emb.rows()) throw ContractViolation("vocabulary size does not match embedding rows");
  coach::detail::write_u32(out, kEmbeddingMagic);
  coach::detail::write_u32(out, kEmbeddingVersion);
  coach::detail::write_u64(out, enc.emb.dim());
  coach::detail::write_u64(out, enc.vocab.size());
  coach::detail::write_u64(out, enc.vocab.min_count());
  for (std::size_t i = 0; i < enc.vocab.size(); ++i) {
    coach::detail::write_string(out, enc.vocab.token(i));
    coach::detail::write_u64(out, enc.vocab.frequency(i));
  }
  for (double x : enc.emb.input_data()) coach::detail::write_f64(out, x);
  for (double x : enc.emb.output_data()) coach::detail::write_f64(out, x);
}

inline Encoder load_encoder(std::istream& in) {
  if (coach::detail::read_u32(in) != kEmbeddingMagic) throw IoError("not an embedding file (bad magic)");
  if (const auto v = coach::detail::read_u32(in); v != kEmbeddingVersion)
    throw IoError("unsupported embedding file version " + std::to_string(v));
  const auto dim = coach::detail::read_u64(in);
  const auto rows = coach::detail::read_u64(in);
  const auto min_count = coach::detail::read_u64(in);
  if (dim == 0 || dim > (1u << 16)) throw IoError("embedding dim out of range");
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  entries.reserve(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    auto tok = coach::detail::read_string(in);
    const auto freq = coach::detail::read_u64(in);
    entries.emplace_back(std::move(tok), freq);
  }
  Encoder enc{Vocabulary::from_ordered(std::move(entries), min_count), EmbeddingMatrix(rows, dim)};
  for (std::size_t r = 0; r < rows; ++r)
    for (auto& x : enc.emb.input(r)) x = coach::detail::read_f64(in);
  for (std::size_t r = 0; r < rows; ++r)
    for (auto& x : enc.emb.output(r)) x = coach::detail::read_f64(in);
  return enc;
}

inline void save_encoder(const std::string& path, const Encoder& enc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  save_encoder(out, enc);
}

inline Encoder load_encoder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return load_encoder(in);
}

}  // namespace coach::textenc
