#pragma once

// Vector index over encoded dialogue contexts. Each entry maps a context
// embedding to the customer utterance that followed it in the logs.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "coach/detail/binary_io.hpp"
#include "coach/detail/rng.hpp"
#include "coach/error.hpp"
#include "coach/textenc/embedding.hpp"

namespace coach::vindex {

struct Payload {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::string next_customer_utterance;

  bool operator==(const Payload&) const = default;
};

struct IndexItem {
  std::vector<double> vector;
  Payload payload;
};

struct IndexEntry {
  std::size_t entry_id = 0;
  std::vector<double> vector;
  Payload payload;

  bool operator==(const IndexEntry&) const = default;
};

struct SearchHit {
  std::size_t entry_id = 0;
  double score = 0.0;

  bool operator==(const SearchHit&) const = default;
};

// Random-hyperplane signatures: `bits` hyperplanes per table, buckets probed
// up to Hamming distance `probe_radius` from the query signature. When the
// probed buckets hold fewer than `min_candidates` entries, the pool is topped
// up with the entries whose signatures are closest to the query's summed over
// all tables.
struct LshParams {
  std::size_t bits = 16;
  std::size_t tables = 8;
  std::size_t probe_radius = 1;
  std::size_t min_candidates = 64;

  bool operator==(const LshParams&) const = default;
};

class VectorIndex {
 public:
  VectorIndex() = default;

  static VectorIndex build(std::vector<IndexItem> items, bool approx, std::uint64_t seed, LshParams lsh = {}) {
    VectorIndex idx;
    if (!items.empty()) idx.dim_ = items.front().vector.size();
    idx.entries_.reserve(items.size());
    for (auto& item : items) {
      if (item.vector.size() != idx.dim_)
        throw ContractViolation("build_index: mixed dimensions " + std::to_string(idx.dim_) + " and " +
                                std::to_string(item.vector.size()));
      if (item.payload.next_customer_utterance.empty())
        throw ContractViolation("build_index: empty next_customer_utterance");
      idx.entries_.push_back(IndexEntry{idx.entries_.size(), std::move(item.vector), std::move(item.payload)});
    }
    if (approx) idx.build_lsh(seed, lsh);
    return idx;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t dim() const { return dim_; }
  bool has_approx() const { return approx_.has_value(); }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  const IndexEntry& entry(std::size_t id) const { return entries_.at(id); }

  // Signature of `v` in every table; exposed for determinism checks.
  std::vector<std::uint32_t> signatures(std::span<const double> v) const {
    require_approx();
    std::vector<std::uint32_t> sigs(approx_->params.tables);
    for (std::size_t t = 0; t < sigs.size(); ++t) sigs[t] = signature(t, v);
    return sigs;
  }

  std::uint64_t lsh_seed() const {
    require_approx();
    return approx_->seed;
  }
  const LshParams& lsh_params() const {
    require_approx();
    return approx_->params;
  }

  // Top-k by cosine, descending; ties go to the smaller entry id.
  std::vector<SearchHit> search_exact(std::span<const double> query, std::size_t k) const {
    check_query(query, k);
    std::vector<SearchHit> hits;
    hits.reserve(entries_.size());
    const bool zero = textenc::norm(query) == 0.0;
    for (const auto& e : entries_) hits.push_back({e.entry_id, zero ? 0.0 : textenc::cosine(query, e.vector)});
    return top_k(std::move(hits), k);
  }

  // Exact ranking restricted to the entries sharing a probed bucket with the query.
  std::vector<SearchHit> search_approx(std::span<const double> query, std::size_t k) const {
    require_approx();
    check_query(query, k);
    if (textenc::norm(query) == 0.0) return search_exact(query, k);
    std::vector<SearchHit> hits;
    for (auto id : candidates(query)) hits.push_back({id, textenc::cosine(query, entries_[id].vector)});
    return top_k(std::move(hits), k);
  }

  // Entry ids in the probed buckets plus any top-up, ascending.
  std::vector<std::size_t> candidates(std::span<const double> query) const {
    require_approx();
    std::vector<char> seen(entries_.size(), 0);
    const auto& p = approx_->params;
    for (std::size_t t = 0; t < p.tables; ++t) {
      const auto sig = signature(t, query);
      probe(t, sig, 0, 0, seen);
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < seen.size(); ++i)
      if (seen[i]) out.push_back(i);
    if (out.size() < p.min_candidates && out.size() < entries_.size()) top_up(query, seen, out);
    return out;
  }

  // -- persistence ----------------------------------------------------------

  void save(std::ostream& out) const {
    coach::detail::write_u32(out, kMagic);
    coach::detail::write_u32(out, kVersion);
    coach::detail::write_u64(out, dim_);
    coach::detail::write_u64(out, entries_.size());
    for (const auto& e : entries_) {
      for (double x : e.vector) coach::detail::write_f64(out, x);
      coach::detail::write_string(out, e.payload.dialogue_id);
      coach::detail::write_u64(out, e.payload.turn_index);
      coach::detail::write_string(out, e.payload.next_customer_utterance);
    }
    coach::detail::write_u32(out, approx_ ? 1 : 0);
    if (approx_) {
      coach::detail::write_u64(out, approx_->seed);
      coach::detail::write_u64(out, approx_->params.bits);
      coach::detail::write_u64(out, approx_->params.tables);
      coach::detail::write_u64(out, approx_->params.probe_radius);
      coach::detail::write_u64(out, approx_->params.min_candidates);
      for (double x : approx_->hyperplanes) coach::detail::write_f64(out, x);
    }
  }

  static VectorIndex load(std::istream& in) {
    if (coach::detail::read_u32(in) != kMagic) throw IoError("not a vector index file (bad magic)");
    if (const auto v = coach::detail::read_u32(in); v != kVersion)
      throw IoError("unsupported vector index version " + std::to_string(v));
    VectorIndex idx;
    idx.dim_ = coach::detail::read_u64(in);
    const auto n = coach::detail::read_u64(in);
    if (idx.dim_ > (1u << 16)) throw IoError("vector index dim out of range");
    idx.entries_.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      IndexEntry e;
      e.entry_id = i;
      e.vector.resize(idx.dim_);
      for (auto& x : e.vector) x = coach::detail::read_f64(in);
      e.payload.dialogue_id = coach::detail::read_string(in);
      e.payload.turn_index = coach::detail::read_u64(in);
      e.payload.next_customer_utterance = coach::detail::read_string(in);
      idx.entries_.push_back(std::move(e));
    }
    if (coach::detail::read_u32(in) == 1) {
      Approx a;
      a.seed = coach::detail::read_u64(in);
      a.params.bits = coach::detail::read_u64(in);
      a.params.tables = coach::detail::read_u64(in);
      a.params.probe_radius = coach::detail::read_u64(in);
      a.params.min_candidates = coach::detail::read_u64(in);
      if (a.params.bits == 0 || a.params.bits > 32 || a.params.tables == 0 || a.params.tables > 1024)
        throw IoError("vector index hash parameters out of range");
      a.hyperplanes.resize(a.params.tables * a.params.bits * idx.dim_);
      for (auto& x : a.hyperplanes) x = coach::detail::read_f64(in);
      idx.approx_ = std::move(a);
      idx.fill_buckets();
    }
    return idx;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    save(out);
  }

  static VectorIndex load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    return load(in);
  }

 private:
  static constexpr std::uint32_t kMagic = 0x58495643;  // "CVIX"
  static constexpr std::uint32_t kVersion = 1;

  struct Approx {
    std::uint64_t seed = 0;
    LshParams params;
    std::vector<double> hyperplanes;  // [table][bit][dim]
    std::vector<std::unordered_map<std::uint32_t, std::vector<std::uint32_t>>> buckets;
    std::vector<std::uint32_t> entry_sigs;  // [entry][table]
  };

  void check_query(std::span<const double> query, std::size_t k) const {
    if (k < 1) throw ContractViolation("search: k must be >= 1");
    if (!entries_.empty() && query.size() != dim_)
      throw ContractViolation("search: query dim " + std::to_string(query.size()) + " != index dim " +
                              std::to_string(dim_));
  }

  void require_approx() const {
    if (!approx_) throw ConfigError("index was built without the approximate structure");
  }

  static std::vector<SearchHit> top_k(std::vector<SearchHit> hits, std::size_t k) {
    const auto cmp = [](const SearchHit& a, const SearchHit& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.entry_id < b.entry_id;
    };
    const std::size_t n = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), cmp);
    hits.resize(n);
    return hits;
  }

  std::uint32_t signature(std::size_t table, std::span<const double> v) const {
    const auto& p = approx_->params;
    std::uint32_t sig = 0;
    for (std::size_t b = 0; b < p.bits; ++b) {
      const std::span<const double> plane(approx_->hyperplanes.data() + (table * p.bits + b) * dim_, dim_);
      if (textenc::dot(plane, v) >= 0.0) sig |= (1u << b);
    }
    return sig;
  }

  // Visits every signature within probe_radius flips of `sig`, flipping bits
  // in increasing position order so each bucket is visited once.
  void probe(std::size_t table, std::uint32_t sig, std::size_t first_bit, std::size_t flips,
             std::vector<char>& seen) const {
    const auto& buckets = approx_->buckets[table];
    if (const auto it = buckets.find(sig); it != buckets.end())
      for (auto id : it->second) seen[id] = 1;
    if (flips == approx_->params.probe_radius) return;
    for (std::size_t b = first_bit; b < approx_->params.bits; ++b) probe(table, sig ^ (1u << b), b + 1, flips + 1, seen);
  }

  void top_up(std::span<const double> query, const std::vector<char>& seen, std::vector<std::size_t>& out) const {
    const auto& a = *approx_;
    std::vector<std::uint32_t> qsig(a.params.tables);
    for (std::size_t t = 0; t < qsig.size(); ++t) qsig[t] = signature(t, query);
    std::vector<std::pair<std::uint32_t, std::size_t>> ranked;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (seen[i]) continue;
      std::uint32_t dist = 0;
      for (std::size_t t = 0; t < qsig.size(); ++t) dist += std::popcount(qsig[t] ^ a.entry_sigs[i * qsig.size() + t]);
      ranked.emplace_back(dist, i);
    }
    const std::size_t need = std::min(a.params.min_candidates - out.size(), ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(need), ranked.end());
    for (std::size_t r = 0; r < need; ++r) out.push_back(ranked[r].second);
    std::sort(out.begin(), out.end());
  }

  void build_lsh(std::uint64_t seed, const LshParams& params) {
    if (params.bits == 0 || params.bits > 32 || params.tables == 0) throw ConfigError("invalid hash parameters");
    Approx a;
    a.seed = seed;
    a.params = params;
    coach::detail::Rng rng(seed);
    a.hyperplanes.resize(params.tables * params.bits * dim_);
    for (auto& x : a.hyperplanes) x = rng.normal();
    approx_ = std::move(a);
    fill_buckets();
  }

  void fill_buckets() {
    auto& a = *approx_;
    a.buckets.assign(a.params.tables, {});
    a.entry_sigs.assign(entries_.size() * a.params.tables, 0);
    for (const auto& e : entries_) {
      for (std::size_t t = 0; t < a.params.tables; ++t) {
        const auto sig = signature(t, e.vector);
        a.entry_sigs[e.entry_id * a.params.tables + t] = sig;
        a.buckets[t][sig].push_back(static_cast<std::uint32_t>(e.entry_id));
      }
    }
  }

  std::size_t dim_ = 0;
  std::vector<IndexEntry> entries_;
  std::optional<Approx> approx_;
};

inline VectorIndex build_index(std::vector<IndexItem> items, bool approx, std::uint64_t seed, LshParams lsh = {}) {
  return VectorIndex::build(std::move(items), approx, seed, lsh);
}

// Fraction of the exact top-k found by the approximate search, averaged over queries.
inline double recall_at_k(const VectorIndex& index, const std::vector<std::vector<double>>& queries, std::size_t k) {
  if (queries.empty()) return 1.0;
  double total = 0.0;
  for (const auto& q : queries) {
    const auto exact = index.search_exact(q, k);
    const auto approx = index.search_approx(q, k);
    std::unordered_set<std::size_t> got;
    for (const auto& h : approx) got.insert(h.entry_id);
    std::size_t found = 0;
    for (const auto& h : exact) found += got.count(h.entry_id);
    total += exact.empty() ? 1.0 : static_cast<double>(found) / static_cast<double>(exact.size());
  }
  return total / static_cast<double>(queries.size());
}

}  // namespace coach::vindex
