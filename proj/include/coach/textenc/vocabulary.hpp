#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/error.hpp"
#include "coach/textenc/tokenize.hpp"

namespace coach::textenc {

class Vocabulary {
 public:
  Vocabulary() = default;

  // Keeps tokens whose count reaches min_count. Ids follow descending
  // frequency, ties broken lexicographically.
  static Vocabulary from_counts(const std::map<std::string, std::uint64_t>& counts, std::uint64_t min_count) {
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    std::vector<std::pair<std::string, std::uint64_t>> kept;
    for (const auto& [tok, n] : counts)
      if (n >= min_count) kept.emplace_back(tok, n);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    v.min_count_ = min_count;
    for (auto& [tok, n] : kept) v.push(std::move(tok), n);
    return v;
  }

  // Rebuilds from an already ordered token list (persistence path).
  static Vocabulary from_ordered(std::vector<std::pair<std::string, std::uint64_t>> entries, std::uint64_t min_count) {
    Vocabulary v;
    v.min_count_ = min_count;
    for (auto& [tok, n] : entries) {
      if (v.ids_.count(tok)) throw ConfigError("duplicate vocabulary token '" + tok + "'");
      v.push(std::move(tok), n);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  std::uint64_t min_count() const { return min_count_; }

  std::optional<std::size_t> id(const std::string& token) const {
    const auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::uint64_t frequency(std::size_t id) const { return freqs_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::uint64_t>& frequencies() const { return freqs_; }

  // In-vocabulary ids of the tokens of `text`, in order.
  std::vector<std::size_t> encode(std::string_view text) const {
    std::vector<std::size_t> out;
    for (const auto& t : tokenize(text))
      if (auto i = id(t)) out.push_back(*i);
    return out;
  }

  bool operator==(const Vocabulary& o) const {
    return tokens_ == o.tokens_ && freqs_ == o.freqs_ && min_count_ == o.min_count_;
  }

 private:
  void push(std::string tok, std::uint64_t n) {
    ids_.emplace(tok, tokens_.size());
    tokens_.push_back(std::move(tok));
    freqs_.push_back(n);
  }

  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freqs_;
  std::uint64_t min_count_ = 1;
};

inline std::map<std::string, std::uint64_t> count_tokens(const std::vector<Dialogue>& corpus) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& d : corpus)
    for (const auto& t : d.turns)
      for (auto& tok : tokenize(t.text)) ++counts[std::move(tok)];
  return counts;
}

inline Vocabulary build_vocab(const std::vector<Dialogue>& corpus, std::uint64_t min_count) {
  return Vocabulary::from_counts(count_tokens(corpus), min_count);
}

}  // namespace coach::textenc
