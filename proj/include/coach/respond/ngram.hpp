#pragma once

// Word n-gram language model with interpolated absolute discounting.
//
//   P_k(w | h) = max(c(h w) - D, 0) / c(h) + D * N1+(h .) / c(h) * P_{k-1}(w | h')
//   P_0(w)     = 1 / |V|
//
// h' drops the oldest token of h; a history never seen falls through to the
// shorter one. V holds every predicted token plus </s> and <unk>. Each
// sentence is one customer turn wrapped as <s> w1 .. wn </s>.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/detail/rng.hpp"
#include "coach/error.hpp"
#include "coach/textenc/tokenize.hpp"
#include "json.hpp"

namespace coach::respond {

inline constexpr const char* kBos = "<s>";
inline constexpr const char* kEos = "</s>";
inline constexpr const char* kUnk = "<unk>";

using TokenId = std::uint32_t;
using NGram = std::vector<TokenId>;

struct LogProb {
  double total = 0.0;
  double per_token = 0.0;  // total / scored tokens (including </s>)
  std::size_t tokens = 0;
};

class NGramLM {
 public:
  // Ids 0..2 are <s>, </s>, <unk>; words follow in first-seen order.
  static constexpr TokenId kBosId = 0;
  static constexpr TokenId kEosId = 1;
  static constexpr TokenId kUnkId = 2;

  NGramLM() = default;

  static NGramLM train(const std::vector<std::string>& sentences, std::size_t order = 3, double discount = 0.75) {
    if (order < 1) throw ConfigError("ngram: order must be >= 1");
    if (!(discount > 0.0 && discount < 1.0)) throw ConfigError("ngram: discount must be in (0, 1)");
    if (sentences.empty()) throw ConfigError("ngram: empty corpus");
    NGramLM lm;
    lm.order_ = order;
    lm.discount_ = discount;
    for (const char* t : {kBos, kEos, kUnk}) lm.add_token(t);
    for (const auto& s : sentences) {
      std::vector<TokenId> seq{kBosId};
      for (const auto& tok : textenc::tokenize(s)) seq.push_back(lm.add_token(tok));
      seq.push_back(kEosId);
      lm.add_sentence(seq);
    }
    if (lm.tokens_.size() <= 3) throw ConfigError("ngram: corpus has no tokens");
    lm.finalize();
    return lm;
  }

  std::size_t order() const { return order_; }
  double discount() const { return discount_; }
  // Size of the predicted vocabulary (everything except <s>).
  std::size_t vocab_size() const { return tokens_.size() - 1; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }

  TokenId id(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }

  // Raw count of an n-gram (0 when unseen). The unigram <s> counts sentences.
  std::uint64_t count(const NGram& g) const {
    const auto it = counts_.find(g);
    return it == counts_.end() ? 0 : it->second;
  }
  std::uint64_t count_of(const std::vector<std::string>& g) const {
    NGram ids;
    for (const auto& t : g) ids.push_back(id(t));
    return count(ids);
  }
  const std::map<NGram, std::uint64_t>& counts() const { return counts_; }

  // History is any sequence of ids; only its last order-1 tokens matter.
  double prob(TokenId w, const NGram& history) const {
    const std::size_t keep = std::min(history.size(), order_ - 1);
    NGram h(history.end() - static_cast<std::ptrdiff_t>(keep), history.end());
    return prob_rec(w, h, 0);
  }

  // Distribution over predicted ids 1..|tokens|-1, indexed by id (entry 0 is 0).
  std::vector<double> distribution(const NGram& history) const {
    std::vector<double> p(tokens_.size(), 0.0);
    for (TokenId w = 1; w < tokens_.size(); ++w) p[w] = prob(w, history);
    return p;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    for (const auto& t : textenc::tokenize(text)) out.push_back(id(t));
    return out;
  }

  LogProb logprob(std::string_view text) const {
    auto seq = encode(text);
    seq.push_back(kEosId);
    NGram history{kBosId};
    LogProb lp;
    for (auto w : seq) {
      lp.total += std::log(prob(w, history));
      history.push_back(w);
    }
    lp.tokens = seq.size();
    lp.per_token = lp.total / static_cast<double>(lp.tokens);
    return lp;
  }

  // Sum of order-k extensions never exceeds the order-(k-1) count.
  bool counts_consistent() const {
    std::map<NGram, std::uint64_t> ext;
    for (const auto& [g, c] : counts_)
      if (g.size() >= 2) ext[NGram(g.begin(), g.end() - 1)] += c;
    for (const auto& [h, c] : ext)
      if (c > count(h)) return false;
    return true;
  }

  nlohmann::json to_json() const {
    auto grams = nlohmann::json::array();
    for (const auto& [g, c] : counts_) {
      auto row = nlohmann::json::array();
      for (auto t : g) row.push_back(t);
      row.push_back(c);
      grams.push_back(std::move(row));
    }
    return {{"order", order_}, {"discount", discount_}, {"tokens", tokens_}, {"ngrams", grams}};
  }

  static NGramLM from_json(const nlohmann::json& j) {
    NGramLM lm;
    try {
      lm.order_ = j.at("order").get<std::size_t>();
      lm.discount_ = j.at("discount").get<double>();
      for (const auto& t : j.at("tokens")) lm.add_token(t.get<std::string>());
      for (const auto& row : j.at("ngrams")) {
        if (!row.is_array() || row.size() < 2) throw ConfigError("ngram: bad n-gram row");
        NGram g;
        for (std::size_t i = 0; i + 1 < row.size(); ++i) g.push_back(row[i].get<TokenId>());
        for (auto t : g)
          if (t >= lm.tokens_.size()) throw ConfigError("ngram: token id out of range");
        lm.counts_[g] = row.back().get<std::uint64_t>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("ngram: ") + e.what());
    }
    if (lm.order_ < 1 || !(lm.discount_ > 0.0 && lm.discount_ < 1.0) || lm.tokens_.size() <= 3 ||
        lm.token(kBosId) != kBos || lm.token(kEosId) != kEos || lm.token(kUnkId) != kUnk)
      throw ConfigError("ngram: malformed model");
    lm.finalize();
    return lm;
  }

 private:
  struct HistoryStats {
    std::uint64_t total = 0;     // c(h) = sum_w c(h w)
    std::uint64_t distinct = 0;  // N1+(h .)
  };

  TokenId add_token(const std::string& t) {
    const auto [it, fresh] = ids_.emplace(t, static_cast<TokenId>(tokens_.size()));
    if (fresh) tokens_.push_back(t);
    return it->second;
  }

  void add_sentence(const std::vector<TokenId>& seq) {
    ++counts_[NGram{kBosId}];
    for (std::size_t i = 1; i < seq.size(); ++i)
      for (std::size_t k = 1; k <= order_ && k <= i + 1; ++k)
        ++counts_[NGram(seq.begin() + static_cast<std::ptrdiff_t>(i + 1 - k), seq.begin() + static_cast<std::ptrdiff_t>(i + 1))];
  }

  void finalize() {
    history_.clear();
    for (const auto& [g, c] : counts_) {
      if (g.size() == 1 && g[0] == kBosId) continue;
      auto& hs = history_[NGram(g.begin(), g.end() - 1)];
      hs.total += c;
      ++hs.distinct;
    }
  }

  double prob_rec(TokenId w, const NGram& h, std::size_t from) const {
    if (from > h.size()) return 1.0 / static_cast<double>(vocab_size());
    NGram ctx(h.begin() + static_cast<std::ptrdiff_t>(from), h.end());
    const double backoff = prob_rec(w, h, from + 1);
    const auto it = history_.find(ctx);
    if (it == history_.end() || it->second.total == 0) return backoff;
    ctx.push_back(w);
    const double c = static_cast<double>(count(ctx));
    const double total = static_cast<double>(it->second.total);
    return std::max(c - discount_, 0.0) / total +
           discount_ * static_cast<double>(it->second.distinct) / total * backoff;
  }

  std::size_t order_ = 3;
  double discount_ = 0.75;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::map<NGram, std::uint64_t> counts_;
  std::map<NGram, HistoryStats> history_;
};

inline NGramLM train_ngram(const std::vector<std::string>& sentences, std::size_t order = 3, double discount = 0.75) {
  return NGramLM::train(sentences, order, discount);
}

// Customer turn texts of a corpus, in order.
inline std::vector<std::string> customer_texts(const std::vector<Dialogue>& corpus) {
  std::vector<std::string> out;
  for (const auto& d : corpus)
    for (const auto& t : d.turns)
      if (t.role == Role::Customer) out.push_back(t.text);
  return out;
}

inline LogProb lm_logprob(const NGramLM& lm, std::string_view text) { return lm.logprob(text); }

// ---------------------------------------------------------------------------
// Sampling

struct GenerationConfig {
  double temperature = 0.8;  // 0 = greedy, lowest id on ties
  std::size_t max_tokens = 30;
  std::size_t max_attempts = 5;  // regenerations of a duplicate
};

// One continuation of `history`. </s> is masked at the first step so the
// result is never empty; <unk> and <s> are never emitted.
inline std::vector<TokenId> sample_continuation(const NGramLM& lm, NGram history, const GenerationConfig& cfg,
                                                coach::detail::Rng& rng) {
  std::vector<TokenId> out;
  while (out.size() < cfg.max_tokens) {
    auto p = lm.distribution(history);
    p[NGramLM::kBosId] = 0.0;
    p[NGramLM::kUnkId] = 0.0;
    if (out.empty()) p[NGramLM::kEosId] = 0.0;
    TokenId next = 0;
    if (cfg.temperature <= 0.0) {
      next = static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
    } else {
      double total = 0.0;
      for (auto& x : p) {
        x = x > 0.0 ? std::pow(x, 1.0 / cfg.temperature) : 0.0;
        total += x;
      }
      const double r = rng.uniform() * total;
      double acc = 0.0;
      next = static_cast<TokenId>(p.size() - 1);
      for (TokenId w = 0; w < p.size(); ++w) {
        if (p[w] <= 0.0) continue;
        acc += p[w];
        if (r < acc) {
          next = w;
          break;
        }
      }
      while (p[next] <= 0.0) --next;
    }
    if (next == NGramLM::kEosId) break;
    out.push_back(next);
    history.push_back(next);
  }
  return out;
}

// Context tokens as LM history: <s> followed by the context's tokens.
inline NGram context_history(const NGramLM& lm, const std::vector<Turn>& context) {
  NGram h{NGramLM::kBosId};
  for (const auto& t : context)
    for (auto id : lm.encode(t.text)) h.push_back(id);
  return h;
}

inline std::vector<std::string> generate_candidates(const NGramLM& lm, const std::vector<Turn>& context, std::size_t n,
                                                    std::uint64_t seed, const GenerationConfig& cfg = {}) {
  if (n < 1) throw ContractViolation("generate_candidates: n must be >= 1");
  coach::detail::Rng rng(seed);
  const auto history = context_history(lm, context);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (std::size_t attempt = 0; attempt <= cfg.max_attempts; ++attempt) {
      std::vector<std::string> words;
      for (auto id : sample_continuation(lm, history, cfg, rng)) words.push_back(lm.token(id));
      text = textenc::join_tokens(words);
      if (std::find(out.begin(), out.end(), text) == out.end()) break;
    }
    out.push_back(std::move(text));
  }
  return out;
}

}  // namespace coach::respond
