#pragma once

// Skip-gram with negative sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/detail/rng.hpp"
#include "coach/error.hpp"
#include "coach/textenc/embedding.hpp"
#include "coach/textenc/vocabulary.hpp"

namespace coach::textenc {

struct SgnsConfig {
  std::size_t dim = 200;
  std::size_t window = 4;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;  // decays linearly to 10% over training
  std::uint64_t min_count = 1;
  std::uint64_t seed = 1;

  void validate() const {
    if (dim < 1 || window < 1 || negatives < 1 || epochs < 1) throw ConfigError("sgns: dim/window/negatives/epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("sgns: learning_rate must be > 0");
    if (min_count < 1) throw ConfigError("sgns: min_count must be >= 1");
  }
};

struct SkipGramPair {
  std::uint32_t center = 0;
  std::uint32_t context = 0;
};

// All (center, context) pairs within `window` tokens, per turn.
inline std::vector<SkipGramPair> skipgram_pairs(const std::vector<Dialogue>& corpus, const Vocabulary& vocab,
                                                std::size_t window) {
  std::vector<SkipGramPair> pairs;
  for (const auto& d : corpus) {
    for (const auto& t : d.turns) {
      const auto ids = vocab.encode(t.text);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::size_t lo = i >= window ? i - window : 0;
        const std::size_t hi = std::min(ids.size(), i + window + 1);
        for (std::size_t j = lo; j < hi; ++j)
          if (j != i) pairs.push_back({static_cast<std::uint32_t>(ids[i]), static_cast<std::uint32_t>(ids[j])});
      }
    }
  }
  return pairs;
}

inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Loss of one pair, -log s(u_pos.v) - sum_n log s(-u_n.v), with the scalar
// factors its gradient is built from: dL/dv = pos_coef*u_pos + sum neg_coef[n]*u_n,
// dL/du_pos = pos_coef*v, dL/du_n = neg_coef[n]*v.
struct SgnsPairTerms {
  double loss = 0.0;
  double pos_coef = 0.0;
  std::vector<double> neg_coef;
};

inline SgnsPairTerms sgns_pair_terms(std::span<const double> center, std::span<const double> context,
                                     const std::vector<std::span<const double>>& negatives) {
  SgnsPairTerms t;
  const double sp = dot(context, center);
  t.loss = -log_sigmoid(sp);
  t.pos_coef = sigmoid(sp) - 1.0;
  t.neg_coef.reserve(negatives.size());
  for (const auto& u : negatives) {
    const double sn = dot(u, center);
    t.loss -= log_sigmoid(-sn);
    t.neg_coef.push_back(sigmoid(sn));
  }
  return t;
}

struct SgnsPairGradient {
  double loss = 0.0;
  std::vector<double> d_center;
  std::vector<double> d_context;
  std::vector<std::vector<double>> d_negatives;
};

inline SgnsPairGradient sgns_pair_gradient(std::span<const double> center, std::span<const double> context,
                                           const std::vector<std::span<const double>>& negatives) {
  const auto t = sgns_pair_terms(center, context, negatives);
  const std::size_t dim = center.size();
  SgnsPairGradient g;
  g.loss = t.loss;
  g.d_center.assign(dim, 0.0);
  g.d_context.assign(dim, 0.0);
  for (std::size_t k = 0; k < dim; ++k) {
    g.d_center[k] += t.pos_coef * context[k];
    g.d_context[k] = t.pos_coef * center[k];
  }
  for (std::size_t n = 0; n < negatives.size(); ++n) {
    std::vector<double> dn(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      g.d_center[k] += t.neg_coef[n] * negatives[n][k];
      dn[k] = t.neg_coef[n] * center[k];
    }
    g.d_negatives.push_back(std::move(dn));
  }
  return g;
}

// Draws ids from unigram frequency ^ 0.75.
class NegativeSampler {
 public:
  explicit NegativeSampler(const Vocabulary& vocab, double power = 0.75) {
    cumulative_.reserve(vocab.size());
    double acc = 0.0;
    for (auto f : vocab.frequencies()) {
      acc += std::pow(static_cast<double>(f), power);
      cumulative_.push_back(acc);
    }
  }

  std::uint32_t draw(coach::detail::Rng& rng) const {
    const double x = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
    return static_cast<std::uint32_t>(std::min<std::size_t>(it - cumulative_.begin(), cumulative_.size() - 1));
  }

 private:
  std::vector<double> cumulative_;
};

struct SgnsReport {
  // Mean pair loss over every pair with a fixed negative draw, measured
  // before each epoch and once after the last.
  std::vector<double> epoch_losses;
  std::size_t pair_count = 0;
};

namespace detail {

inline std::vector<std::uint32_t> draw_negatives(const NegativeSampler& sampler, coach::detail::Rng& rng,
                                                 std::size_t count, std::uint32_t context) {
  std::vector<std::uint32_t> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto id = sampler.draw(rng);
    if (id != context) out.push_back(id);
  }
  return out;
}

inline double mean_loss(const std::vector<SkipGramPair>& pairs, const std::vector<std::vector<std::uint32_t>>& negs,
                        const EmbeddingMatrix& emb) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  std::vector<std::span<const double>> nvec;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    nvec.clear();
    for (auto n : negs[i]) nvec.push_back(emb.output(n));
    total += sgns_pair_terms(emb.input(pairs[i].center), emb.output(pairs[i].context), nvec).loss;
  }
  return total / static_cast<double>(pairs.size());
}

}  // namespace detail

inline EmbeddingMatrix train_sgns(const std::vector<Dialogue>& corpus, const Vocabulary& vocab,
                                  const SgnsConfig& config, SgnsReport* report = nullptr) {
  config.validate();
  if (vocab.empty()) throw ConfigError("sgns: vocabulary is empty");

  EmbeddingMatrix emb(vocab.size(), config.dim);
  coach::detail::Rng rng(config.seed);
  const double scale = 0.5 / static_cast<double>(config.dim);
  for (std::size_t r = 0; r < emb.rows(); ++r)
    for (auto& x : emb.input(r)) x = rng.uniform(-scale, scale);

  auto pairs = skipgram_pairs(corpus, vocab, config.window);
  const NegativeSampler sampler(vocab);

  std::vector<std::vector<std::uint32_t>> eval_negs;
  if (report) {
    coach::detail::Rng eval_rng(coach::detail::mix_seed(config.seed, 0xE7A1));
    eval_negs.reserve(pairs.size());
    for (const auto& p : pairs) eval_negs.push_back(detail::draw_negatives(sampler, eval_rng, config.negatives, p.context));
    report->pair_count = pairs.size();
    report->epoch_losses.clear();
  }

  const double total_steps = static_cast<double>(pairs.size() * config.epochs);
  std::size_t step = 0;
  std::vector<double> center_grad(config.dim);
  std::vector<std::span<const double>> nvec;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (report) report->epoch_losses.push_back(detail::mean_loss(pairs, eval_negs, emb));
    rng.shuffle(pairs.begin(), pairs.end());
    for (const auto& p : pairs) {
      const double lr = config.learning_rate * (1.0 - 0.9 * static_cast<double>(step) / total_steps);
      ++step;
      const auto negs = detail::draw_negatives(sampler, rng, config.negatives, p.context);
      nvec.clear();
      for (auto n : negs) nvec.push_back(emb.output(n));
      auto center = emb.input(p.center);
      const auto terms = sgns_pair_terms(center, emb.output(p.context), nvec);

      std::fill(center_grad.begin(), center_grad.end(), 0.0);
      auto ctx = emb.output(p.context);
      for (std::size_t k = 0; k < config.dim; ++k) center_grad[k] += terms.pos_coef * ctx[k];
      for (std::size_t n = 0; n < negs.size(); ++n) {
        auto u = emb.output(negs[n]);
        for (std::size_t k = 0; k < config.dim; ++k) center_grad[k] += terms.neg_coef[n] * u[k];
      }
      // Output rows move using the pre-update center vector.
      for (std::size_t k = 0; k < config.dim; ++k) ctx[k] -= lr * terms.pos_coef * center[k];
      for (std::size_t n = 0; n < negs.size(); ++n) {
        auto u = emb.output(negs[n]);
        for (std::size_t k = 0; k < config.dim; ++k) u[k] -= lr * terms.neg_coef[n] * center[k];
      }
      for (std::size_t k = 0; k < config.dim; ++k) center[k] -= lr * center_grad[k];
    }
  }
  if (report) report->epoch_losses.push_back(detail::mean_loss(pairs, eval_negs, emb));
  return emb;
}

// Vocabulary plus trained matrix in one step.
inline Encoder train_encoder(const std::vector<Dialogue>& corpus, const SgnsConfig& config,
                             SgnsReport* report = nullptr) {
  config.validate();
  auto vocab = build_vocab(corpus, config.min_count);
  if (vocab.empty()) throw ConfigError("sgns: vocabulary is empty");
  auto emb = train_sgns(corpus, vocab, config, report);
  return Encoder{std::move(vocab), std::move(emb)};
}

}  // namespace coach::textenc
