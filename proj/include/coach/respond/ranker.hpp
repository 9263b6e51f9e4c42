#pragma once

// Reasonableness ranker: logistic regression over four features
//   [cosine(context, response), jaccard(last customer turn, response),
//    min(len, 30) / 30, per-token LM log-probability]
// trained by full-batch gradient descent on mean cross-entropy.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/detail/rng.hpp"
#include "coach/error.hpp"
#include "coach/respond/candidates.hpp"
#include "coach/respond/ngram.hpp"
#include "coach/textenc/embedding.hpp"
#include "coach/textenc/similarity.hpp"
#include "coach/textenc/sgns.hpp"
#include "json.hpp"

namespace coach::respond {

inline constexpr std::size_t kRankerFeatures = 4;
using FeatureVector = std::array<double, kRankerFeatures>;

class FeatureExtractor {
 public:
  FeatureExtractor(std::shared_ptr<const textenc::Encoder> enc, std::shared_ptr<const NGramLM> lm)
      : enc_(std::move(enc)), lm_(std::move(lm)) {
    if (!enc_ || !lm_) throw ContractViolation("FeatureExtractor: encoder and LM required");
  }

  FeatureVector features(const std::vector<Turn>& context, const std::string& response) const {
    const auto ctx = context_embedding(context, *enc_);
    const auto resp = textenc::embed_text(response, *enc_);
    std::string last_customer;
    for (auto it = context.rbegin(); it != context.rend(); ++it)
      if (it->role == Role::Customer) {
        last_customer = it->text;
        break;
      }
    const double len = static_cast<double>(textenc::tokenize(response).size());
    return {textenc::cosine(ctx.vector, resp.vector), textenc::token_jaccard(last_customer, response),
            std::min(len, 30.0) / 30.0, lm_->logprob(response).per_token};
  }

 private:
  std::shared_ptr<const textenc::Encoder> enc_;
  std::shared_ptr<const NGramLM> lm_;
};

struct RankerConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.5;
  std::uint64_t seed = 1;  // drives negative sampling

  void validate() const {
    if (epochs < 1) throw ConfigError("ranker: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("ranker: learning_rate must be > 0");
  }
};

struct RankerExample {
  FeatureVector x{};
  int y = 0;  // 1 = true next turn

  auto operator<=>(const RankerExample&) const = default;
};

// Features are standardised with the training mean and scale before the
// linear layer; weights live in the standardised space.
struct RankerModel {
  FeatureVector weights{};
  double bias = 0.0;
  FeatureVector mean{};
  FeatureVector scale{1.0, 1.0, 1.0, 1.0};
  RankerConfig config;

  double logit(const FeatureVector& x) const {
    double z = bias;
    for (std::size_t k = 0; k < kRankerFeatures; ++k) z += weights[k] * (x[k] - mean[k]) / scale[k];
    return z;
  }
  double score(const FeatureVector& x) const { return textenc::sigmoid(logit(x)); }

  bool finite() const {
    if (!std::isfinite(bias)) return false;
    for (std::size_t k = 0; k < kRankerFeatures; ++k)
      if (!std::isfinite(weights[k]) || !std::isfinite(mean[k]) || !(scale[k] > 0.0)) return false;
    return true;
  }

  nlohmann::json to_json() const {
    return {{"weights", weights}, {"bias", bias},          {"mean", mean},
            {"scale", scale},     {"epochs", config.epochs}, {"learning_rate", config.learning_rate},
            {"seed", config.seed}};
  }

  static RankerModel from_json(const nlohmann::json& j) {
    RankerModel m;
    try {
      m.weights = j.at("weights").get<FeatureVector>();
      m.bias = j.at("bias").get<double>();
      m.mean = j.at("mean").get<FeatureVector>();
      m.scale = j.at("scale").get<FeatureVector>();
      m.config.epochs = j.value("epochs", m.config.epochs);
      m.config.learning_rate = j.value("learning_rate", m.config.learning_rate);
      m.config.seed = j.value("seed", m.config.seed);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("ranker: ") + e.what());
    }
    if (!m.finite()) throw ConfigError("ranker: non-finite model");
    return m;
  }
};

struct RankerGradient {
  double loss = 0.0;
  FeatureVector d_weights{};
  double d_bias = 0.0;
};

// Mean cross-entropy and its gradient with respect to weights and bias.
inline RankerGradient ranker_gradient(const RankerModel& m, const std::vector<RankerExample>& examples) {
  RankerGradient g;
  if (examples.empty()) return g;
  for (const auto& e : examples) {
    const double z = m.logit(e.x);
    g.loss -= e.y ? textenc::log_sigmoid(z) : textenc::log_sigmoid(-z);
    const double r = textenc::sigmoid(z) - e.y;
    for (std::size_t k = 0; k < kRankerFeatures; ++k) g.d_weights[k] += r * (e.x[k] - m.mean[k]) / m.scale[k];
    g.d_bias += r;
  }
  const double n = static_cast<double>(examples.size());
  g.loss /= n;
  for (auto& d : g.d_weights) d /= n;
  g.d_bias /= n;
  return g;
}

inline double ranker_loss(const RankerModel& m, const std::vector<RankerExample>& examples) {
  return ranker_gradient(m, examples).loss;
}

inline RankerModel train_ranker(std::vector<RankerExample> examples, const RankerConfig& config = {}) {
  config.validate();
  const bool has_pos = std::any_of(examples.begin(), examples.end(), [](const auto& e) { return e.y == 1; });
  const bool has_neg = std::any_of(examples.begin(), examples.end(), [](const auto& e) { return e.y == 0; });
  if (!has_pos || !has_neg) throw ConfigError("ranker: both classes are required");
  // Canonical order makes the floating-point sums independent of input order.
  std::sort(examples.begin(), examples.end());

  RankerModel m;
  m.config = config;
  const double n = static_cast<double>(examples.size());
  for (std::size_t k = 0; k < kRankerFeatures; ++k) {
    double s = 0.0;
    for (const auto& e : examples) s += e.x[k];
    m.mean[k] = s / n;
    double v = 0.0;
    for (const auto& e : examples) v += (e.x[k] - m.mean[k]) * (e.x[k] - m.mean[k]);
    const double sd = std::sqrt(v / n);
    m.scale[k] = sd > 1e-12 ? sd : 1.0;
  }
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto g = ranker_gradient(m, examples);
    for (std::size_t k = 0; k < kRankerFeatures; ++k) m.weights[k] -= config.learning_rate * g.d_weights[k];
    m.bias -= config.learning_rate * g.d_bias;
  }
  if (!m.finite()) throw IllegalState("ranker: training diverged");
  return m;
}

struct ContextPair {
  std::vector<Turn> context;
  std::string response;
};

struct RankerPairs {
  std::vector<ContextPair> positives;
  std::vector<ContextPair> negatives;
};

// Positives: (context, true next customer turn) after every agent turn.
// Negatives, one per positive: a random customer turn from a dialogue of a
// different scene, or from a different dialogue when scenes are unknown.
inline RankerPairs make_ranker_pairs(const std::vector<Dialogue>& dialogues, std::uint64_t seed) {
  struct PoolTurn {
    std::size_t dialogue;
    const std::string* text;
  };
  std::vector<PoolTurn> pool;
  for (std::size_t d = 0; d < dialogues.size(); ++d)
    for (const auto& t : dialogues[d].turns)
      if (t.role == Role::Customer) pool.push_back({d, &t.text});

  coach::detail::Rng rng(seed);
  RankerPairs out;
  for (std::size_t d = 0; d < dialogues.size(); ++d) {
    const auto& turns = dialogues[d].turns;
    for (std::size_t i = 1; i < turns.size(); ++i) {
      if (turns[i].role != Role::Customer || turns[i - 1].role != Role::Agent) continue;
      std::vector<Turn> ctx(turns.begin(), turns.begin() + static_cast<std::ptrdiff_t>(i));
      auto eligible = [&](const PoolTurn& p) {
        if (p.dialogue == d) return false;
        const auto& a = dialogues[d].scene;
        const auto& b = dialogues[p.dialogue].scene;
        return !(a && b && *a == *b);
      };
      // Rejection sampling first; the full scan only runs on tiny or
      // single-scene corpora.
      std::optional<std::size_t> pick;
      for (int attempt = 0; attempt < 64 && !pick; ++attempt) {
        const auto k = rng.below(pool.size());
        if (eligible(pool[k])) pick = k;
      }
      if (!pick) {
        std::vector<std::size_t> options;
        for (std::size_t k = 0; k < pool.size(); ++k)
          if (eligible(pool[k])) options.push_back(k);
        if (options.empty())
          for (std::size_t k = 0; k < pool.size(); ++k)
            if (pool[k].dialogue != d) options.push_back(k);
        if (options.empty()) continue;
        pick = options[rng.below(options.size())];
      }
      out.positives.push_back({ctx, turns[i].text});
      out.negatives.push_back({std::move(ctx), *pool[*pick].text});
    }
  }
  return out;
}

inline RankerModel train_ranker(const FeatureExtractor& fx, const std::vector<ContextPair>& positives,
                                const std::vector<ContextPair>& negatives, const RankerConfig& config = {}) {
  if (positives.empty() || negatives.empty()) throw ConfigError("ranker: both classes are required");
  std::vector<RankerExample> ex;
  for (const auto& p : positives) ex.push_back({fx.features(p.context, p.response), 1});
  for (const auto& p : negatives) ex.push_back({fx.features(p.context, p.response), 0});
  return train_ranker(std::move(ex), config);
}

// ---------------------------------------------------------------------------
// Ranking

class ResponseRanker {
 public:
  virtual ~ResponseRanker() = default;
  // Score in [0, 1].
  virtual double score(const std::vector<Turn>& context, const std::string& response) const = 0;
  virtual std::string name() const = 0;
};

class LogisticRanker final : public ResponseRanker {
 public:
  LogisticRanker(RankerModel model, FeatureExtractor fx) : model_(std::move(model)), fx_(std::move(fx)) {}

  double score(const std::vector<Turn>& context, const std::string& response) const override {
    return model_.score(fx_.features(context, response));
  }
  std::string name() const override { return "logistic"; }
  const RankerModel& model() const { return model_; }

 private:
  RankerModel model_;
  FeatureExtractor fx_;
};

// Orders scored candidates: score descending, retrieval before generation,
// then text.
inline bool ranks_before(const CandidateResponse& a, const CandidateResponse& b) {
  if (a.ranker_score != b.ranker_score) return a.ranker_score > b.ranker_score;
  if (a.source != b.source) return a.source == Source::Retrieval;
  return a.text < b.text;
}

// Scores every candidate, collapses exact duplicate texts onto the better
// ranked copy and sorts.
inline std::vector<CandidateResponse> rank_candidates(const ResponseRanker& ranker, const std::vector<Turn>& context,
                                                      std::vector<CandidateResponse> candidates) {
  if (candidates.empty()) throw ContractViolation("rank_candidates: no candidates");
  std::map<std::string, CandidateResponse> best;
  for (auto& c : candidates) {
    c.ranker_score = ranker.score(context, c.text);
    auto it = best.find(c.text);
    if (it == best.end())
      best.emplace(c.text, std::move(c));
    else if (ranks_before(c, it->second))
      it->second = std::move(c);
  }
  std::vector<CandidateResponse> out;
  for (auto& [text, c] : best) out.push_back(std::move(c));
  std::stable_sort(out.begin(), out.end(), ranks_before);
  return out;
}

}  // namespace coach::respond
