#pragma once

// Session evaluation: fluency, consistency and compliance, the weighted final
// score, feedback reasons, Pearson correlation and training metrics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/error.hpp"
#include "coach/respond/ngram.hpp"
#include "coach/simcore.hpp"
#include "coach/textenc/similarity.hpp"
#include "json.hpp"

namespace coach::scorecard {

inline constexpr double kFluencyWeight = 0.35;
inline constexpr double kConsistencyWeight = 0.35;
inline constexpr double kComplianceWeight = 0.30;

struct ScoreConfig {
  double match_threshold = 0.5;
  double flag_fluency = 0.6;
  double flag_consistency = 0.7;

  nlohmann::json to_json() const {
    return {{"match_threshold", match_threshold}, {"flag_fluency", flag_fluency}, {"flag_consistency", flag_consistency}};
  }
};

// ---------------------------------------------------------------------------
// Fluency

struct FluencyCalibration {
  double mu = 0.0;
  double sigma = 1.0;

  nlohmann::json to_json() const { return {{"mu", mu}, {"sigma", sigma}}; }
  static FluencyCalibration from_json(const nlohmann::json& j) {
    FluencyCalibration c{j.at("mu").get<double>(), j.at("sigma").get<double>()};
    if (!(c.sigma > 0.0) || !std::isfinite(c.mu)) throw ConfigError("fluency calibration: sigma must be > 0");
    return c;
  }
};

inline double logistic(double x) { return textenc::sigmoid(x); }

// Mean and sample standard deviation of per-token NLL over `texts`; sigma
// falls back to 1 when it cannot be estimated.
inline FluencyCalibration calibrate_fluency(const respond::NGramLM& lm, const std::vector<std::string>& texts) {
  if (texts.empty()) throw ConfigError("fluency calibration: no texts");
  std::vector<double> nll;
  for (const auto& t : texts) nll.push_back(-lm.logprob(t).per_token);
  double mean = 0.0;
  for (double x : nll) mean += x;
  mean /= static_cast<double>(nll.size());
  double var = 0.0;
  for (double x : nll) var += (x - mean) * (x - mean);
  const double sd = nll.size() > 1 ? std::sqrt(var / static_cast<double>(nll.size() - 1)) : 0.0;
  return {mean, sd > 1e-12 ? sd : 1.0};
}

class FluencyBackend {
 public:
  virtual ~FluencyBackend() = default;
  // Per-turn fluency in [0, 1].
  virtual double turn_fluency(const std::string& text) const = 0;
  virtual std::string name() const = 0;
};

class NGramFluency final : public FluencyBackend {
 public:
  NGramFluency(std::shared_ptr<const respond::NGramLM> lm, FluencyCalibration calib) : lm_(std::move(lm)), calib_(calib) {
    if (!lm_) throw ContractViolation("NGramFluency: no model");
    if (!(calib_.sigma > 0.0)) throw ConfigError("NGramFluency: sigma must be > 0");
  }

  double turn_fluency(const std::string& text) const override {
    const double nll = -lm_->logprob(text).per_token;
    return logistic((calib_.mu - nll) / calib_.sigma);
  }
  std::string name() const override { return "ngram-logistic"; }
  const FluencyCalibration& calibration() const { return calib_; }

 private:
  std::shared_ptr<const respond::NGramLM> lm_;
  FluencyCalibration calib_;
};

// Transcript indices of the trainee turns.
inline std::vector<std::size_t> trainee_turns(const simcore::SessionRecord& r) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < r.transcript.size(); ++i)
    if (r.transcript[i].speaker == simcore::Speaker::Trainee) out.push_back(i);
  return out;
}

struct FluencyResult {
  double overall = 0.0;
  std::vector<double> per_turn;
};

inline FluencyResult fluency_score(const simcore::SessionRecord& r, const FluencyBackend& backend) {
  const auto idx = trainee_turns(r);
  if (idx.empty()) throw UndefinedValue("fluency: session has no trainee turns");
  FluencyResult out;
  for (auto i : idx) out.per_turn.push_back(backend.turn_fluency(r.transcript[i].text));
  for (double f : out.per_turn) out.overall += f;
  out.overall /= static_cast<double>(out.per_turn.size());
  return out;
}

// ---------------------------------------------------------------------------
// Consistency

struct ConsistencyResult {
  double score = 0.0;
  std::vector<bool> matched;
  std::vector<double> similarity;
  std::vector<std::string> expected;
};

// Each trainee turn against the script agent turn that was expected when it
// was said. Every attempt counts in the denominator.
inline ConsistencyResult consistency_score(const simcore::SessionRecord& r, const DialogueScript& script,
                                           const textenc::TextMatcher& matcher, double threshold = 0.5) {
  const auto idx = trainee_turns(r);
  if (idx.empty()) throw UndefinedValue("consistency: session has no trainee turns");
  ConsistencyResult out;
  std::size_t hits = 0;
  for (auto i : idx) {
    const auto& e = r.transcript[i];
    if (!e.expected_turn || *e.expected_turn >= script.turns.size())
      throw ContractViolation("consistency: trainee turn " + std::to_string(i) + " is not aligned to the script");
    const auto& expected = script.turns[*e.expected_turn].text;
    const double s = matcher.similarity(e.text, expected);
    const bool ok = s >= threshold;
    hits += ok;
    out.matched.push_back(ok);
    out.similarity.push_back(s);
    out.expected.push_back(expected);
  }
  out.score = static_cast<double>(hits) / static_cast<double>(idx.size());
  return out;
}

// ---------------------------------------------------------------------------
// Compliance

enum class RuleKind { ForbiddenPattern, RequiredOpening, RequiredClosing };

inline std::string_view to_string(RuleKind k) {
  switch (k) {
    case RuleKind::ForbiddenPattern: return "forbidden_pattern";
    case RuleKind::RequiredOpening: return "required_opening";
    case RuleKind::RequiredClosing: return "required_closing";
  }
  return "";
}

inline RuleKind parse_rule_kind(std::string_view s) {
  for (auto k : {RuleKind::ForbiddenPattern, RuleKind::RequiredOpening, RuleKind::RequiredClosing})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown rule kind '" + std::string(s) + "'");
}

// Patterns are case-insensitive ECMAScript regular expressions, searched
// anywhere in a turn.
class ComplianceRule {
 public:
  ComplianceRule(std::string rule_id, RuleKind kind, std::string pattern, std::string message)
      : rule_id_(std::move(rule_id)), kind_(kind), pattern_(std::move(pattern)), message_(std::move(message)) {
    if (rule_id_.empty()) throw ConfigError("rule: empty rule_id");
    if (message_.empty()) throw ConfigError("rule " + rule_id_ + ": empty message");
    try {
      regex_ = std::regex(pattern_, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw ConfigError("rule " + rule_id_ + ": bad pattern: " + e.what());
    }
  }

  const std::string& rule_id() const { return rule_id_; }
  RuleKind kind() const { return kind_; }
  const std::string& pattern() const { return pattern_; }
  const std::string& message() const { return message_; }
  bool matches(const std::string& text) const { return std::regex_search(text, regex_); }

  nlohmann::json to_json() const {
    return {{"rule_id", rule_id_}, {"kind", to_string(kind_)}, {"pattern", pattern_}, {"message", message_}};
  }
  static ComplianceRule from_json(const nlohmann::json& j) {
    try {
      return ComplianceRule(j.at("rule_id").get<std::string>(), parse_rule_kind(j.at("kind").get<std::string>()),
                            j.at("pattern").get<std::string>(), j.at("message").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("rule: ") + e.what());
    }
  }

 private:
  std::string rule_id_;
  RuleKind kind_;
  std::string pattern_;
  std::string message_;
  std::regex regex_;
};

// Line-delimited rule file. Any bad line fails the whole load.
inline std::vector<ComplianceRule> load_rules(std::istream& in) {
  std::vector<ComplianceRule> rules;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (coach::detail::trim(line).empty()) continue;
    try {
      rules.push_back(ComplianceRule::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("rules line " + std::to_string(n) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("rules line " + std::to_string(n) + ": " + e.what());
    }
  }
  return rules;
}

inline std::vector<ComplianceRule> load_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rules file " + path);
  return load_rules(in);
}

struct Violation {
  std::string rule_id;
  std::string message;
  std::optional<std::size_t> turn;  // transcript index

  bool operator==(const Violation&) const = default;
};

struct ComplianceResult {
  int score = 1;
  std::vector<Violation> violations;  // sorted by (rule_id, turn)
};

inline ComplianceResult compliance_score(const simcore::SessionRecord& r, const std::vector<ComplianceRule>& rules) {
  const auto idx = trainee_turns(r);
  ComplianceResult out;
  for (const auto& rule : rules) {
    switch (rule.kind()) {
      case RuleKind::ForbiddenPattern:
        for (auto i : idx)
          if (rule.matches(r.transcript[i].text)) out.violations.push_back({rule.rule_id(), rule.message(), i});
        break;
      case RuleKind::RequiredOpening:
        if (idx.empty() || !rule.matches(r.transcript[idx.front()].text))
          out.violations.push_back({rule.rule_id(), rule.message(), idx.empty() ? std::nullopt : std::optional(idx.front())});
        break;
      case RuleKind::RequiredClosing:
        if (idx.empty() || !rule.matches(r.transcript[idx.back()].text))
          out.violations.push_back({rule.rule_id(), rule.message(), idx.empty() ? std::nullopt : std::optional(idx.back())});
        break;
    }
  }
  std::sort(out.violations.begin(), out.violations.end(), [](const Violation& a, const Violation& b) {
    if (a.rule_id != b.rule_id) return a.rule_id < b.rule_id;
    return a.turn < b.turn;
  });
  out.score = out.violations.empty() ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Final score and feedback

struct TurnDetail {
  std::size_t turn_index = 0;  // transcript index
  double fluency_turn = 0.0;
  bool matched = false;
  std::string expected;
  std::vector<std::string> violations;  // rule ids
};

struct SessionScore {
  std::string session_id;
  double fluency = 0.0;
  double consistency = 0.0;
  int compliance = 1;
  double final = 0.0;
  std::vector<TurnDetail> per_turn;
  std::vector<Violation> violations;
  std::vector<std::string> reasons;
};

inline double weighted_final(double fluency, double consistency, int compliance) {
  return kFluencyWeight * fluency + kConsistencyWeight * consistency + kComplianceWeight * compliance;
}

inline std::string format_fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Ordered compliance -> consistency -> fluency; one reason per flagged
// sub-score, except compliance which lists each violation.
inline std::vector<std::string> build_feedback(const SessionScore& s, const ScoreConfig& cfg = {}) {
  std::vector<std::string> reasons;
  if (s.compliance == 0)
    for (const auto& v : s.violations) reasons.push_back(v.message);
  if (s.consistency < cfg.flag_consistency) {
    std::string r = "Consistency " + format_fixed(s.consistency) + " is below " + format_fixed(cfg.flag_consistency) + ".";
    for (const auto& t : s.per_turn)
      if (!t.matched) r += " Turn " + std::to_string(t.turn_index) + " did not match the expected reply \"" + t.expected + "\".";
    reasons.push_back(std::move(r));
  }
  if (s.fluency < cfg.flag_fluency) {
    std::string r = "Fluency " + format_fixed(s.fluency) + " is below " + format_fixed(cfg.flag_fluency) + ".";
    const auto worst = std::min_element(s.per_turn.begin(), s.per_turn.end(),
                                        [](const TurnDetail& a, const TurnDetail& b) { return a.fluency_turn < b.fluency_turn; });
    if (worst != s.per_turn.end())
      r += " Least fluent: turn " + std::to_string(worst->turn_index) + " (" + format_fixed(worst->fluency_turn) + ").";
    reasons.push_back(std::move(r));
  }
  return reasons;
}

inline SessionScore final_score(double fluency, double consistency, int compliance, const ScoreConfig& cfg = {}) {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(fluency) || !in_unit(consistency) || (compliance != 0 && compliance != 1))
    throw ContractViolation("final_score: input out of range");
  SessionScore s;
  s.fluency = fluency;
  s.consistency = consistency;
  s.compliance = compliance;
  s.final = weighted_final(fluency, consistency, compliance);
  s.reasons = build_feedback(s, cfg);
  return s;
}

inline SessionScore evaluate_session(const simcore::SessionRecord& r, const DialogueScript& script,
                                     const FluencyBackend& fluency, const textenc::TextMatcher& matcher,
                                     const std::vector<ComplianceRule>& rules, const ScoreConfig& cfg = {}) {
  const auto f = fluency_score(r, fluency);
  const auto c = consistency_score(r, script, matcher, cfg.match_threshold);
  const auto p = compliance_score(r, rules);
  SessionScore s;
  s.session_id = r.session_id;
  s.fluency = f.overall;
  s.consistency = c.score;
  s.compliance = p.score;
  s.final = weighted_final(s.fluency, s.consistency, s.compliance);
  s.violations = p.violations;
  const auto idx = trainee_turns(r);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    TurnDetail d{idx[k], f.per_turn[k], c.matched[k], c.expected[k], {}};
    for (const auto& v : p.violations)
      if (v.turn == idx[k]) d.violations.push_back(v.rule_id);
    s.per_turn.push_back(std::move(d));
  }
  s.reasons = build_feedback(s, cfg);
  return s;
}

inline nlohmann::json to_json(const SessionScore& s) {
  auto per_turn = nlohmann::json::array();
  for (const auto& t : s.per_turn)
    per_turn.push_back({{"turn_index", t.turn_index},
                        {"fluency_turn", t.fluency_turn},
                        {"matched", t.matched},
                        {"expected", t.expected},
                        {"violations", t.violations}});
  return {{"session_id", s.session_id}, {"fluency", s.fluency}, {"consistency", s.consistency},
          {"compliance", s.compliance}, {"final", s.final},     {"reasons", s.reasons},
          {"per_turn", per_turn}};
}

// ---------------------------------------------------------------------------
// Pearson

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw ContractViolation("pearson: need equal lengths >= 2");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedValue("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Training metrics

struct TrainingMetrics {
  double waiting_time_avg = 0.0;  // seconds
  double avg_duration = 0.0;      // minutes
  double avg_rounds = 0.0;
  double completion_rate = 0.0;   // percent
  std::size_t sessions = 0;

  nlohmann::json to_json() const {
    return {{"waiting_time_avg", waiting_time_avg}, {"avg_duration", avg_duration}, {"avg_rounds", avg_rounds},
            {"completion_rate", completion_rate},   {"sessions", sessions}};
  }
};

inline TrainingMetrics aggregate_metrics(const std::vector<simcore::SessionRecord>& records) {
  if (records.empty()) throw UndefinedValue("metrics: no sessions");
  TrainingMetrics m;
  std::size_t completed = 0;
  for (const auto& r : records) {
    m.waiting_time_avg += static_cast<double>(std::max<std::int64_t>(0, r.assigned_at - r.wait_started_at)) / 1000.0;
    m.avg_duration += static_cast<double>(std::max<std::int64_t>(0, r.closed_at - r.assigned_at)) / 60000.0;
    m.avg_rounds += static_cast<double>(r.rounds);
    completed += r.completed;
  }
  const double n = static_cast<double>(records.size());
  m.waiting_time_avg /= n;
  m.avg_duration /= n;
  m.avg_rounds /= n;
  m.completion_rate = 100.0 * static_cast<double>(completed) / n;
  m.sessions = records.size();
  return m;
}

// Rows in the layout
//   Method | Waiting Time | Average Durations | Average Rounds | Completion Rate
inline std::string format_metrics_table(const std::vector<std::pair<std::string, TrainingMetrics>>& rows) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s | %-12s | %-17s | %-14s | %-15s\n", "Method", "Waiting Time",
                "Average Durations", "Average Rounds", "Completion Rate");
  out << buf;
  for (const auto& [name, m] : rows) {
    std::snprintf(buf, sizeof buf, "%-16s | %-12s | %-17s | %-14.1f | %-15s\n", name.c_str(),
                  (format_fixed(m.waiting_time_avg, 1) + "s").c_str(), (format_fixed(m.avg_duration, 1) + "min").c_str(),
                  m.avg_rounds, (format_fixed(m.completion_rate, 1) + "%").c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace coach::scorecard
