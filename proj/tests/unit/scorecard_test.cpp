#include "coach/scorecard.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "support/engine_fixture.hpp"

using namespace coach;
using namespace coach::scorecard;
using simcore::SessionRecord;
using simcore::Speaker;
using simcore::Tag;
using simcore::TranscriptEntry;
namespace fx = coach::testing;

namespace {

TranscriptEntry bot(const std::string& text) { return {Speaker::Bot, text, 0, Tag::Scripted, std::nullopt, std::nullopt, 0, ""}; }
TranscriptEntry trainee(const std::string& text, std::size_t expected) {
  return {Speaker::Trainee, text, 0, Tag::Scripted, expected, std::nullopt, 0, ""};
}

SessionRecord record_of(std::vector<TranscriptEntry> t) {
  SessionRecord r;
  r.session_id = "s";
  r.transcript = std::move(t);
  r.rounds = simcore::round_count(r.transcript);
  return r;
}

// Fixed per-text fluency.
struct TableFluency final : FluencyBackend {
  std::map<std::string, double> table;
  double turn_fluency(const std::string& t) const override { return table.at(t); }
  std::string name() const override { return "table"; }
};

struct ExactMatcher final : textenc::TextMatcher {
  double similarity(std::string_view a, std::string_view b) const override { return a == b ? 1.0 : 0.0; }
  std::string name() const override { return "exact"; }
};

std::vector<ComplianceRule> rules_from(const std::string& text) {
  std::istringstream in(text);
  return load_rules(in);
}

}  // namespace

// ---------------------------------------------------------------------------
// Fluency

TEST(Fluency, NllAtCenterIsHalf) {
  auto lm = std::make_shared<const respond::NGramLM>(respond::train_ngram({"a b", "a c", "b c"}, 2));
  const double nll = -lm->logprob("a b").per_token;
  NGramFluency f(lm, {nll, 0.7});
  EXPECT_DOUBLE_EQ(f.turn_fluency("a b"), 0.5);
}

TEST(Fluency, MeanOverTraineeTurns) {
  TableFluency f;
  f.table = {{"x", 0.9}, {"y", 0.5}};
  const auto r = fluency_score(record_of({bot("hi"), trainee("x", 1), bot("ok"), trainee("y", 3)}), f);
  EXPECT_NEAR(r.overall, 0.7, 1e-15);
  EXPECT_EQ(r.per_turn, (std::vector<double>{0.9, 0.5}));
  EXPECT_THROW(fluency_score(record_of({bot("hi")}), f), UndefinedValue);
}

TEST(Fluency, HandComputedChain) {
  // LM over "a b", "a c", "b c" (order 2, D = .75, |V| = 5), see the n-gram
  // tests for the unigram terms.
  auto lm = std::make_shared<const respond::NGramLM>(respond::train_ngram({"a b", "a c", "b c"}, 2));
  const double fm = 0.75 * 4 / 9.0 / 5.0;
  const double p1_a = 1.25 / 9 + fm, p1_b = p1_a, p1_c = p1_a, p1_eos = 2.25 / 9 + fm;
  // "a b": P(a|<s>) P(b|a) P(</s>|b)
  const double nll_ab = -(std::log(1.25 / 3 + 0.75 * 2 / 3 * p1_a) + std::log(0.25 / 2 + 0.75 * p1_b) +
                          std::log(0.25 / 2 + 0.75 * p1_eos)) / 3;
  // "c": P(c|<s>) P(</s>|c); <s> never precedes c, c always precedes </s>.
  const double nll_c = -(std::log(0.75 * 2 / 3 * p1_c) + std::log(1.25 / 2 + 0.75 * 1 / 2 * p1_eos)) / 2;
  const FluencyCalibration cal{1.2, 0.4};
  const double expect = (1 / (1 + std::exp(-(cal.mu - nll_ab) / cal.sigma)) + 1 / (1 + std::exp(-(cal.mu - nll_c) / cal.sigma))) / 2;
  NGramFluency f(lm, cal);
  const auto r = fluency_score(record_of({bot("hi"), trainee("a b", 1), bot("?"), trainee("c", 3)}), f);
  EXPECT_NEAR(r.overall, expect, 1e-12);
}

TEST(Fluency, CalibrationStatistics) {
  auto lm = respond::train_ngram({"a b", "a c", "b c"}, 2);
  const std::vector<std::string> texts{"a b", "b c", "a c", "c a b"};
  std::vector<double> nll;
  for (auto& t : texts) nll.push_back(-lm.logprob(t).per_token);
  const double mu = (nll[0] + nll[1] + nll[2] + nll[3]) / 4;
  double v = 0;
  for (double x : nll) v += (x - mu) * (x - mu);
  const auto c = calibrate_fluency(lm, texts);
  EXPECT_NEAR(c.mu, mu, 1e-12);
  EXPECT_NEAR(c.sigma, std::sqrt(v / 3), 1e-12);
  EXPECT_DOUBLE_EQ(calibrate_fluency(lm, {"a b"}).sigma, 1.0);
  EXPECT_THROW(calibrate_fluency(lm, {}), ConfigError);
}

// ---------------------------------------------------------------------------
// Consistency

TEST(Consistency, Fixtures) {
  const auto script = fx::canonical_scripts().front();
  const auto& t = script.turns;
  ExactMatcher m;
  const auto all = record_of({bot(t[0].text), trainee(t[1].text, 1), bot(t[2].text), trainee(t[3].text, 3)});
  EXPECT_DOUBLE_EQ(consistency_score(all, script, m).score, 1.0);
  const auto none = record_of({bot(t[0].text), trainee("nope", 1), bot("?"), trainee("still no", 1)});
  EXPECT_DOUBLE_EQ(consistency_score(none, script, m).score, 0.0);
  // 4 attempts, 3 matched; the miss repeats step 1 and still counts.
  const auto three = record_of({bot(t[0].text), trainee("off topic", 1), bot("?"), trainee(t[1].text, 1), bot(t[2].text),
                                trainee(t[3].text, 3), bot(t[4].text), trainee(t[5].text, 5), bot("bye")});
  const auto c = consistency_score(three, script, m);
  EXPECT_DOUBLE_EQ(c.score, 0.75);
  EXPECT_EQ(c.matched, (std::vector<bool>{false, true, true, true}));
  EXPECT_THROW(consistency_score(record_of({bot("x")}), script, m), UndefinedValue);
  EXPECT_THROW(consistency_score(record_of({trainee("x", 99)}), script, m), ContractViolation);
}

TEST(Consistency, EqualsRecountOverEventLog) {
  const auto& models = fx::test_models();
  auto clock = std::make_shared<simcore::ManualClock>();
  simcore::Simulator sim(models.engine, clock);
  textenc::HybridMatcher matcher(models.encoder);
  std::mt19937_64 gen(3);
  const auto scripts = fx::canonical_scripts();
  for (int i = 0; i < 20; ++i) {
    std::vector<nlohmann::json> log;
    simcore::SimPolicy p;
    p.seed = i;
    auto s = sim.start_session("s", scripts[i % scripts.size()].scene, p, std::nullopt,
                               [&](const nlohmann::json& e) { log.push_back(e); }).state;
    while (s.phase == simcore::Phase::AwaitAgent) {
      const auto& exp = s.script.turns[simcore::agent_positions(s.script)[s.cursor]].text;
      const auto pick = gen() % 3;
      sim.agent_reply(s, pick == 0 ? exp : pick == 1 ? "ok let me see" : exp + " thanks", [&](const nlohmann::json& e) { log.push_back(e); });
    }
    // Recount from raw events only.
    DialogueScript script = script_from_json(log.front()["script"]);
    std::size_t n = 0, hit = 0;
    for (const auto& e : log) {
      if (e["type"] != "trainee_turn") continue;
      ++n;
      const auto& text = e["entry"]["text"].get<std::string>();
      const auto& expected = script.turns[e["entry"]["expected_turn"].get<std::size_t>()].text;
      hit += textenc::text_similarity(text, expected, *models.encoder) >= 0.5;
    }
    const auto rec = sim.close_session(s, simcore::CloseReason::Completed);
    EXPECT_DOUBLE_EQ(consistency_score(rec, s.script, matcher).score, double(hit) / double(n));
  }
}

// ---------------------------------------------------------------------------
// Compliance

TEST(Compliance, EmptyRuleSetPasses) {
  const auto r = compliance_score(record_of({bot("x"), trainee("whatever", 1)}), {});
  EXPECT_EQ(r.score, 1);
  EXPECT_TRUE(r.violations.empty());
}

TEST(Compliance, ForbiddenPhrase) {
  const auto rules = rules_from(R"({"rule_id":"no-rude","kind":"forbidden_pattern","pattern":"\\bshut up\\b","message":"Do not be rude."})");
  const auto rec = record_of({bot("x"), trainee("please wait", 1), bot("y"), trainee("Shut up please", 3)});
  const auto r = compliance_score(rec, rules);
  EXPECT_EQ(r.score, 0);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].rule_id, "no-rude");
  EXPECT_EQ(r.violations[0].turn, 3u);
}

TEST(Compliance, RequiredOpeningAndClosing) {
  const auto rules = rules_from(
      "{\"rule_id\":\"close\",\"kind\":\"required_closing\",\"pattern\":\"anything else\",\"message\":\"Ask whether the customer needs anything else.\"}\n"
      "\n"
      "{\"rule_id\":\"open\",\"kind\":\"required_opening\",\"pattern\":\"^(hello|hi|sorry)\",\"message\":\"Greet the customer first.\"}\n");
  const auto ok = record_of({bot("x"), trainee("Hello, how can I help", 1), bot("y"), trainee("Anything else I can do?", 3)});
  EXPECT_EQ(compliance_score(ok, rules).score, 1);
  const auto bad = record_of({bot("x"), trainee("Hello, how can I help", 1), bot("y"), trainee("bye", 3)});
  const auto r = compliance_score(bad, rules);
  EXPECT_EQ(r.score, 0);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].message, "Ask whether the customer needs anything else.");
  // No trainee turn at all fails both required rules.
  EXPECT_EQ(compliance_score(record_of({bot("x")}), rules).violations.size(), 2u);
}

TEST(Compliance, RulePermutationDoesNotMatter) {
  std::vector<ComplianceRule> rules{
      {"a", RuleKind::ForbiddenPattern, "refund", "no refunds"},
      {"b", RuleKind::RequiredOpening, "^hi", "say hi"},
      {"c", RuleKind::RequiredClosing, "bye$", "say bye"},
      {"d", RuleKind::ForbiddenPattern, "[0-9]{4}", "no numbers"},
  };
  const auto rec = record_of({bot("x"), trainee("hello the refund", 1), bot("y"), trainee("order 4471 refund", 3)});
  const auto base = compliance_score(rec, rules);
  std::mt19937_64 gen(1);
  for (int i = 0; i < 24; ++i) {
    std::shuffle(rules.begin(), rules.end(), gen);
    const auto r = compliance_score(rec, rules);
    EXPECT_EQ(r.score, base.score);
    EXPECT_EQ(r.violations, base.violations);
  }
  EXPECT_EQ(base.violations.size(), 5u);
}

TEST(Compliance, MalformedRulesFailAtLoad) {
  EXPECT_THROW(rules_from(R"({"rule_id":"x","kind":"forbidden_pattern","pattern":"(unclosed","message":"m"})"), ConfigError);
  EXPECT_THROW(rules_from(R"({"rule_id":"x","kind":"sometimes","pattern":"a","message":"m"})"), ConfigError);
  EXPECT_THROW(rules_from(R"({"rule_id":"x","kind":"forbidden_pattern","pattern":"a","message":""})"), ConfigError);
  EXPECT_THROW(rules_from("not json"), ConfigError);
  EXPECT_THROW(load_rules("/nonexistent/rules.jsonl"), IoError);
}

// ---------------------------------------------------------------------------
// Final score and feedback

TEST(FinalScore, Examples) {
  EXPECT_DOUBLE_EQ(final_score(1.0, 1.0, 1).final, 1.0);
  EXPECT_DOUBLE_EQ(final_score(0.0, 0.0, 0).final, 0.0);
  EXPECT_NEAR(final_score(0.8, 0.6, 1).final, 0.79, 1e-12);
  EXPECT_THROW(final_score(1.1, 0.5, 1), ContractViolation);
  EXPECT_THROW(final_score(0.5, -0.1, 1), ContractViolation);
  EXPECT_THROW(final_score(0.5, 0.5, 2), ContractViolation);
}

TEST(FinalScore, WeightIdentityAndMonotonicity) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double f = u(gen), c = u(gen);
    const int p = gen() % 2;
    const auto s = final_score(f, c, p);
    EXPECT_NEAR(s.final, 0.35 * f + 0.35 * c + 0.30 * p, 1e-12);
    EXPECT_GE(s.final, 0.0);
    EXPECT_LE(s.final, 1.0);
    const double f2 = std::min(1.0, f + u(gen) * 0.1), c2 = std::min(1.0, c + u(gen) * 0.1);
    EXPECT_GE(final_score(f2, c, p).final, s.final);
    EXPECT_GE(final_score(f, c2, p).final, s.final);
    EXPECT_GE(final_score(f, c, 1).final, s.final);
  }
}

TEST(Feedback, PerfectScoreHasNoReasons) { EXPECT_TRUE(final_score(1.0, 1.0, 1).reasons.empty()); }

TEST(Feedback, ComplianceFirstThenConsistencyThenFluency) {
  const auto script = fx::canonical_scripts().front();
  const auto& t = script.turns;
  TableFluency f;
  f.table = {{"go away", 0.1}, {"bad", 0.2}, {t[5].text, 0.9}};
  const auto rules = rules_from(R"({"rule_id":"rude","kind":"forbidden_pattern","pattern":"go away","message":"Never tell a customer to go away."})");
  const auto rec = record_of({bot(t[0].text), trainee("go away", 1), bot("?"), trainee("bad", 1), bot("?"), trainee(t[5].text, 5)});
  const auto s = evaluate_session(rec, script, f, ExactMatcher{}, rules);
  EXPECT_EQ(s.compliance, 0);
  ASSERT_EQ(s.reasons.size(), 3u);
  EXPECT_EQ(s.reasons[0], "Never tell a customer to go away.");
  // Both unmatched turns are named with their expected reply.
  EXPECT_NE(s.reasons[1].find("Consistency"), std::string::npos);
  EXPECT_NE(s.reasons[1].find("Turn 1 "), std::string::npos);
  EXPECT_NE(s.reasons[1].find("Turn 3 "), std::string::npos);
  EXPECT_NE(s.reasons[1].find(t[1].text), std::string::npos);
  EXPECT_NE(s.reasons[2].find("Fluency"), std::string::npos);
  EXPECT_NE(s.reasons[2].find("turn 1 "), std::string::npos);
  EXPECT_NEAR(s.final, 0.35 * (0.1 + 0.2 + 0.9) / 3 + 0.35 * (1.0 / 3), 1e-12);
  ASSERT_EQ(s.per_turn.size(), 3u);
  EXPECT_EQ(s.per_turn[0].violations, std::vector<std::string>{"rude"});
  EXPECT_EQ(s.per_turn[2].expected, t[5].text);
}

TEST(Feedback, ThresholdsAreConfigurable) {
  ScoreConfig cfg;
  cfg.flag_fluency = 0.2;
  cfg.flag_consistency = 0.1;
  EXPECT_TRUE(final_score(0.5, 0.5, 1, cfg).reasons.empty());
  EXPECT_EQ(final_score(0.5, 0.5, 1).reasons.size(), 2u);
}

TEST(ScoreReport, FieldNames) {
  TableFluency f;
  f.table = {{"x", 0.5}};
  const auto s = evaluate_session(record_of({bot("a"), trainee("x", 1)}), fx::canonical_scripts().front(), f, ExactMatcher{}, {});
  const auto j = to_json(s);
  for (const char* k : {"session_id", "fluency", "consistency", "compliance", "final", "reasons", "per_turn"})
    EXPECT_TRUE(j.contains(k)) << k;
  for (const char* k : {"turn_index", "fluency_turn", "matched", "violations"}) EXPECT_TRUE(j["per_turn"][0].contains(k)) << k;
}

// ---------------------------------------------------------------------------
// Pearson

TEST(Pearson, Examples) {
  const std::vector<double> xs{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(pearson(xs, xs), 1.0);
  EXPECT_DOUBLE_EQ(pearson(xs, {-1, -2, -3, -4}), -1.0);
  // Deviations (-1.5, -.5, .5, 1.5) and (-1.75, .25, 1.25, .25): 3.5 / sqrt(5 * 4.75).
  EXPECT_NEAR(pearson(xs, {2, 4, 5, 4}), 3.5 / std::sqrt(5 * 4.75), 1e-12);
}

TEST(Pearson, Errors) {
  EXPECT_THROW(pearson({1, 2, 3}, {5, 5, 5}), UndefinedValue);
  EXPECT_THROW(pearson({1}, {1}), ContractViolation);
  EXPECT_THROW(pearson({1, 2}, {1, 2, 3}), ContractViolation);
}

TEST(Pearson, AffineInvariance) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(20), y(20);
    for (int i = 0; i < 20; ++i) {
      x[i] = nd(gen);
      y[i] = 0.5 * x[i] + nd(gen);
    }
    const double base = pearson(x, y);
    const double a = u(gen), b = nd(gen) * 5;
    auto x2 = x;
    for (auto& v : x2) v = a * v + b;
    EXPECT_NEAR(pearson(x2, y), base, 1e-9);
    auto y2 = y;
    for (auto& v : y2) v = u(gen) > 0 ? a * v - b : v;
    EXPECT_NEAR(pearson(x, y2), base, 1e-9);
  }
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, Aggregation) {
  std::vector<SessionRecord> rs(4);
  const std::size_t rounds[4] = {20, 22, 20, 22};
  for (int i = 0; i < 4; ++i) {
    rs[i].rounds = rounds[i];
    rs[i].completed = i != 3;
    rs[i].wait_started_at = 1000 * i;
    rs[i].assigned_at = 1000 * i + 3000;  // 3 s wait
    rs[i].closed_at = rs[i].assigned_at + 6 * 60'000 + (i % 2) * 60'000;
  }
  const auto m = aggregate_metrics(rs);
  EXPECT_DOUBLE_EQ(m.avg_rounds, 21.0);
  EXPECT_DOUBLE_EQ(m.completion_rate, 75.0);
  EXPECT_DOUBLE_EQ(m.waiting_time_avg, 3.0);
  EXPECT_DOUBLE_EQ(m.avg_duration, 6.5);
  EXPECT_THROW(aggregate_metrics({}), UndefinedValue);
}

TEST(Metrics, TableLayout) {
  TrainingMetrics m;
  m.waiting_time_avg = 3.1;
  m.avg_duration = 6.8;
  m.avg_rounds = 20.8;
  m.completion_rate = 80.2;
  const auto s = format_metrics_table({{"Human-Computer", m}});
  EXPECT_NE(s.find("Waiting Time"), std::string::npos);
  EXPECT_NE(s.find("Average Durations"), std::string::npos);
  EXPECT_NE(s.find("Average Rounds"), std::string::npos);
  EXPECT_NE(s.find("Completion Rate"), std::string::npos);
  EXPECT_NE(s.find("Human-Computer   | 3.1s         | 6.8min            | 20.8           | 80.2%"), std::string::npos) << s;
}

TEST(Integration, EchoSessionScoresFullConsistency) {
  const auto& models = fx::test_models();
  simcore::Simulator sim(models.engine, std::make_shared<simcore::ManualClock>());
  auto s = sim.start_session("s", "refund", {}).state;
  while (s.phase == simcore::Phase::AwaitAgent)
    sim.agent_reply(s, s.script.turns[simcore::agent_positions(s.script)[s.cursor]].text);
  const auto rec = sim.close_session(s, simcore::CloseReason::Completed);
  NGramFluency fl(models.agent_lm, models.calibration);
  const auto score = evaluate_session(rec, s.script, fl, textenc::HybridMatcher(models.encoder), {});
  EXPECT_DOUBLE_EQ(score.consistency, 1.0);
  EXPECT_EQ(score.compliance, 1);
  EXPECT_GT(score.fluency, 0.0);
  EXPECT_LT(score.fluency, 1.0);
  EXPECT_NEAR(score.final, 0.35 * score.fluency + 0.35 + 0.30, 1e-12);
}
