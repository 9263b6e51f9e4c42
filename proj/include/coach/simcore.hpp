#pragma once

// User-simulator session orchestration.
//
// The bot opens with the script's first customer turn. Each trainee reply is
// compared with the expected agent turn: a match advances the script, a miss
// produces a fallback utterance from retrieval + generation + ranking while
// the expected turn stays fixed. Every state change is also emitted as a
// JSON event so a session can be rebuilt from its log.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/detail/rng.hpp"
#include "coach/detail/utf8.hpp"
#include "coach/error.hpp"
#include "coach/respond/candidates.hpp"
#include "coach/respond/ranker.hpp"
#include "coach/textenc/similarity.hpp"
#include "json.hpp"

namespace coach::simcore {

// ---------------------------------------------------------------------------
// Clock

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() = 0;
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }
};

class ManualClock final : public Clock {
 public:
  explicit ManualClock(std::int64_t start = 0) : now_(start) {}
  std::int64_t now_ms() override { return now_; }
  void advance(std::int64_t ms) { now_ += ms; }
  void set(std::int64_t ms) { now_ = ms; }

 private:
  std::int64_t now_;
};

// ---------------------------------------------------------------------------
// Types

struct SimPolicy {
  double advance_threshold = 0.5;
  std::size_t context_window = 4;
  std::size_t max_misses_before_hint = 2;
  std::size_t max_rounds = 60;
  std::uint64_t seed = 1;
  std::size_t retrieval_k = 3;
  std::size_t generation_n = 3;
  bool approx_retrieval = false;

  bool operator==(const SimPolicy&) const = default;

  void validate() const {
    if (!(advance_threshold >= 0.0 && advance_threshold <= 1.0)) throw ConfigError("policy: advance_threshold outside [0,1]");
    if (context_window < 1) throw ConfigError("policy: context_window must be >= 1");
    if (max_rounds < 1) throw ConfigError("policy: max_rounds must be >= 1");
    if (generation_n < 1) throw ConfigError("policy: generation_n must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"advance_threshold", advance_threshold}, {"context_window", context_window},
            {"max_misses_before_hint", max_misses_before_hint}, {"max_rounds", max_rounds},
            {"seed", seed}, {"retrieval_k", retrieval_k}, {"generation_n", generation_n},
            {"approx_retrieval", approx_retrieval}};
  }

  static SimPolicy from_json(const nlohmann::json& j) {
    SimPolicy p;
    try {
      p.advance_threshold = j.value("advance_threshold", p.advance_threshold);
      p.context_window = j.value("context_window", p.context_window);
      p.max_misses_before_hint = j.value("max_misses_before_hint", p.max_misses_before_hint);
      p.max_rounds = j.value("max_rounds", p.max_rounds);
      p.seed = j.value("seed", p.seed);
      p.retrieval_k = j.value("retrieval_k", p.retrieval_k);
      p.generation_n = j.value("generation_n", p.generation_n);
      p.approx_retrieval = j.value("approx_retrieval", p.approx_retrieval);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("policy: ") + e.what());
    }
    p.validate();
    return p;
  }
};

enum class Speaker { Bot, Trainee };
enum class Tag { Scripted, Fallback, Hint };
enum class Phase { AwaitAgent, Completed, Abandoned };
enum class Path { ScriptAdvance, Fallback };
enum class CloseReason { Completed, Abandoned, TraineeQuit };

inline std::string_view to_string(Speaker s) { return s == Speaker::Bot ? "bot" : "trainee"; }
inline std::string_view to_string(Tag t) {
  switch (t) {
    case Tag::Scripted: return "scripted";
    case Tag::Fallback: return "fallback";
    case Tag::Hint: return "hint";
  }
  return "";
}
inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::AwaitAgent: return "await_agent";
    case Phase::Completed: return "completed";
    case Phase::Abandoned: return "abandoned";
  }
  return "";
}
inline std::string_view to_string(Path p) { return p == Path::ScriptAdvance ? "script_advance" : "fallback"; }
inline std::string_view to_string(CloseReason r) {
  switch (r) {
    case CloseReason::Completed: return "completed";
    case CloseReason::Abandoned: return "abandoned";
    case CloseReason::TraineeQuit: return "trainee_quit";
  }
  return "";
}

template <class E>
E parse_enum(std::string_view s, std::initializer_list<E> values) {
  for (E v : values)
    if (to_string(v) == s) return v;
  throw ConfigError("unknown enum value '" + std::string(s) + "'");
}
inline Speaker parse_speaker(std::string_view s) { return parse_enum(s, {Speaker::Bot, Speaker::Trainee}); }
inline Tag parse_tag(std::string_view s) { return parse_enum(s, {Tag::Scripted, Tag::Fallback, Tag::Hint}); }
inline Phase parse_phase(std::string_view s) { return parse_enum(s, {Phase::AwaitAgent, Phase::Completed, Phase::Abandoned}); }
inline CloseReason parse_close_reason(std::string_view s) {
  return parse_enum(s, {CloseReason::Completed, CloseReason::Abandoned, CloseReason::TraineeQuit});
}

struct TranscriptEntry {
  Speaker speaker = Speaker::Bot;
  std::string text;
  std::int64_t ts_ms = 0;
  Tag tag = Tag::Scripted;
  std::optional<std::size_t> expected_turn;  // trainee: script turn it was compared with
  std::optional<double> match_score;         // trainee
  std::size_t candidates = 0;                // fallback bot turn
  std::string note;                          // e.g. generator fallback

  bool operator==(const TranscriptEntry&) const = default;
};

struct SessionState {
  std::string session_id;
  std::string scene_id;
  DialogueScript script;
  SimPolicy policy;
  std::size_t cursor = 0;  // ordinal of the next expected agent turn
  std::vector<TranscriptEntry> transcript;
  Phase phase = Phase::AwaitAgent;
  std::size_t miss_count = 0;
  std::int64_t created_at = 0;
  std::int64_t wait_started_at = 0;
  std::int64_t assigned_at = 0;
  std::optional<std::int64_t> closed_at;
  std::optional<CloseReason> close_reason;

  bool operator==(const SessionState&) const = default;
};

// Non-hint transcript entries.
inline std::size_t round_count(const std::vector<TranscriptEntry>& transcript) {
  std::size_t n = 0;
  for (const auto& e : transcript) n += e.tag != Tag::Hint;
  return n;
}

// Script positions of the agent turns, in order.
inline std::vector<std::size_t> agent_positions(const DialogueScript& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.turns.size(); ++i)
    if (s.turns[i].role == Role::Agent) out.push_back(i);
  return out;
}

struct BotTurnResult {
  std::string bot_utterance;
  Path path = Path::ScriptAdvance;
  double match_score = 0.0;
  std::size_t candidates_considered = 0;
  bool completed = false;
  Phase phase = Phase::AwaitAgent;
  std::string note;
};

struct HintResult {
  std::string hint;
  bool revealed = false;            // hint carries script text
  std::optional<std::string> full;  // full expected utterance, shown on explicit reveal
};

struct SessionRecord {
  std::string session_id;
  std::string scene_id;
  std::string script_id;
  SimPolicy policy;
  std::vector<TranscriptEntry> transcript;
  std::size_t rounds = 0;
  std::int64_t created_at = 0;
  std::int64_t wait_started_at = 0;
  std::int64_t assigned_at = 0;
  std::int64_t closed_at = 0;
  Phase phase = Phase::Abandoned;
  CloseReason reason = CloseReason::Abandoned;
  bool completed = false;
};

inline constexpr const char* kClosingAcknowledgment = "Okay, thank you. That is all I needed.";
inline constexpr const char* kGenericNudge =
    "Try to address the customer's last message directly and follow the standard service procedure.";

// Up to the first clause separator (ASCII or CJK punctuation).
inline std::string first_clause(std::string_view text) {
  std::string out;
  for (char32_t c : coach::detail::utf8_decode(text)) {
    if (c == U',' || c == U'.' || c == U';' || c == U'!' || c == U'?' || c == U'，' || c == U'。' ||
        c == U'；' || c == U'！' || c == U'？' || c == U'、')
      break;
    coach::detail::utf8_append(out, c);
  }
  return std::string(coach::detail::trim(out));
}

// ---------------------------------------------------------------------------
// Engine handles, shared read-only across sessions.

struct Engine {
  std::map<std::string, std::vector<DialogueScript>> scenes;
  std::shared_ptr<const textenc::TextMatcher> matcher;
  std::shared_ptr<const textenc::Encoder> encoder;  // context embedding for retrieval
  std::shared_ptr<const vindex::VectorIndex> index;
  std::shared_ptr<const respond::CandidateGenerator> generator;
  std::shared_ptr<const respond::CandidateGenerator> fallback_generator;  // used when `generator` throws
  std::shared_ptr<const respond::ResponseRanker> ranker;

  void check() const {
    if (!matcher) throw ConfigError("engine: no matcher");
    if (!generator) throw ConfigError("engine: no generator");
    if (!ranker) throw ConfigError("engine: no ranker");
  }

  const std::vector<DialogueScript>& scene(const std::string& id) const {
    const auto it = scenes.find(id);
    if (it == scenes.end()) throw NotFound("unknown scene '" + id + "'");
    if (it->second.empty()) throw ConfigError("scene '" + id + "' has no scripts");
    return it->second;
  }
};

// Scripts grouped by their scene field.
inline std::map<std::string, std::vector<DialogueScript>> group_by_scene(const std::vector<DialogueScript>& scripts) {
  std::map<std::string, std::vector<DialogueScript>> out;
  for (const auto& s : scripts) out[s.scene].push_back(s);
  return out;
}

// ---------------------------------------------------------------------------
// Events

using EventSink = std::function<void(const nlohmann::json&)>;

inline nlohmann::json entry_to_json(const TranscriptEntry& e) {
  nlohmann::json j{{"speaker", to_string(e.speaker)}, {"text", e.text}, {"ts", e.ts_ms}, {"tag", to_string(e.tag)}};
  if (e.expected_turn) j["expected_turn"] = *e.expected_turn;
  if (e.match_score) j["match_score"] = *e.match_score;
  if (e.candidates) j["candidates"] = e.candidates;
  if (!e.note.empty()) j["note"] = e.note;
  return j;
}

inline TranscriptEntry entry_from_json(const nlohmann::json& j) {
  TranscriptEntry e;
  e.speaker = parse_speaker(j.at("speaker").get<std::string>());
  e.text = j.at("text").get<std::string>();
  e.ts_ms = j.at("ts").get<std::int64_t>();
  e.tag = parse_tag(j.at("tag").get<std::string>());
  if (j.contains("expected_turn")) e.expected_turn = j["expected_turn"].get<std::size_t>();
  if (j.contains("match_score")) e.match_score = j["match_score"].get<double>();
  e.candidates = j.value("candidates", std::size_t{0});
  e.note = j.value("note", std::string{});
  return e;
}

inline nlohmann::json record_to_json(const SessionRecord& r) {
  auto t = nlohmann::json::array();
  for (const auto& e : r.transcript) t.push_back(entry_to_json(e));
  return {{"session_id", r.session_id}, {"scene_id", r.scene_id},       {"script_id", r.script_id},
          {"policy", r.policy.to_json()}, {"transcript", t},            {"rounds", r.rounds},
          {"created_at", r.created_at},   {"wait_started_at", r.wait_started_at},
          {"assigned_at", r.assigned_at}, {"closed_at", r.closed_at},   {"phase", to_string(r.phase)},
          {"reason", to_string(r.reason)}, {"completed", r.completed}};
}

inline nlohmann::json state_to_json(const SessionState& s) {
  auto t = nlohmann::json::array();
  for (const auto& e : s.transcript) t.push_back(entry_to_json(e));
  nlohmann::json j{{"session_id", s.session_id}, {"scene_id", s.scene_id},   {"script_id", s.script.id},
                   {"cursor", s.cursor},         {"phase", to_string(s.phase)}, {"miss_count", s.miss_count},
                   {"rounds", round_count(s.transcript)}, {"transcript", t}, {"created_at", s.created_at},
                   {"agent_turns", s.script.agent_turn_count()}};
  if (s.closed_at) j["closed_at"] = *s.closed_at;
  if (s.close_reason) j["close_reason"] = to_string(*s.close_reason);
  return j;
}

// ---------------------------------------------------------------------------
// Simulator

class Simulator {
 public:
  Simulator(std::shared_ptr<const Engine> engine, std::shared_ptr<Clock> clock)
      : engine_(std::move(engine)), clock_(std::move(clock)) {
    if (!engine_) throw ContractViolation("simulator: no engine");
    if (!clock_) clock_ = std::make_shared<SystemClock>();
    engine_->check();
  }

  const Engine& engine() const { return *engine_; }
  Clock& clock() { return *clock_; }

  struct Started {
    SessionState state;
    std::string opening;
  };

  // `wait_started_at` is when the trainee asked for a session; defaults to now.
  Started start_session(const std::string& session_id, const std::string& scene_id, const SimPolicy& policy,
                        std::optional<std::int64_t> wait_started_at = std::nullopt, const EventSink& sink = {}) {
    policy.validate();
    const auto& scripts = engine_->scene(scene_id);
    coach::detail::Rng rng(coach::detail::mix_seed(policy.seed, 0x5C219700));
    const auto& script = scripts[rng.below(scripts.size())];
    if (!validate_script(script).empty()) throw ConfigError("script '" + script.id + "' is invalid");
    if (script.turns.size() + 1 > policy.max_rounds)
      throw ConfigError("policy: max_rounds is shorter than script '" + script.id + "'");

    SessionState s;
    s.session_id = session_id;
    s.scene_id = scene_id;
    s.script = script;
    s.policy = policy;
    const auto now = clock_->now_ms();
    s.created_at = now;
    s.wait_started_at = wait_started_at.value_or(now);
    s.assigned_at = now;
    s.transcript.push_back({Speaker::Bot, script.turns[0].text, now, Tag::Scripted, std::nullopt, std::nullopt, 0, ""});
    if (sink) {
      sink({{"type", "session_start"},
            {"session_id", s.session_id},
            {"scene_id", s.scene_id},
            {"script", to_json(s.script)},
            {"policy", policy.to_json()},
            {"created_at", s.created_at},
            {"wait_started_at", s.wait_started_at},
            {"assigned_at", s.assigned_at}});
      sink(bot_event(s, s.transcript.back()));
    }
    return {std::move(s), script.turns[0].text};
  }

  BotTurnResult agent_reply(SessionState& s, const std::string& text, const EventSink& sink = {},
                            const std::string& token = {}) {
    if (s.phase != Phase::AwaitAgent) throw IllegalState("session " + s.session_id + " is " + std::string(to_string(s.phase)));
    if (coach::detail::trim(text).empty()) throw ContractViolation("agent_reply: empty text");

    const auto positions = agent_positions(s.script);
    const std::size_t expected = positions.at(s.cursor);
    const double score = engine_->matcher->similarity(text, s.script.turns[expected].text);
    const bool advance = score >= s.policy.advance_threshold;
    const auto now = clock_->now_ms();

    TranscriptEntry trainee{Speaker::Trainee, text, now, advance ? Tag::Scripted : Tag::Fallback, expected, score, 0, ""};
    s.transcript.push_back(trainee);
    if (sink) {
      auto ev = nlohmann::json{{"type", "trainee_turn"}, {"session_id", s.session_id}};
      ev["entry"] = entry_to_json(trainee);
      if (!token.empty()) ev["token"] = token;
      sink(ev);
    }

    BotTurnResult r;
    r.match_score = score;
    TranscriptEntry bot{Speaker::Bot, "", now, Tag::Scripted, std::nullopt, std::nullopt, 0, ""};
    if (advance) {
      r.path = Path::ScriptAdvance;
      s.miss_count = 0;
      ++s.cursor;
      const bool exhausted = s.cursor >= positions.size();
      const bool has_next = expected + 1 < s.script.turns.size();
      bot.text = has_next ? s.script.turns[expected + 1].text : kClosingAcknowledgment;
      if (exhausted) {
        s.phase = Phase::Completed;
        r.completed = true;
      }
    } else {
      r.path = Path::Fallback;
      ++s.miss_count;
      auto ranked = fallback_candidates(s, r.note);
      r.candidates_considered = ranked.size();
      bot.tag = Tag::Fallback;
      bot.text = ranked.front().text;
      bot.candidates = ranked.size();
      bot.note = r.note;
    }
    s.transcript.push_back(bot);
    if (s.phase == Phase::AwaitAgent && round_count(s.transcript) > s.policy.max_rounds) s.phase = Phase::Abandoned;
    r.bot_utterance = bot.text;
    r.phase = s.phase;
    if (sink) sink(bot_event(s, bot));
    return r;
  }

  HintResult request_hint(SessionState& s, const EventSink& sink = {}) {
    if (s.phase != Phase::AwaitAgent) throw IllegalState("session " + s.session_id + " is " + std::string(to_string(s.phase)));
    const auto& expected = s.script.turns[agent_positions(s.script).at(s.cursor)].text;
    HintResult h;
    if (s.miss_count >= s.policy.max_misses_before_hint) {
      h.hint = first_clause(expected);
      if (h.hint.empty()) h.hint = expected;
      h.revealed = true;
      h.full = expected;
    } else {
      h.hint = kGenericNudge;
    }
    TranscriptEntry e{Speaker::Bot, h.hint, clock_->now_ms(), Tag::Hint, std::nullopt, std::nullopt, 0, ""};
    s.transcript.push_back(e);
    if (sink) {
      auto ev = nlohmann::json{{"type", "hint"}, {"session_id", s.session_id}, {"revealed", h.revealed}};
      ev["entry"] = entry_to_json(e);
      sink(ev);
    }
    return h;
  }

  SessionRecord close_session(SessionState& s, CloseReason reason, const EventSink& sink = {}) {
    if (!s.closed_at) {
      if (s.phase == Phase::AwaitAgent) s.phase = Phase::Abandoned;
      s.closed_at = clock_->now_ms();
      s.close_reason = reason;
      if (sink)
        sink({{"type", "session_close"},
              {"session_id", s.session_id},
              {"reason", to_string(reason)},
              {"phase", to_string(s.phase)},
              {"ts", *s.closed_at}});
    }
    return make_record(s);
  }

  static SessionRecord make_record(const SessionState& s) {
    SessionRecord r;
    r.session_id = s.session_id;
    r.scene_id = s.scene_id;
    r.script_id = s.script.id;
    r.policy = s.policy;
    r.transcript = s.transcript;
    r.rounds = round_count(s.transcript);
    r.created_at = s.created_at;
    r.wait_started_at = s.wait_started_at;
    r.assigned_at = s.assigned_at;
    r.closed_at = s.closed_at.value_or(s.transcript.empty() ? s.created_at : s.transcript.back().ts_ms);
    r.phase = s.phase;
    r.reason = s.close_reason.value_or(s.phase == Phase::Completed ? CloseReason::Completed : CloseReason::Abandoned);
    r.completed = s.phase == Phase::Completed;
    return r;
  }

 private:
  static nlohmann::json bot_event(const SessionState& s, const TranscriptEntry& e) {
    auto ev = nlohmann::json{{"type", "bot_turn"},   {"session_id", s.session_id}, {"cursor", s.cursor},
                             {"phase", to_string(s.phase)}, {"miss_count", s.miss_count}};
    ev["entry"] = entry_to_json(e);
    return ev;
  }

  // Conversation so far as dialogue turns (bot = customer), hints excluded.
  static std::vector<Turn> context_turns(const SessionState& s) {
    std::vector<std::pair<Role, std::string>> items;
    for (const auto& e : s.transcript)
      if (e.tag != Tag::Hint) items.emplace_back(e.speaker == Speaker::Bot ? Role::Customer : Role::Agent, e.text);
    return make_turns(items);
  }

  std::vector<respond::CandidateResponse> fallback_candidates(const SessionState& s, std::string& note) const {
    const auto context = context_turns(s);
    std::vector<respond::CandidateResponse> pool;
    if (engine_->index && engine_->encoder && !engine_->index->empty()) {
      const auto emb = respond::context_embedding(context, *engine_->encoder, s.policy.context_window);
      if (!emb.oov) pool = respond::retrieve_candidates(*engine_->index, emb.vector, s.policy.retrieval_k, s.policy.approx_retrieval);
    }
    respond::GenerationRequest req;
    const std::size_t first = context.size() > s.policy.context_window ? context.size() - s.policy.context_window : 0;
    req.context.assign(context.begin() + static_cast<std::ptrdiff_t>(first), context.end());
    req.n = s.policy.generation_n;
    req.scene = s.scene_id;
    req.seed = coach::detail::mix_seed(s.policy.seed, round_count(s.transcript));
    std::vector<respond::CandidateResponse> generated;
    try {
      generated = respond::generated_candidates(*engine_->generator, req);
    } catch (const std::exception& e) {
      if (!engine_->fallback_generator) throw;
      generated = respond::generated_candidates(*engine_->fallback_generator, req);
      note = "generator-fallback:" + engine_->fallback_generator->name();
    }
    pool.insert(pool.end(), generated.begin(), generated.end());
    return respond::rank_candidates(*engine_->ranker, context, std::move(pool));
  }

  std::shared_ptr<const Engine> engine_;
  std::shared_ptr<Clock> clock_;
};

// ---------------------------------------------------------------------------
// Event log folding. Rebuilds a session from its events without consulting
// any model, so recovery never changes a transcript.

inline SessionState fold_events(const std::vector<nlohmann::json>& events) {
  SessionState s;
  bool started = false;
  try {
    for (const auto& ev : events) {
      const auto type = ev.at("type").get<std::string>();
      if (type == "session_start") {
        s.session_id = ev.at("session_id").get<std::string>();
        s.scene_id = ev.at("scene_id").get<std::string>();
        s.script = script_from_json(ev.at("script"));
        s.policy = SimPolicy::from_json(ev.at("policy"));
        s.created_at = ev.at("created_at").get<std::int64_t>();
        s.wait_started_at = ev.at("wait_started_at").get<std::int64_t>();
        s.assigned_at = ev.at("assigned_at").get<std::int64_t>();
        started = true;
        continue;
      }
      if (!started) throw IoError("event log: " + type + " before session_start");
      if (type == "trainee_turn" || type == "hint") {
        s.transcript.push_back(entry_from_json(ev.at("entry")));
      } else if (type == "bot_turn") {
        s.transcript.push_back(entry_from_json(ev.at("entry")));
        s.cursor = ev.at("cursor").get<std::size_t>();
        s.phase = parse_phase(ev.at("phase").get<std::string>());
        s.miss_count = ev.at("miss_count").get<std::size_t>();
      } else if (type == "session_close") {
        s.phase = parse_phase(ev.at("phase").get<std::string>());
        s.closed_at = ev.at("ts").get<std::int64_t>();
        s.close_reason = parse_close_reason(ev.at("reason").get<std::string>());
      } else {
        throw IoError("event log: unknown event type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("event log: ") + e.what());
  }
  if (!started) throw IoError("event log: no session_start");
  return s;
}

// A trainee turn whose bot reply never made it to the log is dropped; the
// client will retry it.
inline SessionState recover_session(std::vector<nlohmann::json> events) {
  while (!events.empty() && events.back().value("type", "") == "trainee_turn") events.pop_back();
  return fold_events(events);
}

// Re-runs a session on the simulator with the recorded trainee inputs.
inline SessionState replay_session(Simulator& sim, const SessionState& recorded) {
  auto started = sim.start_session(recorded.session_id, recorded.scene_id, recorded.policy, recorded.wait_started_at);
  auto& s = started.state;
  for (const auto& e : recorded.transcript) {
    if (e.speaker == Speaker::Trainee) sim.agent_reply(s, e.text);
    if (e.tag == Tag::Hint) sim.request_hint(s);
  }
  if (recorded.close_reason) sim.close_session(s, *recorded.close_reason);
  return s;
}

}  // namespace coach::simcore
