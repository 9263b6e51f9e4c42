#pragma once

// Dialogue logs and curated dialogue scripts: data model, line-delimited
// record I/O, validation and corpus statistics.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "coach/detail/utf8.hpp"
#include "coach/error.hpp"
#include "json.hpp"

namespace coach {

enum class Role { Customer, Agent };

inline std::string_view to_string(Role r) { return r == Role::Customer ? "customer" : "agent"; }

inline std::optional<Role> parse_role(std::string_view s) {
  if (s == "customer") return Role::Customer;
  if (s == "agent") return Role::Agent;
  return std::nullopt;
}

struct Turn {
  Role role = Role::Customer;
  std::string text;
  std::size_t index = 0;

  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  std::optional<std::string> scene;

  bool operator==(const Dialogue&) const = default;
};

struct DialogueScript {
  std::string id;
  std::string scene;
  std::vector<Turn> turns;

  bool operator==(const DialogueScript&) const = default;

  std::size_t agent_turn_count() const {
    std::size_t n = 0;
    for (const auto& t : turns) n += t.role == Role::Agent ? 1 : 0;
    return n;
  }
};

// Builds turns with contiguous indices from (role, text) pairs.
inline std::vector<Turn> make_turns(const std::vector<std::pair<Role, std::string>>& items) {
  std::vector<Turn> turns;
  turns.reserve(items.size());
  for (const auto& [role, text] : items) turns.push_back(Turn{role, text, turns.size()});
  return turns;
}

// Throws ContractViolation unless the Dialogue invariants hold.
inline void check_dialogue(const Dialogue& d) {
  if (d.id.empty()) throw ContractViolation("dialogue id must be non-empty");
  if (d.turns.size() < 2) throw ContractViolation("dialogue " + d.id + " has fewer than 2 turns");
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    if (d.turns[i].index != i)
      throw ContractViolation("dialogue " + d.id + ": turn index " + std::to_string(d.turns[i].index) +
                              " at position " + std::to_string(i));
    if (detail::trim(d.turns[i].text).empty())
      throw ContractViolation("dialogue " + d.id + ": empty text at turn " + std::to_string(i));
  }
}

// ---------------------------------------------------------------------------
// Script validation

struct ScriptViolation {
  std::string code;  // "first-turn-not-customer", "non-alternating", ...
  std::optional<std::size_t> turn_index;
  std::string message;
};

using ValidationReport = std::vector<ScriptViolation>;

inline bool has_violation(const ValidationReport& report, std::string_view code) {
  for (const auto& v : report)
    if (v.code == code) return true;
  return false;
}

inline ValidationReport validate_script(const DialogueScript& script) {
  ValidationReport report;
  auto add = [&](std::string code, std::optional<std::size_t> idx, std::string msg) {
    report.push_back(ScriptViolation{std::move(code), idx, std::move(msg)});
  };
  if (script.id.empty()) add("empty-id", std::nullopt, "script id is empty");
  if (script.scene.empty()) add("empty-scene", std::nullopt, "script scene is empty");
  if (script.turns.size() < 2) add("too-few-turns", std::nullopt, "script needs at least 2 turns");
  if (!script.turns.empty() && script.turns.front().role != Role::Customer)
    add("first-turn-not-customer", 0, "first turn must be spoken by the customer");
  for (std::size_t i = 0; i < script.turns.size(); ++i) {
    const auto& t = script.turns[i];
    if (t.index != i) add("bad-index", i, "turn index " + std::to_string(t.index) + " at position " + std::to_string(i));
    if (detail::trim(t.text).empty()) add("empty-text", i, "turn " + std::to_string(i) + " has empty text");
    if (i > 0 && t.role == script.turns[i - 1].role)
      add("non-alternating", i, "turn " + std::to_string(i) + " repeats role " + std::string(to_string(t.role)));
  }
  if (script.agent_turn_count() == 0) add("no-agent-turn", std::nullopt, "script has no agent turn");
  return report;
}

// ---------------------------------------------------------------------------
// Line-delimited records

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

template <typename Record>
struct LoadResult {
  std::vector<Record> records;
  std::vector<LineError> errors;
};

using IngestResult = LoadResult<Dialogue>;
using ScriptLoadResult = LoadResult<DialogueScript>;

namespace detail {

inline std::vector<Turn> parse_turns(const nlohmann::json& j) {
  if (!j.contains("turns") || !j["turns"].is_array()) throw ContractViolation("missing array field 'turns'");
  std::vector<Turn> turns;
  for (const auto& t : j["turns"]) {
    if (!t.is_object()) throw ContractViolation("turn must be an object");
    if (!t.contains("role") || !t["role"].is_string()) throw ContractViolation("turn missing string field 'role'");
    if (!t.contains("text") || !t["text"].is_string()) throw ContractViolation("turn missing string field 'text'");
    const auto role = parse_role(t["role"].get<std::string>());
    if (!role) throw ContractViolation("unknown role '" + t["role"].get<std::string>() + "'");
    turns.push_back(Turn{*role, t["text"].get<std::string>(), turns.size()});
  }
  return turns;
}

inline nlohmann::json turns_to_json(const std::vector<Turn>& turns) {
  auto arr = nlohmann::json::array();
  for (const auto& t : turns) arr.push_back({{"role", to_string(t.role)}, {"text", t.text}});
  return arr;
}

template <typename Record, typename ParseFn>
LoadResult<Record> load_lines(std::istream& in, ParseFn parse) {
  LoadResult<Record> result;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      Record rec = parse(nlohmann::json::parse(line));
      if (!seen.insert(rec.id).second) throw ContractViolation("duplicate id '" + rec.id + "'");
      result.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      result.errors.push_back(LineError{lineno, e.what()});
    } catch (const ContractViolation& e) {
      result.errors.push_back(LineError{lineno, e.what()});
    }
  }
  return result;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return in;
}

}  // namespace detail

inline Dialogue dialogue_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractViolation("record must be an object");
  if (!j.contains("id") || !j["id"].is_string()) throw ContractViolation("missing string field 'id'");
  Dialogue d;
  d.id = j["id"].get<std::string>();
  if (j.contains("scene") && !j["scene"].is_null()) {
    if (!j["scene"].is_string()) throw ContractViolation("field 'scene' must be a string");
    d.scene = j["scene"].get<std::string>();
  }
  d.turns = detail::parse_turns(j);
  check_dialogue(d);
  return d;
}

inline nlohmann::json to_json(const Dialogue& d) {
  nlohmann::json j{{"id", d.id}};
  if (d.scene) j["scene"] = *d.scene;
  j["turns"] = detail::turns_to_json(d.turns);
  return j;
}

inline DialogueScript script_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractViolation("record must be an object");
  if (!j.contains("id") || !j["id"].is_string()) throw ContractViolation("missing string field 'id'");
  if (!j.contains("scene") || !j["scene"].is_string()) throw ContractViolation("missing string field 'scene'");
  DialogueScript s{j["id"].get<std::string>(), j["scene"].get<std::string>(), detail::parse_turns(j)};
  const auto report = validate_script(s);
  if (!report.empty()) throw ContractViolation("invalid script: " + report.front().code);
  return s;
}

inline nlohmann::json to_json(const DialogueScript& s) {
  return {{"id", s.id}, {"scene", s.scene}, {"turns", detail::turns_to_json(s.turns)}};
}

inline IngestResult ingest_log(std::istream& in) { return detail::load_lines<Dialogue>(in, dialogue_from_json); }

// Well-formed dialogues in file order; malformed lines land in `errors`.
inline IngestResult ingest_log(const std::string& path) {
  auto in = detail::open_input(path);
  return ingest_log(in);
}

inline ScriptLoadResult load_scripts(std::istream& in) {
  return detail::load_lines<DialogueScript>(in, script_from_json);
}

inline ScriptLoadResult load_scripts(const std::string& path) {
  auto in = detail::open_input(path);
  return load_scripts(in);
}

template <typename Record>
void write_records(std::ostream& out, const std::vector<Record>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

template <typename Record>
void write_records(const std::string& path, const std::vector<Record>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_records(out, records);
}

// ---------------------------------------------------------------------------
// Statistics

// Rounds are turns. Lengths are Unicode code points over all turn texts.
struct CorpusStats {
  std::size_t num_dialogs = 0;
  double avg_rounds = 0.0;
  double avg_length = 0.0;
  std::uint64_t total_turns = 0;  // exact numerators behind the means
  std::uint64_t total_chars = 0;
};

inline std::size_t dialogue_length(const Dialogue& d) {
  std::size_t n = 0;
  for (const auto& t : d.turns) n += detail::utf8_length(t.text);
  return n;
}

inline CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues) {
  CorpusStats s;
  s.num_dialogs = dialogues.size();
  for (const auto& d : dialogues) {
    s.total_turns += d.turns.size();
    s.total_chars += dialogue_length(d);
  }
  if (s.num_dialogs > 0) {
    s.avg_rounds = static_cast<double>(s.total_turns) / static_cast<double>(s.num_dialogs);
    s.avg_length = static_cast<double>(s.total_chars) / static_cast<double>(s.num_dialogs);
  }
  return s;
}

inline nlohmann::json to_json(const CorpusStats& s) {
  return {{"num_dialogs", s.num_dialogs}, {"avg_rounds", s.avg_rounds}, {"avg_length", s.avg_length},
          {"total_turns", s.total_turns}, {"total_chars", s.total_chars}};
}

}  // namespace coach
