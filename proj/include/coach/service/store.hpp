#pragma once

// Event-sourced session store. Each session owns one append-only JSONL file
// `<session_id>.jsonl` in the session directory; the in-memory state is a
// cache that can always be rebuilt by folding the file.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "coach/error.hpp"
#include "coach/simcore.hpp"
#include "json.hpp"

namespace coach::service {

namespace fs = std::filesystem;

// Events of one log file. A final line without its newline is what a crash
// mid-write leaves behind and is dropped; any other bad line is an error.
inline std::vector<nlohmann::json> read_event_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<nlohmann::json> events;
  std::size_t pos = 0, lineno = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = data.substr(pos, complete ? nl - pos : std::string::npos);
    pos = complete ? nl + 1 : data.size();
    ++lineno;
    if (line.empty()) continue;
    try {
      events.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      if (!complete) break;
      throw IoError(p.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return events;
}

inline void write_event_file(const fs::path& p, const std::vector<nlohmann::json>& events) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& e : events) out << e.dump() << '\n';
    if (!out.flush()) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

// Body of a message reply; rebuilt verbatim from the log for idempotent replay.
inline nlohmann::json reply_body(const simcore::TranscriptEntry& bot, simcore::Phase phase) {
  const auto path = bot.tag == simcore::Tag::Scripted ? simcore::Path::ScriptAdvance : simcore::Path::Fallback;
  return {{"bot_utterance", bot.text},
          {"path", simcore::to_string(path)},
          {"completed", phase == simcore::Phase::Completed},
          {"phase", simcore::to_string(phase)}};
}

struct SessionSlot {
  std::mutex mu;  // serialises every request on this session
  simcore::SessionState state;
  std::map<std::string, nlohmann::json> replies;  // idempotency token -> reply body
  fs::path log_path;
  std::ofstream log;

  void append(const nlohmann::json& event) {
    if (!log.is_open()) {
      log.open(log_path, std::ios::binary | std::ios::app);
      if (!log) throw IoError("cannot open " + log_path.string());
    }
    log << event.dump() << '\n';
    log.flush();
    if (!log) throw IoError("append failed: " + log_path.string());
  }

  simcore::EventSink sink() {
    return [this](const nlohmann::json& e) { append(e); };
  }
};

struct RecoveredLog {
  simcore::SessionState state;
  std::map<std::string, nlohmann::json> replies;
  std::vector<nlohmann::json> events;  // the events kept
  bool trimmed = false;                // an unanswered trainee turn was dropped
};

inline RecoveredLog recover_log(const fs::path& p) {
  RecoveredLog r;
  auto events = read_event_file(p);
  const auto n = events.size();
  r.state = simcore::recover_session(events);
  while (!events.empty() && events.back().value("type", "") == "trainee_turn") events.pop_back();
  r.trimmed = events.size() != n;
  std::string pending;
  for (const auto& ev : events) {
    const auto type = ev.value("type", "");
    if (type == "trainee_turn") {
      pending = ev.value("token", "");
    } else if (type == "bot_turn") {
      if (!pending.empty())
        r.replies[pending] = reply_body(simcore::entry_from_json(ev.at("entry")),
                                        simcore::parse_phase(ev.at("phase").get<std::string>()));
      pending.clear();
    }
  }
  r.events = std::move(events);
  return r;
}

// Read-only view of a session directory (or a single log file), ordered by
// file name. Nothing is rewritten.
inline std::vector<simcore::SessionState> load_session_logs(const fs::path& where) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(where)) {
    files.push_back(where);
  } else if (fs::is_directory(where)) {
    for (const auto& e : fs::directory_iterator(where))
      if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  } else {
    throw IoError("no such file or directory: " + where.string());
  }
  std::sort(files.begin(), files.end());
  std::vector<simcore::SessionState> out;
  for (const auto& f : files) out.push_back(simcore::recover_session(read_event_file(f)));
  return out;
}

inline std::string format_session_id(std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(n));
  return buf;
}

// Numeric part of "sNNNNNN", or 0 when the name does not follow the scheme.
inline std::uint64_t session_number(const std::string& id) {
  if (id.size() < 2 || id[0] != 's') return 0;
  std::uint64_t n = 0;
  for (std::size_t i = 1; i < id.size(); ++i) {
    if (id[i] < '0' || id[i] > '9') return 0;
    n = n * 10 + static_cast<std::uint64_t>(id[i] - '0');
  }
  return n;
}

class SessionStore {
 public:
  // Creates the directory when needed and recovers every log in it.
  explicit SessionStore(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir_))
      if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto rec = recover_log(f);
      if (rec.trimmed) write_event_file(f, rec.events);
      auto slot = std::make_shared<SessionSlot>();
      slot->state = std::move(rec.state);
      slot->replies = std::move(rec.replies);
      slot->log_path = f;
      const auto id = slot->state.session_id;
      if (f.stem().string() != id) throw IoError(f.string() + ": log belongs to session '" + id + "'");
      next_ = std::max(next_, session_number(id) + 1);
      slots_.emplace(id, std::move(slot));
      ++recovered_;
    }
  }

  const fs::path& dir() const { return dir_; }
  std::size_t recovered() const { return recovered_; }

  struct Reserved {
    std::string id;
    std::shared_ptr<SessionSlot> slot;
    std::unique_lock<std::mutex> lock;  // held until the session is started
  };

  // Reserves a fresh id and its still-empty slot, already locked.
  Reserved create() {
    std::lock_guard lock(mu_);
    Reserved r{format_session_id(next_++), std::make_shared<SessionSlot>(), {}};
    r.lock = std::unique_lock(r.slot->mu);
    r.slot->log_path = dir_ / (r.id + ".jsonl");
    slots_.emplace(r.id, r.slot);
    return r;
  }

  void discard(const std::string& id) {
    std::lock_guard lock(mu_);
    const auto it = slots_.find(id);
    if (it == slots_.end()) return;
    const auto path = it->second->log_path;
    slots_.erase(it);
    std::error_code ec;
    fs::remove(path, ec);
  }

  std::shared_ptr<SessionSlot> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = slots_.find(id);
    if (it == slots_.end()) throw NotFound("unknown session '" + id + "'");
    return it->second;
  }

  std::vector<std::shared_ptr<SessionSlot>> all() const {
    std::lock_guard lock(mu_);
    std::vector<std::shared_ptr<SessionSlot>> out;
    for (const auto& [id, s] : slots_) out.push_back(s);
    return out;
  }

 private:
  fs::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<SessionSlot>> slots_;
  std::uint64_t next_ = 1;
  std::size_t recovered_ = 0;
};

}  // namespace coach::service
