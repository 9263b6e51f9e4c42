#pragma once

// Transport-independent request handlers. Each returns an HTTP status and a
// JSON body; http.hpp only routes.

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "coach/error.hpp"
#include "coach/scorecard.hpp"
#include "coach/service/bundle.hpp"
#include "coach/service/config.hpp"
#include "coach/service/store.hpp"
#include "coach/simcore.hpp"
#include "json.hpp"

namespace coach::service {

enum class ApiCode { NotFound, IllegalState, BadRequest, Internal };

inline std::string_view to_string(ApiCode c) {
  switch (c) {
    case ApiCode::NotFound: return "NotFound";
    case ApiCode::IllegalState: return "IllegalState";
    case ApiCode::BadRequest: return "BadRequest";
    case ApiCode::Internal: return "Internal";
  }
  return "Internal";
}

inline int http_status(ApiCode c) {
  switch (c) {
    case ApiCode::NotFound: return 404;
    case ApiCode::IllegalState: return 409;
    case ApiCode::BadRequest: return 400;
    case ApiCode::Internal: return 500;
  }
  return 500;
}

struct ApiError {
  ApiCode code = ApiCode::Internal;
  std::string message;

  nlohmann::json to_json() const { return {{"error", to_string(code)}, {"message", message}}; }
};

inline ApiError classify(const std::exception& e) {
  if (dynamic_cast<const NotFound*>(&e)) return {ApiCode::NotFound, e.what()};
  if (dynamic_cast<const IllegalState*>(&e) || dynamic_cast<const UndefinedValue*>(&e))
    return {ApiCode::IllegalState, e.what()};
  if (dynamic_cast<const ContractViolation*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const nlohmann::json::exception*>(&e))
    return {ApiCode::BadRequest, e.what()};
  return {ApiCode::Internal, e.what()};
}

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

inline nlohmann::json parse_body(const std::string& body) {
  if (body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(body);  // json::exception -> 400
  if (!j.is_object()) throw ContractViolation("request body must be a JSON object");
  return j;
}

inline std::string required_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw ContractViolation(std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

class Service {
 public:
  Service(Bundle bundle, ServiceConfig cfg, std::shared_ptr<simcore::Clock> clock = {})
      : bundle_(std::move(bundle)),
        cfg_(std::move(cfg)),
        sim_(bundle_.engine, clock ? std::move(clock) : std::make_shared<simcore::SystemClock>()),
        store_(cfg_.session_dir()) {
    if (!bundle_.fluency) throw ConfigError("service: no fluency backend");
  }

  const ServiceConfig& config() const { return cfg_; }
  SessionStore& store() { return store_; }
  const Bundle& bundle() const { return bundle_; }

  // GET /scenes
  ApiResponse scenes() const {
    return guard([&] {
      auto out = nlohmann::json::array();
      for (const auto& [id, scripts] : bundle_.engine->scenes) {
        std::size_t turns = 0;
        for (const auto& s : scripts) turns = std::max(turns, s.agent_turn_count());
        out.push_back({{"scene_id", id},
                       {"scripts", scripts.size()},
                       {"agent_turns", turns},
                       {"opening", scripts.front().turns.front().text}});
      }
      return ApiResponse{200, out};
    });
  }

  // POST /sessions {scene_id[, wait_started_at]}
  ApiResponse create_session(const std::string& body) {
    return guard([&] {
      const auto j = parse_body(body);
      const auto scene = required_string(j, "scene_id");
      bundle_.engine->scene(scene);  // NotFound before an id is spent
      std::optional<std::int64_t> waited;
      if (j.contains("wait_started_at")) waited = j["wait_started_at"].get<std::int64_t>();
      auto r = store_.create();
      try {
        auto policy = cfg_.policy;
        policy.seed = coach::detail::mix_seed(cfg_.seed, session_number(r.id));
        auto started = sim_.start_session(r.id, scene, policy, waited, r.slot->sink());
        r.slot->state = std::move(started.state);
        return ApiResponse{201, {{"session_id", r.id}, {"scene_id", scene}, {"opening_utterance", started.opening}}};
      } catch (...) {
        r.lock.unlock();
        store_.discard(r.id);
        throw;
      }
    });
  }

  // POST /sessions/{id}/messages {text, idempotency_token}
  ApiResponse post_message(const std::string& id, const std::string& body) {
    return guard([&] {
      const auto j = parse_body(body);
      const auto text = required_string(j, "text");
      const std::string token = j.contains("idempotency_token") ? required_string(j, "idempotency_token") : "";
      auto slot = store_.get(id);
      std::lock_guard lock(slot->mu);
      if (!token.empty())
        if (const auto it = slot->replies.find(token); it != slot->replies.end()) return ApiResponse{200, it->second};
      auto& s = slot->state;
      const auto r = sim_.agent_reply(s, text, slot->sink(), token);
      auto reply = reply_body(s.transcript.back(), r.phase);
      if (!token.empty()) slot->replies[token] = reply;
      if (s.phase != simcore::Phase::AwaitAgent)
        sim_.close_session(s, s.phase == simcore::Phase::Completed ? simcore::CloseReason::Completed
                                                                   : simcore::CloseReason::Abandoned,
                           slot->sink());
      return ApiResponse{200, reply};
    });
  }

  // POST /sessions/{id}/hint
  ApiResponse hint(const std::string& id) {
    return guard([&] {
      auto slot = store_.get(id);
      std::lock_guard lock(slot->mu);
      const auto h = sim_.request_hint(slot->state, slot->sink());
      nlohmann::json out{{"hint", h.hint}, {"revealed", h.revealed}};
      if (h.full) out["full"] = *h.full;
      return ApiResponse{200, out};
    });
  }

  // POST /sessions/{id}/close {reason}
  ApiResponse close(const std::string& id, const std::string& body) {
    return guard([&] {
      const auto j = parse_body(body);
      auto reason = simcore::CloseReason::TraineeQuit;
      if (j.contains("reason")) reason = simcore::parse_close_reason(required_string(j, "reason"));
      auto slot = store_.get(id);
      std::lock_guard lock(slot->mu);
      const auto rec = sim_.close_session(slot->state, reason, slot->sink());
      return ApiResponse{200, record_summary(rec)};
    });
  }

  // GET /sessions/{id}
  ApiResponse session(const std::string& id) const {
    return guard([&] {
      auto slot = store_.get(id);
      std::lock_guard lock(slot->mu);
      return ApiResponse{200, simcore::state_to_json(slot->state)};
    });
  }

  // GET /sessions/{id}/score
  ApiResponse score(const std::string& id) const {
    return guard([&] {
      auto slot = store_.get(id);
      std::lock_guard lock(slot->mu);
      return ApiResponse{200, scorecard::to_json(score_state(slot->state))};
    });
  }

  // GET /metrics: over sessions that have ended.
  ApiResponse metrics() const {
    return guard([&] {
      const auto records = finished_records();
      if (records.empty()) throw NotFound("no sessions");
      return ApiResponse{200, scorecard::aggregate_metrics(records).to_json()};
    });
  }

  scorecard::SessionScore score_state(const simcore::SessionState& s) const {
    return scorecard::evaluate_session(simcore::Simulator::make_record(s), s.script, *bundle_.fluency,
                                       *bundle_.engine->matcher, bundle_.rules, cfg_.score);
  }

  std::vector<simcore::SessionRecord> finished_records() const {
    std::vector<simcore::SessionRecord> out;
    for (const auto& slot : store_.all()) {
      std::lock_guard lock(slot->mu);
      if (slot->state.session_id.empty() || slot->state.phase == simcore::Phase::AwaitAgent) continue;
      out.push_back(simcore::Simulator::make_record(slot->state));
    }
    return out;
  }

 private:
  static nlohmann::json record_summary(const simcore::SessionRecord& r) {
    return {{"session_id", r.session_id}, {"phase", simcore::to_string(r.phase)}, {"reason", simcore::to_string(r.reason)},
            {"completed", r.completed},   {"rounds", r.rounds}};
  }

  template <typename F>
  static ApiResponse guard(F&& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      const auto err = classify(e);
      return {http_status(err.code), err.to_json()};
    }
  }

  Bundle bundle_;
  ServiceConfig cfg_;
  simcore::Simulator sim_;
  SessionStore store_;
};

}  // namespace coach::service
