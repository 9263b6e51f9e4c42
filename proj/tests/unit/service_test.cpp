#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "coach/service/api.hpp"
#include "coach/service/config.hpp"
#include "coach/service/generator_client.hpp"
#include "coach/service/http.hpp"
#include "coach/service/store.hpp"
#include "httplib.h"
#include "support/service_fixture.hpp"

using namespace coach;
using namespace coach::service;
namespace fx = coach::testing;
using nlohmann::json;

namespace {

std::string start(Service& svc, const std::string& scene) {
  const auto r = svc.create_session(fx::body_of("scene_id", scene));
  EXPECT_EQ(r.status, 201) << r.body.dump();
  return r.body.at("session_id").get<std::string>();
}

json message(const std::string& text, const std::string& token = "") {
  json j{{"text", text}};
  if (!token.empty()) j["idempotency_token"] = token;
  return j;
}

ApiResponse say(Service& svc, const std::string& id, const std::string& text, const std::string& token = "") {
  return svc.post_message(id, message(text, token).dump());
}

// Echo trainee to completion.
void finish(Service& svc, const std::string& id) {
  for (int guard = 0; guard < 20; ++guard) {
    if (fx::snapshot(svc, id).phase != simcore::Phase::AwaitAgent) return;
    ASSERT_EQ(say(svc, id, fx::expected_reply(svc, id)).status, 200);
  }
  FAIL() << "session did not finish";
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultsValidate) {
  ServiceConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.session_dir(), std::filesystem::path(".") / "sessions");
}

TEST(Config, JsonPathsResolveAgainstConfigDir) {
  ServiceConfig c;
  apply_json(c, json{{"artifact_dir", "art"}, {"paths", {{"rules", "/etc/rules.jsonl"}}}, {"port", 9000}}, "/srv/coach");
  EXPECT_EQ(c.corpus_path(), std::filesystem::path("/srv/coach/art/corpus.jsonl"));
  EXPECT_EQ(c.rules_path(), std::filesystem::path("/etc/rules.jsonl"));
  EXPECT_EQ(c.port, 9000);
}

TEST(Config, EnvironmentOverridesFile) {
  ServiceConfig c;
  apply_json(c, json{{"port", 9000}, {"seed", 3}}, ".");
  const std::map<std::string, std::string> env{{"COACH_PORT", "9100"}, {"COACH_SEED", "42"},
                                               {"COACH_GENERATOR_URL", "http://gen:1/x"}};
  apply_env(c, [&](const char* k) -> const char* {
    const auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.port, 9100);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.generator.url, "http://gen:1/x");
}

TEST(Config, Errors) {
  ServiceConfig c;
  c.generator.timeout_ms = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.port = 70000;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  EXPECT_THROW(apply_json(c, json{{"port", "x"}}, "."), ConfigError);
  EXPECT_THROW(apply_env(c, [](const char* k) -> const char* { return std::string(k) == "COACH_PORT" ? "80a" : nullptr; }),
               ConfigError);
  EXPECT_THROW(load_config("/nonexistent/coach.json"), ConfigError);
}

TEST(Config, MissingArtifactsFailStartup) {
  fx::TempDir dir;
  auto c = fx::fixture_config(dir.path());
  EXPECT_THROW(load_bundle(c), ConfigError);
}

// ---------------------------------------------------------------------------
// Errors and URLs

TEST(ApiErrors, FixedStatusMapping) {
  EXPECT_EQ(http_status(classify(NotFound("x")).code), 404);
  EXPECT_EQ(http_status(classify(IllegalState("x")).code), 409);
  EXPECT_EQ(http_status(classify(UndefinedValue("x")).code), 409);
  EXPECT_EQ(http_status(classify(ContractViolation("x")).code), 400);
  EXPECT_EQ(http_status(classify(ConfigError("x")).code), 400);
  EXPECT_EQ(http_status(classify(IoError("x")).code), 500);
  EXPECT_EQ(http_status(classify(std::runtime_error("x")).code), 500);
}

TEST(GeneratorClient, ParseUrl) {
  EXPECT_EQ(parse_url("http://127.0.0.1:9000/gen").origin, "http://127.0.0.1:9000");
  EXPECT_EQ(parse_url("http://127.0.0.1:9000/gen").path, "/gen");
  EXPECT_EQ(parse_url("http://host").path, "/");
  EXPECT_THROW(parse_url("ftp://host/x"), ConfigError);
  EXPECT_THROW(parse_url("host:80"), ConfigError);
}

// ---------------------------------------------------------------------------
// Event files

TEST(EventFile, TruncatedTailIsDropped) {
  fx::TempDir dir;
  const auto p = dir / "s000001.jsonl";
  std::ofstream(p) << "{\"a\":1}\n{\"b\":2}\n{\"c\":";
  const auto ev = read_event_file(p);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[1]["b"], 2);
}

TEST(EventFile, CorruptMiddleLineIsAnError) {
  fx::TempDir dir;
  const auto p = dir / "s000001.jsonl";
  std::ofstream(p) << "{\"a\":1}\nnot json\n{\"b\":2}\n";
  EXPECT_THROW(read_event_file(p), IoError);
}

TEST(SessionIds, Format) {
  EXPECT_EQ(format_session_id(1), "s000001");
  EXPECT_EQ(session_number("s000042"), 42u);
  EXPECT_EQ(session_number("x12"), 0u);
}

// ---------------------------------------------------------------------------
// Service handlers

TEST(Service, ScenesOnTwoSceneDeployment) {
  fx::TempDir dir;
  const auto all = fx::canonical_scripts();
  Service svc(fx::fixture_bundle({all[0], all[1], all[2], all[3]}), fx::fixture_config(dir.path()));
  const auto r = svc.scenes();
  ASSERT_EQ(r.status, 200);
  ASSERT_EQ(r.body.size(), 2u);
  EXPECT_EQ(r.body[0]["scene_id"], "delivery");
  EXPECT_EQ(r.body[1]["scene_id"], "refund");
}

TEST(Service, UnknownSceneIs404AndSpendsNoId) {
  fx::TempDir dir;
  Service svc(fx::fixture_bundle(), fx::fixture_config(dir.path()));
  const auto r = svc.create_session(fx::body_of("scene_id", "nope"));
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.body["error"], "NotFound");
  EXPECT_EQ(start(svc, "refund"), "s000001");
  EXPECT_EQ(svc.session("s000009").status, 404);
}

TEST(Service, BadRequests) {
  fx::TempDir dir;
  Service svc(fx::fixture_bundle(), fx::fixture_config(dir.path()));
  EXPECT_EQ(svc.create_session("{not json").status, 400);
  EXPECT_EQ(svc.create_session("[]").status, 400);
  EXPECT_EQ(svc.create_session("{}").status, 400);
  const auto id = start(svc, "refund");
  EXPECT_EQ(say(svc, id, "").status, 400);
  EXPECT_EQ(say(svc, id, "   ").status, 400);
  EXPECT_EQ(svc.post_message(id, "{}").status, 400);
  EXPECT_EQ(svc.close(id, fx::body_of("reason", "bored")).status, 400);
  EXPECT_EQ(fx::snapshot(svc, id).transcript.size(), 1u);
}

TEST(Service, ExpectedUtteranceAdvances) {
  fx::TempDir dir;
  Service svc(fx::fixture_bundle(), fx::fixture_config(dir.path()));
  const auto id = start(svc, "password");
  const auto r = say(svc, id, fx::expected_reply(svc, id));
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["path"], "script_advance");
  EXPECT_EQ(r.body["completed"], false);
  EXPECT_EQ(fx::snapshot(svc, id).cursor, 1u);
}

TEST(Service, DuplicateTokenReplaysWithoutNewTurn) {
  fx::TempDir dir;
  Service svc(fx::fixture_bundle(), fx::fixture_config(dir.path()));
  const auto id = start(svc, "refund");
  const auto a = say(svc, id, "what colour is the sky", "tok-1");
  const auto n = fx::snapshot(svc, id).transcript.size();
  const auto b = say(svc, id, "what colour is the sky", "tok-1");
  EXPECT_EQ(a.body.dump(), b.body.dump());
  EXPECT_EQ(fx::snapshot(svc, id).transcript.size(), n);
  // Same token, different text: still the first answer.
  EXPECT_EQ(say(svc, id, "something else", "tok-1").body.dump(), a.body.dump());
  EXPECT_EQ(fx::snapshot(svc, id).transcript.size(), n);
}

TEST(Service, CompletionThenConflict) {
  fx::TempDir dir;
  Service svc(fx::fixture_bundle(), fx::fixture_config(dir.path()));
  const auto id = start(svc, "delivery");
  std::string last_token;
  for (int k = 0; fx::snapshot(svc, id).phase == simcore::Phase::AwaitAgent; ++k) {
    last_token = "t" + std::to_string(k);
    say(svc, id, fx::expected_reply(svc, id), last_token);
  }
  const auto s = fx::snapshot(svc, id);
  EXPECT_EQ(s.phase, simcore::Phase::Completed);
  EXPECT_EQ(s.close_reason, simcore::CloseReason::Completed);
  const auto r = say(svc, id, "hello again");
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(r.body["error"], "IllegalState");
  EXPECT_EQ(svc.hint(id).status, 409);
  // A retried final message still gets its original reply.
  const auto again = say(svc, id, "ignored", last_token);
  EXPECT_EQ(again.status, 200);
  EXPECT_EQ(again.body["completed"], true);
}

TEST(Service, HintGating) {
  fx::TempDir dir;
  auto cfg = fx::fixture_config(dir.path());
  cfg.policy.max_misses_before_hint = 1;
  Service svc(fx::fixture_bundle(), cfg);
  const auto id = start(svc, "complaint");
  EXPECT_EQ(svc.hint(id).body["revealed"], false);
  say(svc, id, "zzqx vvwk");
  const auto h = svc.hint(id);
  EXPECT_EQ(h.body["revealed"], true);
  EXPECT_EQ(h.body["full"], fx::expected_reply(svc, id));
}

TEST(Service, ScoreNeedsATraineeTurn) {
  fx::TempDir dir;
  Service svc(fx::fixture_bundle(), fx::fixture_config(dir.path()));
  const auto id = start(svc, "refund");
  EXPECT_EQ(svc.score(id).status, 409);
  say(svc, id, fx::expected_reply(svc, id));
  const auto r = svc.score(id);
  ASSERT_EQ(r.status, 200);
  for (const char* k : {"session_id", "fluency", "consistency", "compliance", "final", "reasons", "per_turn"})
    EXPECT_TRUE(r.body.contains(k)) << k;
}

TEST(Service, ApiScoreEqualsLibraryScore) {
  fx::TempDir dir;
  Service svc(fx::fixture_bundle(), fx::fixture_config(dir.path()));
  const auto id = start(svc, "refund");
  say(svc, id, "you are stupid");
  say(svc, id, fx::expected_reply(svc, id));
  finish(svc, id);
  const auto api = svc.score(id).body.dump();

  // Library path: fold the event log and score with the same models.
  const auto state = simcore::recover_session(read_event_file(dir.path() / "sessions" / (id + ".jsonl")));
  const auto b = fx::fixture_bundle();
  const auto lib = scorecard::evaluate_session(simcore::Simulator::make_record(state), state.script, *b.fluency,
                                               *b.engine->matcher, b.rules, {});
  EXPECT_EQ(api, scorecard::to_json(lib).dump());
  EXPECT_EQ(lib.compliance, 0);
}

TEST(Service, MetricsCountFinishedSessions) {
  fx::TempDir dir;
  Service svc(fx::fixture_bundle(), fx::fixture_config(dir.path()));
  EXPECT_EQ(svc.metrics().status, 404);
  std::vector<std::string> ids;
  for (int k = 0; k < 4; ++k) ids.push_back(start(svc, "refund"));
  for (int k = 0; k < 3; ++k) finish(svc, ids[k]);
  EXPECT_EQ(svc.metrics().body["sessions"], 3);
  EXPECT_EQ(svc.close(ids[3], fx::body_of("reason", "trainee_quit")).status, 200);
  const auto m = svc.metrics().body;
  EXPECT_EQ(m["sessions"], 4);
  EXPECT_DOUBLE_EQ(m["completion_rate"].get<double>(), 75.0);
  // Close is idempotent.
  EXPECT_EQ(svc.close(ids[3], "{}").body["reason"], "trainee_quit");
}

// ---------------------------------------------------------------------------
// Persistence

TEST(Recovery, RestartRestoresStateAndTokens) {
  fx::TempDir dir;
  const auto cfg = fx::fixture_config(dir.path());
  std::map<std::string, simcore::SessionState> before;
  json token_reply;
  {
    Service svc(fx::fixture_bundle(), cfg);
    const auto a = start(svc, "refund");
    token_reply = say(svc, a, "zzqx vvwk", "k1").body;
    svc.hint(a);
    const auto b = start(svc, "password");
    say(svc, b, fx::expected_reply(svc, b), "k2");
    const auto c = start(svc, "delivery");
    finish(svc, c);
    for (const auto& id : {a, b, c}) before[id] = fx::snapshot(svc, id);
  }  // dropped without closing anything

  Service again(fx::fixture_bundle(), cfg);
  EXPECT_EQ(again.store().recovered(), 3u);
  for (const auto& [id, s] : before) EXPECT_EQ(fx::snapshot(again, id), s) << id;
  EXPECT_EQ(say(again, "s000001", "anything", "k1").body.dump(), token_reply.dump());
  EXPECT_EQ(start(again, "refund"), "s000004");
  EXPECT_EQ(say(again, "s000002", fx::expected_reply(again, "s000002")).status, 200);
}

TEST(Recovery, UnansweredTraineeTurnIsDroppedAndRetried) {
  fx::TempDir dir;
  const auto cfg = fx::fixture_config(dir.path());
  simcore::SessionState before;
  std::string id;
  {
    Service svc(fx::fixture_bundle(), cfg);
    id = start(svc, "refund");
    say(svc, id, fx::expected_reply(svc, id), "k1");
    before = fx::snapshot(svc, id);
  }
  const auto log = dir.path() / "sessions" / (id + ".jsonl");
  // Crash between logging the trainee turn and the bot reply.
  std::ofstream(log, std::ios::app) << json{{"type", "trainee_turn"}, {"session_id", id}, {"token", "k2"},
                                            {"entry", simcore::entry_to_json({simcore::Speaker::Trainee, "half", 5})}}
                                           .dump()
                                    << "\n{\"type\":\"bot_t";
  Service again(fx::fixture_bundle(), cfg);
  EXPECT_EQ(fx::snapshot(again, id), before);
  EXPECT_EQ(read_event_file(log).back()["type"], "bot_turn");
  const auto r = say(again, id, fx::expected_reply(again, id), "k2");
  EXPECT_EQ(r.body["path"], "script_advance");
  EXPECT_EQ(fx::snapshot(again, id).transcript.size(), before.transcript.size() + 2);
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

struct LiveServer {
  fx::TempDir dir;
  std::shared_ptr<Service> svc;
  std::unique_ptr<HttpServer> http;
  int port = 0;

  explicit LiveServer(Bundle b, ServiceConfig cfg = {}) {
    cfg.artifact_dir = dir.path();
    svc = std::make_shared<Service>(std::move(b), cfg,
                                    std::make_shared<simcore::ManualClock>(1'700'000'000'000));
    http = std::make_unique<HttpServer>(svc);
    port = http->bind("127.0.0.1", 0);
    http->start();
  }
  ~LiveServer() { http->stop(); }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(20, 0);
    return c;
  }
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect = 200) {
  const auto r = c.Post(path, body.dump(), "application/json");
  EXPECT_TRUE(r) << path;
  if (!r) return {};
  EXPECT_EQ(r->status, expect) << path << " " << r->body;
  return json::parse(r->body);
}

json get(httplib::Client& c, const std::string& path, int expect = 200) {
  const auto r = c.Get(path);
  EXPECT_TRUE(r) << path;
  if (!r) return {};
  EXPECT_EQ(r->status, expect) << path << " " << r->body;
  return json::parse(r->body);
}

}  // namespace

TEST(Http, EndpointsAndStatuses) {
  LiveServer srv(fx::fixture_bundle());
  auto c = srv.client();
  EXPECT_EQ(get(c, "/scenes").size(), 4u);
  post(c, "/sessions", {{"scene_id", "nope"}}, 404);
  const auto id = post(c, "/sessions", {{"scene_id", "refund"}}, 201)["session_id"].get<std::string>();
  get(c, "/sessions/" + id + "/score", 409);
  post(c, "/sessions/" + id + "/messages", {{"text", ""}}, 400);
  const auto r = post(c, "/sessions/" + id + "/messages",
                      {{"text", fx::expected_reply(*srv.svc, id)}, {"idempotency_token", "a"}});
  EXPECT_EQ(r["path"], "script_advance");
  EXPECT_EQ(post(c, "/sessions/" + id + "/messages", {{"text", "x"}, {"idempotency_token", "a"}}).dump(), r.dump());
  EXPECT_EQ(get(c, "/sessions/" + id)["transcript"].size(), 3u);
  EXPECT_FALSE(post(c, "/sessions/" + id + "/hint", json::object())["revealed"].get<bool>());
  get(c, "/metrics", 404);
  post(c, "/sessions/" + id + "/close", {{"reason", "trainee_quit"}});
  EXPECT_EQ(get(c, "/metrics")["sessions"], 1);
  EXPECT_EQ(get(c, "/sessions/" + id + "/score").dump(), srv.svc->score(id).body.dump());
  get(c, "/nowhere", 404);
  get(c, "/sessions/s999999", 404);
}

// 120 sessions from 12 client threads; every transcript must equal a
// sequential replay of its own trainee inputs.
TEST(Http, ParallelSessionsStayIsolated) {
  LiveServer srv(fx::fixture_bundle());
  const std::vector<std::string> scenes{"refund", "delivery", "password", "complaint"};
  std::vector<std::vector<std::string>> ids(12);
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    workers.emplace_back([&, t] {
      auto c = srv.client();
      for (int k = 0; k < 10; ++k) {
        const auto id = post(c, "/sessions", {{"scene_id", scenes[(t + k) % 4]}}, 201)["session_id"].get<std::string>();
        ids[t].push_back(id);
        post(c, "/sessions/" + id + "/messages", {{"text", "thread " + std::to_string(t) + " says " + id}});
        for (int guard = 0; guard < 10; ++guard) {
          const auto r = post(c, "/sessions/" + id + "/messages", {{"text", fx::expected_reply(*srv.svc, id)}});
          if (r.value("phase", "") != "await_agent") break;
        }
      }
    });
  }
  for (auto& w : workers) w.join();

  simcore::Simulator sim(srv.svc->bundle().engine, std::make_shared<simcore::ManualClock>(1'700'000'000'000));
  std::set<std::string> seen;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    for (const auto& id : ids[t]) {
      EXPECT_TRUE(seen.insert(id).second) << id;
      const auto s = fx::snapshot(*srv.svc, id);
      EXPECT_EQ(s.phase, simcore::Phase::Completed) << id;
      EXPECT_EQ(s.transcript[1].text, "thread " + std::to_string(t) + " says " + id);
      auto replayed = simcore::replay_session(sim, s);
      replayed.closed_at = s.closed_at;
      EXPECT_EQ(replayed, s) << id;
    }
  }
  EXPECT_EQ(seen.size(), 120u);
}

// ---------------------------------------------------------------------------
// External generator

namespace {

struct StubGenerator {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> calls{0};

  explicit StubGenerator(std::function<void(const json&, httplib::Response&)> reply) {
    server.Post("/generate", [this, reply](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      reply(json::parse(req.body), res);
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubGenerator() {
    server.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/generate"; }
};

fx::TestModels const& models() { return fx::test_models(); }

Bundle bundle_with_generator(const std::string& url, std::int64_t timeout_ms) {
  auto b = fx::fixture_bundle();
  auto e = std::make_shared<simcore::Engine>(*b.engine);
  e->generator = std::make_shared<const HttpGenerator>(url, timeout_ms);
  e->fallback_generator = std::make_shared<const respond::NGramGenerator>(models().customer_lm);
  b.engine = e;
  return b;
}

simcore::TranscriptEntry miss_once(Bundle b) {
  fx::TempDir dir;
  Service svc(std::move(b), fx::fixture_config(dir.path()));
  const auto id = start(svc, "refund");
  EXPECT_EQ(say(svc, id, "zzqx vvwk").body["path"], "fallback");
  return fx::snapshot(svc, id).transcript.back();
}

}  // namespace

TEST(ExternalGenerator, RequestShapeAndUse) {
  json seen;
  StubGenerator stub([&](const json& req, httplib::Response& res) {
    seen = req;
    json out{{"candidates", json::array()}};
    for (int k = 0; k < req["n"].get<int>(); ++k) out["candidates"].push_back("stub reply " + std::to_string(k));
    res.set_content(out.dump(), "application/json");
  });
  const auto bot = miss_once(bundle_with_generator(stub.url(), 2000));
  EXPECT_EQ(stub.calls, 1);
  EXPECT_EQ(seen["scene"], "refund");
  EXPECT_EQ(seen["n"], 3);
  ASSERT_TRUE(seen["context"].is_array());
  EXPECT_EQ(seen["context"][0]["role"], "customer");
  EXPECT_EQ(seen["context"].back()["text"], "zzqx vvwk");
  EXPECT_TRUE(bot.note.empty());
}

TEST(ExternalGenerator, TimeoutFallsBackToNgram) {
  StubGenerator stub([](const json&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content(R"({"candidates":["stub-late-0","stub-late-1","stub-late-2"]})", "application/json");
  });
  const auto t0 = std::chrono::steady_clock::now();
  const auto bot = miss_once(bundle_with_generator(stub.url(), 100));
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(550));
  EXPECT_EQ(bot.note, "generator-fallback:ngram");
  EXPECT_EQ(bot.text.find("stub-late"), std::string::npos);
}

TEST(ExternalGenerator, ContractBreachFallsBack) {
  StubGenerator wrong_count([](const json&, httplib::Response& res) {
    res.set_content(R"({"candidates":["only one"]})", "application/json");
  });
  EXPECT_EQ(miss_once(bundle_with_generator(wrong_count.url(), 2000)).note, "generator-fallback:ngram");
  StubGenerator server_error([](const json&, httplib::Response& res) { res.status = 500; });
  EXPECT_EQ(miss_once(bundle_with_generator(server_error.url(), 2000)).note, "generator-fallback:ngram");
}

TEST(ExternalGenerator, DeadEndpointFallsBack) {
  int port = 0;
  {
    StubGenerator gone([](const json&, httplib::Response&) {});
    port = gone.port;
  }
  EXPECT_EQ(miss_once(bundle_with_generator("http://127.0.0.1:" + std::to_string(port) + "/generate", 300)).note,
            "generator-fallback:ngram");
}
