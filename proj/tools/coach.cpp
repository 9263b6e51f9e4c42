// coach: offline pipeline, batch simulation, evaluation and the HTTP service.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coach/pipeline.hpp"
#include "coach/scorecard.hpp"
#include "coach/service/api.hpp"
#include "coach/service/bundle.hpp"
#include "coach/service/config.hpp"
#include "coach/service/http.hpp"
#include "coach/service/store.hpp"

namespace {

namespace fs = std::filesystem;
using coach::service::ServiceConfig;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
};

ServiceConfig make_config(const GlobalOptions& g) {
  std::optional<fs::path> file;
  if (!g.config.empty()) file = g.config;
  auto cfg = coach::service::resolve_config(file);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void log(const std::string& msg) { std::cerr << "coach: " << msg << '\n'; }

std::string fmt(double v, int digits = 4) { return coach::scorecard::format_fixed(v, digits); }

int cmd_ingest(const ServiceConfig& cfg, const std::string& input) {
  const auto s = coach::pipeline::run_ingest(cfg, input);
  for (const auto& e : s.rejected) log(input + ":" + std::to_string(e.line) + ": rejected: " + e.message);
  std::cout << "accepted " << s.accepted << " dialogues, rejected " << s.rejected.size() << " lines\n"
            << coach::to_json(s.stats).dump() << '\n'
            << "wrote " << cfg.corpus_path().string() << '\n';
  return 0;
}

int cmd_train_embed(const ServiceConfig& cfg) {
  const auto r = coach::pipeline::run_train_embed(cfg);
  std::cout << "pairs " << r.pair_count << ", loss";
  for (double l : r.epoch_losses) std::cout << ' ' << fmt(l);
  std::cout << "\nwrote " << cfg.encoder_path().string() << '\n';
  return 0;
}

int cmd_cluster(const ServiceConfig& cfg) {
  const auto s = coach::pipeline::run_cluster(cfg);
  std::cout << s.dialogues << " dialogues, " << s.clusters << " clusters, " << s.noise << " noise\n";
  for (const auto& sc : s.scenes)
    std::cout << "  " << sc.scene_id << ": " << sc.member_ids.size() << " dialogues, "
              << sc.representative_scripts.size() << " scripts, stability " << fmt(sc.stability, 2) << '\n';
  std::cout << "wrote " << cfg.scripts_path().string() << " and " << cfg.cluster_report_path().string() << '\n';
  return 0;
}

int cmd_build_index(const ServiceConfig& cfg) {
  const auto n = coach::pipeline::run_build_index(cfg);
  std::cout << "indexed " << n << " contexts (" << (cfg.index.approx ? "exact + lsh" : "exact") << ")\n"
            << "wrote " << cfg.index_path().string() << '\n';
  return 0;
}

int cmd_train_lm(const ServiceConfig& cfg) {
  coach::pipeline::run_train_lm(cfg);
  std::cout << "wrote " << cfg.customer_lm_path().string() << ", " << cfg.agent_lm_path().string() << ", "
            << cfg.fluency_path().string() << '\n';
  return 0;
}

int cmd_train_ranker(const ServiceConfig& cfg) {
  const auto s = coach::pipeline::run_train_ranker(cfg);
  std::cout << s.positives << " positive / " << s.negatives << " negative pairs, loss " << fmt(s.train_loss)
            << ", train accuracy " << fmt(s.train_accuracy) << "\nwrote " << cfg.ranker_path().string() << '\n';
  return 0;
}

struct SimulateOptions {
  std::string scene;
  std::string strategy = "echo";
  std::string trainee_file;
  std::size_t count = 1;
};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw coach::IoError("cannot read " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!coach::detail::trim(line).empty()) out.push_back(line);
  return out;
}

void check(const coach::service::ApiResponse& r) {
  if (r.status >= 400) throw std::runtime_error(r.body.value("message", r.body.dump()));
}

int cmd_simulate(const ServiceConfig& cfg, const SimulateOptions& o) {
  using namespace coach;
  if (o.strategy != "echo" && o.strategy != "file") throw ConfigError("unknown strategy '" + o.strategy + "'");
  std::vector<std::string> lines;
  if (o.strategy == "file") {
    if (o.trainee_file.empty()) throw ConfigError("--trainee is required with --strategy file");
    lines = read_lines(o.trainee_file);
  }
  service::Service svc(service::load_bundle(cfg), cfg);
  for (std::size_t k = 0; k < o.count; ++k) {
    const auto created = svc.create_session(nlohmann::json{{"scene_id", o.scene}}.dump());
    check(created);
    const auto id = created.body["session_id"].get<std::string>();
    std::size_t next_line = 0;
    for (;;) {
      std::string text;
      {
        auto slot = svc.store().get(id);
        std::lock_guard lock(slot->mu);
        const auto& s = slot->state;
        if (s.phase != simcore::Phase::AwaitAgent) break;
        if (o.strategy == "echo") {
          text = s.script.turns[simcore::agent_positions(s.script).at(s.cursor)].text;
        } else {
          if (next_line >= lines.size()) break;
          text = lines[next_line++];
        }
      }
      check(svc.post_message(id, nlohmann::json{{"text", text}}.dump()));
    }
    check(svc.close(id, nlohmann::json{{"reason", "trainee_quit"}}.dump()));
    auto slot = svc.store().get(id);
    std::lock_guard lock(slot->mu);
    auto out = simcore::record_to_json(simcore::Simulator::make_record(slot->state));
    try {
      out["score"] = scorecard::to_json(svc.score_state(slot->state));
    } catch (const UndefinedValue& e) {
      log(id + ": not scored: " + e.what());
    }
    std::cout << out.dump() << '\n';
  }
  return 0;
}

struct EvaluateOptions {
  std::string sessions;
  std::string reports;
  std::string metrics;
};

int cmd_evaluate(const ServiceConfig& cfg, const EvaluateOptions& o) {
  using namespace coach;
  const fs::path where = o.sessions.empty() ? cfg.session_dir() : fs::path(o.sessions);
  if (!fs::exists(where)) {
    log("no sessions: " + where.string() + " does not exist");
    return 1;
  }
  const auto states = service::load_session_logs(where);
  if (states.empty()) {
    log("no sessions in " + where.string());
    return 1;
  }
  const auto models = service::load_scoring(cfg);
  const fs::path reports_path = o.reports.empty() ? cfg.path("reports.jsonl") : fs::path(o.reports);
  pipeline::ensure_parent(reports_path);
  std::ofstream reports(reports_path);
  if (!reports) throw IoError("cannot write " + reports_path.string());

  std::vector<simcore::SessionRecord> finished;
  std::size_t scored = 0;
  for (const auto& s : states) {
    const auto rec = simcore::Simulator::make_record(s);
    if (s.phase != simcore::Phase::AwaitAgent) finished.push_back(rec);
    try {
      const auto score =
          scorecard::evaluate_session(rec, s.script, *models.fluency, *models.matcher, models.rules, cfg.score);
      reports << scorecard::to_json(score).dump() << '\n';
      ++scored;
    } catch (const UndefinedValue& e) {
      log(s.session_id + ": not scored: " + e.what());
    }
  }
  std::cout << "scored " << scored << " of " << states.size() << " sessions -> " << reports_path.string() << '\n';
  if (finished.empty()) {
    log("no finished sessions; metrics skipped");
    return 0;
  }
  const auto m = scorecard::aggregate_metrics(finished);
  const fs::path metrics_path = o.metrics.empty() ? cfg.path("metrics.json") : fs::path(o.metrics);
  pipeline::write_json_file(metrics_path, m.to_json());
  std::cout << scorecard::format_metrics_table({{"Human-Computer", m}});
  std::cout << "wrote " << metrics_path.string() << '\n';
  return 0;
}

int cmd_serve(ServiceConfig cfg, const std::optional<std::string>& host, const std::optional<int>& port) {
  using namespace coach;
  if (host) cfg.host = *host;
  if (port) cfg.port = *port;
  cfg.validate();
  auto svc = std::make_shared<service::Service>(service::load_bundle(cfg), cfg);
  service::HttpServer server(svc);
  const int bound = server.bind(cfg.host, cfg.port);
  std::cout << "listening on http://" << cfg.host << ':' << bound << " (" << svc->bundle().engine->scenes.size()
            << " scenes, " << svc->store().recovered() << " sessions recovered)" << std::endl;
  server.listen();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Customer-service trainee coach: mining, simulation, scoring and service."};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");

  std::string input;
  auto* ingest = app.add_subcommand("ingest", "Validate raw logs into the corpus");
  ingest->add_option("--input", input, "Raw line-delimited dialogue logs")->required()->check(CLI::ExistingFile);
  auto* embed = app.add_subcommand("train-embed", "Train skip-gram word embeddings on the corpus");
  auto* cluster = app.add_subcommand("cluster", "Mine scenes and representative scripts");
  auto* index = app.add_subcommand("build-index", "Build the context retrieval index");
  auto* lm = app.add_subcommand("train-lm", "Train the customer and agent n-gram models");
  auto* ranker = app.add_subcommand("train-ranker", "Train the reasonableness ranker");

  SimulateOptions so;
  auto* simulate = app.add_subcommand("simulate", "Run scripted trainee sessions offline");
  simulate->add_option("--scene", so.scene, "Scene id")->required();
  simulate->add_option("--strategy", so.strategy, "echo | file")->check(CLI::IsMember({"echo", "file"}));
  simulate->add_option("--trainee", so.trainee_file, "Trainee replies, one per line (strategy file)");
  simulate->add_option("--count", so.count, "Number of sessions")->check(CLI::PositiveNumber);

  EvaluateOptions eo;
  auto* evaluate = app.add_subcommand("evaluate", "Score session logs and aggregate training metrics");
  evaluate->add_option("--sessions", eo.sessions, "Session log directory or file (default: config session dir)");
  evaluate->add_option("--reports", eo.reports, "Score report output (JSONL)");
  evaluate->add_option("--metrics", eo.metrics, "Metrics output (JSON)");

  std::optional<std::string> host;
  std::optional<int> port;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = make_config(g);
    if (*ingest) return cmd_ingest(cfg, input);
    if (*embed) return cmd_train_embed(cfg);
    if (*cluster) return cmd_cluster(cfg);
    if (*index) return cmd_build_index(cfg);
    if (*lm) return cmd_train_lm(cfg);
    if (*ranker) return cmd_train_ranker(cfg);
    if (*simulate) return cmd_simulate(cfg, so);
    if (*evaluate) return cmd_evaluate(cfg, eo);
    if (*serve) return cmd_serve(cfg, host, port);
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return 2;
}
