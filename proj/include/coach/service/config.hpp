#pragma once

// Service and pipeline configuration.
//
// Precedence, lowest first: built-in defaults, the JSON config file, COACH_*
// environment variables, command-line flags. Artifact paths are relative to
// `artifact_dir`, which is itself relative to the config file's directory.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "coach/error.hpp"
#include "coach/intentcluster.hpp"
#include "coach/respond/ranker.hpp"
#include "coach/scorecard.hpp"
#include "coach/simcore.hpp"
#include "coach/textenc/sgns.hpp"
#include "coach/vindex.hpp"
#include "json.hpp"

namespace coach::service {

namespace fs = std::filesystem;

inline constexpr const char* kEnvPrefix = "COACH_";

struct ArtifactPaths {
  std::string corpus = "corpus.jsonl";
  std::string encoder = "encoder.bin";
  std::string scripts = "scripts.jsonl";
  std::string cluster_report = "clusters.jsonl";
  std::string index = "index.bin";
  std::string customer_lm = "customer_lm.json";
  std::string agent_lm = "agent_lm.json";
  std::string fluency = "fluency.json";
  std::string ranker = "ranker.json";
  std::string rules = "rules.jsonl";  // optional file; absent means no rules
  std::string session_dir = "sessions";
};

struct GeneratorEndpoint {
  std::string url;  // empty: n-gram generator only
  std::int64_t timeout_ms = 2000;
};

struct ClusterStage {
  std::size_t min_cluster_size = 10;
  std::optional<std::size_t> min_samples;
  std::size_t representatives = 3;
};

struct IndexStage {
  bool approx = true;
  vindex::LshParams lsh;
};

struct LmStage {
  std::size_t order = 3;
  double discount = 0.75;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::uint64_t seed = 1;
  fs::path artifact_dir = ".";
  ArtifactPaths paths;
  simcore::SimPolicy policy;
  scorecard::ScoreConfig score;
  GeneratorEndpoint generator;
  textenc::SgnsConfig embed;
  ClusterStage cluster;
  IndexStage index;
  LmStage lm;
  respond::RankerConfig ranker;

  fs::path path(const std::string& rel) const {
    const fs::path p(rel);
    return p.is_absolute() ? p : artifact_dir / p;
  }
  fs::path corpus_path() const { return path(paths.corpus); }
  fs::path encoder_path() const { return path(paths.encoder); }
  fs::path scripts_path() const { return path(paths.scripts); }
  fs::path cluster_report_path() const { return path(paths.cluster_report); }
  fs::path index_path() const { return path(paths.index); }
  fs::path customer_lm_path() const { return path(paths.customer_lm); }
  fs::path agent_lm_path() const { return path(paths.agent_lm); }
  fs::path fluency_path() const { return path(paths.fluency); }
  fs::path ranker_path() const { return path(paths.ranker); }
  fs::path rules_path() const { return path(paths.rules); }
  fs::path session_dir() const { return path(paths.session_dir); }

  void validate() const {
    if (port < 0 || port > 65535) throw ConfigError("config: port outside 0..65535");
    if (generator.timeout_ms <= 0) throw ConfigError("config: generator.timeout_ms must be > 0");
    if (host.empty()) throw ConfigError("config: empty host");
    policy.validate();
    embed.validate();
    ranker.validate();
    intentcluster::ClusterParams{cluster.min_cluster_size, cluster.min_samples}.validate();
    if (cluster.representatives < 1) throw ConfigError("config: cluster.representatives must be >= 1");
    if (lm.order < 1 || !(lm.discount > 0.0 && lm.discount < 1.0)) throw ConfigError("config: bad lm settings");
  }

  // Every artifact the service needs, checked before anything is loaded.
  void require_serving_artifacts() const {
    for (const auto& p : {encoder_path(), scripts_path(), index_path(), customer_lm_path(), agent_lm_path(),
                          fluency_path(), ranker_path()})
      if (!fs::exists(p)) throw ConfigError("config: missing artifact " + p.string());
  }
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

}  // namespace detail

inline void apply_json(ServiceConfig& c, const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  try {
    detail::read_opt(j, "host", c.host);
    detail::read_opt(j, "port", c.port);
    detail::read_opt(j, "seed", c.seed);
    if (j.contains("artifact_dir")) {
      const fs::path a = j["artifact_dir"].get<std::string>();
      c.artifact_dir = a.is_absolute() ? a : base_dir / a;
    } else {
      c.artifact_dir = base_dir;
    }
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      detail::read_opt(p, "corpus", c.paths.corpus);
      detail::read_opt(p, "encoder", c.paths.encoder);
      detail::read_opt(p, "scripts", c.paths.scripts);
      detail::read_opt(p, "cluster_report", c.paths.cluster_report);
      detail::read_opt(p, "index", c.paths.index);
      detail::read_opt(p, "customer_lm", c.paths.customer_lm);
      detail::read_opt(p, "agent_lm", c.paths.agent_lm);
      detail::read_opt(p, "fluency", c.paths.fluency);
      detail::read_opt(p, "ranker", c.paths.ranker);
      detail::read_opt(p, "rules", c.paths.rules);
      detail::read_opt(p, "session_dir", c.paths.session_dir);
    }
    if (j.contains("policy")) c.policy = simcore::SimPolicy::from_json(j["policy"]);
    if (j.contains("score")) {
      const auto& s = j["score"];
      detail::read_opt(s, "match_threshold", c.score.match_threshold);
      detail::read_opt(s, "flag_fluency", c.score.flag_fluency);
      detail::read_opt(s, "flag_consistency", c.score.flag_consistency);
    }
    if (j.contains("generator")) {
      detail::read_opt(j["generator"], "url", c.generator.url);
      detail::read_opt(j["generator"], "timeout_ms", c.generator.timeout_ms);
    }
    if (j.contains("embed")) {
      const auto& e = j["embed"];
      detail::read_opt(e, "dim", c.embed.dim);
      detail::read_opt(e, "window", c.embed.window);
      detail::read_opt(e, "negatives", c.embed.negatives);
      detail::read_opt(e, "epochs", c.embed.epochs);
      detail::read_opt(e, "learning_rate", c.embed.learning_rate);
      detail::read_opt(e, "min_count", c.embed.min_count);
    }
    if (j.contains("cluster")) {
      const auto& k = j["cluster"];
      detail::read_opt(k, "min_cluster_size", c.cluster.min_cluster_size);
      if (k.contains("min_samples") && !k["min_samples"].is_null()) c.cluster.min_samples = k["min_samples"].get<std::size_t>();
      detail::read_opt(k, "representatives", c.cluster.representatives);
    }
    if (j.contains("index")) {
      const auto& x = j["index"];
      detail::read_opt(x, "approx", c.index.approx);
      detail::read_opt(x, "bits", c.index.lsh.bits);
      detail::read_opt(x, "tables", c.index.lsh.tables);
      detail::read_opt(x, "probe_radius", c.index.lsh.probe_radius);
      detail::read_opt(x, "min_candidates", c.index.lsh.min_candidates);
    }
    if (j.contains("lm")) {
      detail::read_opt(j["lm"], "order", c.lm.order);
      detail::read_opt(j["lm"], "discount", c.lm.discount);
    }
    if (j.contains("ranker")) {
      detail::read_opt(j["ranker"], "epochs", c.ranker.epochs);
      detail::read_opt(j["ranker"], "learning_rate", c.ranker.learning_rate);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// `getenv` is injectable so tests do not touch the process environment.
template <typename Getenv>
void apply_env(ServiceConfig& c, Getenv getenv_fn) {
  auto get = [&](const char* name) -> std::optional<std::string> {
    const std::string key = std::string(kEnvPrefix) + name;
    const char* v = getenv_fn(key.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
  auto number = [](const std::string& name, const std::string& v) {
    try {
      std::size_t used = 0;
      const auto n = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw ConfigError(std::string(kEnvPrefix) + name + ": not an integer: '" + v + "'");
    }
  };
  if (auto v = get("HOST")) c.host = *v;
  if (auto v = get("PORT")) c.port = static_cast<int>(number("PORT", *v));
  if (auto v = get("SEED")) c.seed = static_cast<std::uint64_t>(number("SEED", *v));
  if (auto v = get("ARTIFACT_DIR")) c.artifact_dir = *v;
  if (auto v = get("SESSION_DIR")) c.paths.session_dir = *v;
  if (auto v = get("GENERATOR_URL")) c.generator.url = *v;
  if (auto v = get("GENERATOR_TIMEOUT_MS")) c.generator.timeout_ms = number("GENERATOR_TIMEOUT_MS", *v);
}

inline void apply_env(ServiceConfig& c) { apply_env(c, [](const char* k) { return std::getenv(k); }); }

inline ServiceConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  ServiceConfig c;
  apply_json(c, j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
  return c;
}

// File (when given), then environment; the caller applies flags and validates.
inline ServiceConfig resolve_config(const std::optional<fs::path>& file) {
  ServiceConfig c = file ? load_config(*file) : ServiceConfig{};
  apply_env(c);
  return c;
}

}  // namespace coach::service
