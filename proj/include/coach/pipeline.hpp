#pragma once

// Offline stages that turn raw service logs into serving artifacts:
//   ingest -> train-embed -> cluster -> build-index -> train-lm -> train-ranker
// Each stage reads and writes files named by the ServiceConfig.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/intentcluster.hpp"
#include "coach/respond/candidates.hpp"
#include "coach/respond/ngram.hpp"
#include "coach/respond/ranker.hpp"
#include "coach/scorecard.hpp"
#include "coach/service/config.hpp"
#include "coach/textenc/embedding.hpp"
#include "coach/textenc/sgns.hpp"
#include "json.hpp"

namespace coach::pipeline {

namespace fs = std::filesystem;
using service::ServiceConfig;

inline void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

inline void write_json_file(const fs::path& p, const nlohmann::json& j) {
  ensure_parent(p);
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed: " + p.string());
}

inline nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

inline std::vector<Dialogue> load_corpus(const fs::path& p) {
  auto r = ingest_log(p.string());
  if (!r.errors.empty())
    throw IoError(p.string() + ":" + std::to_string(r.errors.front().line) + ": " + r.errors.front().message);
  if (r.records.empty()) throw ConfigError("corpus " + p.string() + " is empty");
  return std::move(r.records);
}

inline std::vector<DialogueScript> load_script_file(const fs::path& p) {
  auto r = load_scripts(p.string());
  if (!r.errors.empty())
    throw IoError(p.string() + ":" + std::to_string(r.errors.front().line) + ": " + r.errors.front().message);
  if (r.records.empty()) throw ConfigError("no scripts in " + p.string());
  return std::move(r.records);
}

inline std::vector<std::string> agent_texts(const std::vector<Dialogue>& corpus) {
  std::vector<std::string> out;
  for (const auto& d : corpus)
    for (const auto& t : d.turns)
      if (t.role == Role::Agent) out.push_back(t.text);
  return out;
}

// ---------------------------------------------------------------------------
// Stages

struct IngestSummary {
  std::size_t accepted = 0;
  std::vector<LineError> rejected;
  CorpusStats stats;
};

inline IngestSummary run_ingest(const ServiceConfig& cfg, const fs::path& raw_logs) {
  auto r = ingest_log(raw_logs.string());
  if (r.records.empty()) throw ConfigError("ingest: no valid dialogues in " + raw_logs.string());
  ensure_parent(cfg.corpus_path());
  write_records(cfg.corpus_path().string(), r.records);
  return {r.records.size(), std::move(r.errors), corpus_stats(r.records)};
}

inline textenc::SgnsReport run_train_embed(const ServiceConfig& cfg) {
  const auto corpus = load_corpus(cfg.corpus_path());
  auto sg = cfg.embed;
  sg.seed = cfg.seed;
  textenc::SgnsReport report;
  const auto enc = textenc::train_encoder(corpus, sg, &report);
  ensure_parent(cfg.encoder_path());
  textenc::save_encoder(cfg.encoder_path().string(), enc);
  return report;
}

struct ClusterSummary {
  std::size_t dialogues = 0;
  std::size_t clusters = 0;
  std::size_t noise = 0;
  std::vector<intentcluster::Scene> scenes;
};

inline ClusterSummary run_cluster(const ServiceConfig& cfg) {
  const auto corpus = load_corpus(cfg.corpus_path());
  const auto enc = textenc::load_encoder(cfg.encoder_path().string());
  std::vector<intentcluster::Point> feats;
  feats.reserve(corpus.size());
  for (const auto& d : corpus) feats.push_back(intentcluster::dialogue_feature(d, enc).vector);
  const intentcluster::ClusterParams params{cfg.cluster.min_cluster_size, cfg.cluster.min_samples};
  const auto result = intentcluster::hdbscan(feats, params);

  ClusterSummary s;
  s.dialogues = corpus.size();
  s.clusters = result.cluster_count;
  for (int l : result.labels) s.noise += l < 0;
  s.scenes = intentcluster::select_representatives(result, corpus, feats, cfg.cluster.representatives);
  if (s.scenes.empty()) throw ConfigError("cluster: no scene with a valid script; lower min_cluster_size?");

  std::vector<DialogueScript> scripts;
  for (const auto& sc : s.scenes)
    scripts.insert(scripts.end(), sc.representative_scripts.begin(), sc.representative_scripts.end());
  ensure_parent(cfg.scripts_path());
  write_records(cfg.scripts_path().string(), scripts);

  ensure_parent(cfg.cluster_report_path());
  std::ofstream report(cfg.cluster_report_path());
  if (!report) throw IoError("cannot write " + cfg.cluster_report_path().string());
  for (const auto& sc : s.scenes) report << intentcluster::cluster_report_line(sc).dump() << '\n';
  return s;
}

inline std::size_t run_build_index(const ServiceConfig& cfg) {
  const auto corpus = load_corpus(cfg.corpus_path());
  const auto enc = textenc::load_encoder(cfg.encoder_path().string());
  const auto index = respond::build_context_index(corpus, enc, cfg.index.approx, cfg.seed, cfg.index.lsh,
                                                  cfg.policy.context_window);
  ensure_parent(cfg.index_path());
  index.save(cfg.index_path().string());
  return index.size();
}

// Customer LM drives generation and ranking; the agent LM and its
// calibration drive fluency scoring.
inline void run_train_lm(const ServiceConfig& cfg) {
  const auto corpus = load_corpus(cfg.corpus_path());
  const auto customer = respond::train_ngram(respond::customer_texts(corpus), cfg.lm.order, cfg.lm.discount);
  const auto agents = agent_texts(corpus);
  const auto agent = respond::train_ngram(agents, cfg.lm.order, cfg.lm.discount);
  write_json_file(cfg.customer_lm_path(), customer.to_json());
  write_json_file(cfg.agent_lm_path(), agent.to_json());
  write_json_file(cfg.fluency_path(), scorecard::calibrate_fluency(agent, agents).to_json());
}

struct RankerSummary {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
};

inline RankerSummary run_train_ranker(const ServiceConfig& cfg) {
  const auto corpus = load_corpus(cfg.corpus_path());
  auto enc = std::make_shared<const textenc::Encoder>(textenc::load_encoder(cfg.encoder_path().string()));
  auto lm = std::make_shared<const respond::NGramLM>(respond::NGramLM::from_json(read_json_file(cfg.customer_lm_path())));
  const respond::FeatureExtractor fx(enc, lm);
  auto rc = cfg.ranker;
  rc.seed = cfg.seed;
  const auto pairs = respond::make_ranker_pairs(corpus, rc.seed);
  std::vector<respond::RankerExample> ex;
  for (const auto& p : pairs.positives) ex.push_back({fx.features(p.context, p.response), 1});
  for (const auto& p : pairs.negatives) ex.push_back({fx.features(p.context, p.response), 0});
  const auto model = respond::train_ranker(ex, rc);
  write_json_file(cfg.ranker_path(), model.to_json());

  RankerSummary s{pairs.positives.size(), pairs.negatives.size(), respond::ranker_loss(model, ex), 0.0};
  std::size_t right = 0;
  for (const auto& e : ex) right += (model.score(e.x) >= 0.5) == (e.y == 1);
  s.train_accuracy = ex.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(ex.size());
  return s;
}

}  // namespace coach::pipeline
