#pragma once

// Everything loaded once at startup and shared read-only by all sessions.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "coach/pipeline.hpp"
#include "coach/respond/candidates.hpp"
#include "coach/respond/ngram.hpp"
#include "coach/respond/ranker.hpp"
#include "coach/scorecard.hpp"
#include "coach/service/config.hpp"
#include "coach/service/generator_client.hpp"
#include "coach/simcore.hpp"
#include "coach/textenc/similarity.hpp"
#include "coach/vindex.hpp"

namespace coach::service {

struct Bundle {
  std::shared_ptr<const simcore::Engine> engine;
  std::shared_ptr<const scorecard::FluencyBackend> fluency;
  std::vector<scorecard::ComplianceRule> rules;
};

// Scoring models only: enough for `evaluate`.
struct ScoringModels {
  std::shared_ptr<const textenc::TextMatcher> matcher;
  std::shared_ptr<const scorecard::FluencyBackend> fluency;
  std::vector<scorecard::ComplianceRule> rules;
};

inline std::vector<scorecard::ComplianceRule> load_rules_if_present(const fs::path& p) {
  if (!fs::exists(p)) return {};
  return scorecard::load_rules(p.string());
}

inline std::shared_ptr<const scorecard::FluencyBackend> load_fluency(const ServiceConfig& cfg) {
  auto lm = std::make_shared<const respond::NGramLM>(
      respond::NGramLM::from_json(pipeline::read_json_file(cfg.agent_lm_path())));
  const auto calib = scorecard::FluencyCalibration::from_json(pipeline::read_json_file(cfg.fluency_path()));
  return std::make_shared<const scorecard::NGramFluency>(std::move(lm), calib);
}

inline ScoringModels load_scoring(const ServiceConfig& cfg) {
  auto enc = std::make_shared<const textenc::Encoder>(textenc::load_encoder(cfg.encoder_path().string()));
  return {std::make_shared<const textenc::HybridMatcher>(enc), load_fluency(cfg), load_rules_if_present(cfg.rules_path())};
}

inline Bundle load_bundle(const ServiceConfig& cfg) {
  cfg.validate();
  cfg.require_serving_artifacts();
  auto enc = std::make_shared<const textenc::Encoder>(textenc::load_encoder(cfg.encoder_path().string()));
  auto customer = std::make_shared<const respond::NGramLM>(
      respond::NGramLM::from_json(pipeline::read_json_file(cfg.customer_lm_path())));
  auto index = std::make_shared<const vindex::VectorIndex>(vindex::VectorIndex::load(cfg.index_path().string()));
  if (!index->empty() && index->dim() != enc->dim())
    throw ConfigError("index dimension " + std::to_string(index->dim()) + " does not match encoder " +
                      std::to_string(enc->dim()));
  const auto model = respond::RankerModel::from_json(pipeline::read_json_file(cfg.ranker_path()));

  auto engine = std::make_shared<simcore::Engine>();
  engine->scenes = simcore::group_by_scene(pipeline::load_script_file(cfg.scripts_path()));
  engine->matcher = std::make_shared<const textenc::HybridMatcher>(enc);
  engine->encoder = enc;
  engine->index = index;
  auto ngram = std::make_shared<const respond::NGramGenerator>(customer);
  if (cfg.generator.url.empty()) {
    engine->generator = ngram;
  } else {
    engine->generator = std::make_shared<const HttpGenerator>(cfg.generator.url, cfg.generator.timeout_ms);
    engine->fallback_generator = ngram;
  }
  engine->ranker = std::make_shared<const respond::LogisticRanker>(model, respond::FeatureExtractor(enc, customer));
  engine->check();

  return {engine, load_fluency(cfg), load_rules_if_present(cfg.rules_path())};
}

}  // namespace coach::service
