#pragma once

// Candidate customer utterances: retrieval from the context index and
// generation from a pluggable backend.

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/error.hpp"
#include "coach/respond/ngram.hpp"
#include "coach/textenc/embedding.hpp"
#include "coach/vindex.hpp"

namespace coach::respond {

enum class Source { Retrieval, Generation };

inline std::string_view to_string(Source s) { return s == Source::Retrieval ? "retrieval" : "generation"; }

struct CandidateResponse {
  std::string text;
  Source source = Source::Generation;
  double ranker_score = 0.0;
  std::optional<std::size_t> entry_id;  // retrieval provenance
};

// Turns that make up the retrieval context: the last `window` turns.
inline constexpr std::size_t kContextWindow = 4;

inline std::string context_text(const std::vector<Turn>& context, std::size_t window = kContextWindow) {
  std::string out;
  const std::size_t first = context.size() > window ? context.size() - window : 0;
  for (std::size_t i = first; i < context.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += context[i].text;
  }
  return out;
}

inline textenc::TextEmbedding context_embedding(const std::vector<Turn>& context, const textenc::Encoder& enc,
                                               std::size_t window = kContextWindow) {
  return textenc::embed_text(context_text(context, window), enc);
}

// One entry per agent turn that is directly followed by a customer turn. The
// key is the context ending at that agent turn; contexts with no known token
// are skipped.
inline std::vector<vindex::IndexItem> context_items(const std::vector<Dialogue>& dialogues, const textenc::Encoder& enc,
                                                    std::size_t window = kContextWindow) {
  std::vector<vindex::IndexItem> items;
  for (const auto& d : dialogues) {
    for (std::size_t i = 0; i + 1 < d.turns.size(); ++i) {
      if (d.turns[i].role != Role::Agent || d.turns[i + 1].role != Role::Customer) continue;
      if (d.turns[i + 1].text.empty()) continue;
      const std::vector<Turn> ctx(d.turns.begin(), d.turns.begin() + static_cast<std::ptrdiff_t>(i + 1));
      auto e = context_embedding(ctx, enc, window);
      if (e.oov) continue;
      items.push_back({std::move(e.vector), {d.id, i, d.turns[i + 1].text}});
    }
  }
  return items;
}

inline vindex::VectorIndex build_context_index(const std::vector<Dialogue>& dialogues, const textenc::Encoder& enc,
                                               bool approx, std::uint64_t seed, vindex::LshParams lsh = {},
                                               std::size_t window = kContextWindow) {
  return vindex::VectorIndex::build(context_items(dialogues, enc, window), approx, seed, lsh);
}

// Next-utterance payloads of the top-k contexts, in search order.
inline std::vector<CandidateResponse> retrieve_candidates(const vindex::VectorIndex& index,
                                                          std::span<const double> context_vec, std::size_t k = 3,
                                                          bool approx = false) {
  if (index.empty()) return {};
  const auto hits = approx && index.has_approx() ? index.search_approx(context_vec, k) : index.search_exact(context_vec, k);
  std::vector<CandidateResponse> out;
  for (const auto& h : hits)
    out.push_back({index.entry(h.entry_id).payload.next_customer_utterance, Source::Retrieval, 0.0, h.entry_id});
  return out;
}

// ---------------------------------------------------------------------------
// Generation backends

struct GenerationRequest {
  std::vector<Turn> context;
  std::size_t n = 3;
  std::string scene;
  std::uint64_t seed = 0;
};

class CandidateGenerator {
 public:
  virtual ~CandidateGenerator() = default;
  // Must return exactly req.n non-empty texts or throw.
  virtual std::vector<std::string> generate(const GenerationRequest& req) const = 0;
  virtual std::string name() const = 0;
};

class NGramGenerator final : public CandidateGenerator {
 public:
  explicit NGramGenerator(std::shared_ptr<const NGramLM> lm, GenerationConfig cfg = {}) : lm_(std::move(lm)), cfg_(cfg) {
    if (!lm_) throw ContractViolation("NGramGenerator: no model");
  }

  std::vector<std::string> generate(const GenerationRequest& req) const override {
    return generate_candidates(*lm_, req.context, req.n, req.seed, cfg_);
  }
  std::string name() const override { return "ngram"; }

 private:
  std::shared_ptr<const NGramLM> lm_;
  GenerationConfig cfg_;
};

// Throws IllegalState when a backend breaks the cardinality contract.
inline std::vector<CandidateResponse> generated_candidates(const CandidateGenerator& gen, const GenerationRequest& req) {
  const auto texts = gen.generate(req);
  if (texts.size() != req.n) throw IllegalState("generator " + gen.name() + " returned wrong candidate count");
  std::vector<CandidateResponse> out;
  for (const auto& t : texts) {
    if (t.empty()) throw IllegalState("generator " + gen.name() + " returned an empty candidate");
    out.push_back({t, Source::Generation, 0.0, std::nullopt});
  }
  return out;
}

}  // namespace coach::respond
