#pragma once

// Corpus-level BLEU-2: geometric mean of clipped unigram and bigram
// precision times the brevity penalty. A zero bigram match count is
// smoothed to 1 / (bigrams + 1).

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "coach/error.hpp"
#include "coach/textenc/tokenize.hpp"

namespace coach::respond {

struct BleuStats {
  std::size_t matches[2] = {0, 0};
  std::size_t totals[2] = {0, 0};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
  double precision[2] = {0.0, 0.0};
  double brevity_penalty = 0.0;
  double score = 0.0;
};

inline BleuStats bleu2_stats(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) throw ContractViolation("bleu2: hypothesis/reference count mismatch");
  if (hypotheses.empty()) throw ContractViolation("bleu2: empty corpus");
  BleuStats s;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto hyp = textenc::tokenize(hypotheses[i]);
    const auto ref = textenc::tokenize(references[i]);
    s.hyp_length += hyp.size();
    s.ref_length += ref.size();
    for (std::size_t n = 1; n <= 2; ++n) {
      std::map<std::vector<std::string>, std::size_t> h, r;
      for (std::size_t k = 0; k + n <= hyp.size(); ++k) ++h[{hyp.begin() + k, hyp.begin() + k + n}];
      for (std::size_t k = 0; k + n <= ref.size(); ++k) ++r[{ref.begin() + k, ref.begin() + k + n}];
      for (const auto& [g, c] : h) {
        s.totals[n - 1] += c;
        const auto it = r.find(g);
        if (it != r.end()) s.matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  if (s.hyp_length == 0) return s;
  s.precision[0] = static_cast<double>(s.matches[0]) / static_cast<double>(s.totals[0]);
  s.precision[1] = s.matches[1] == 0 ? 1.0 / static_cast<double>(s.totals[1] + 1)
                                     : static_cast<double>(s.matches[1]) / static_cast<double>(s.totals[1]);
  s.brevity_penalty = s.hyp_length > s.ref_length
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(s.ref_length) / static_cast<double>(s.hyp_length));
  s.score = s.brevity_penalty * std::sqrt(s.precision[0] * s.precision[1]);
  return s;
}

inline double bleu2(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  return bleu2_stats(hypotheses, references).score;
}

}  // namespace coach::respond
