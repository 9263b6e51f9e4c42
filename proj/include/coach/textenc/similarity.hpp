#pragma once

#include <algorithm>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "coach/textenc/embedding.hpp"
#include "coach/textenc/tokenize.hpp"

namespace coach::textenc {

// |A ∩ B| / |A ∪ B| over token sets; 0 when both are empty.
inline double token_jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end());
  const std::set<std::string> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

inline double token_jaccard(std::string_view a, std::string_view b) { return token_jaccard(tokenize(a), tokenize(b)); }

// Utterance matcher contract: symmetric, in [0, 1], and 1 for a text with at
// least one token compared with itself. The orchestrator and scorecard only
// talk to this interface.
class TextMatcher {
 public:
  virtual ~TextMatcher() = default;
  virtual double similarity(std::string_view a, std::string_view b) const = 0;
  virtual std::string name() const = 0;
};

// 0.5 * max(0, cos(embed a, embed b)) + 0.5 * jaccard(a, b). When either side
// has no in-vocabulary token the embedding term is unavailable and the score
// is the Jaccard term alone, which keeps self-similarity at 1.
inline double text_similarity(std::string_view a, std::string_view b, const Encoder& enc) {
  const auto ta = tokenize(a);
  const auto tb = tokenize(b);
  if (ta.empty() && tb.empty()) return 0.0;
  if (ta == tb) return 1.0;
  const double jac = token_jaccard(ta, tb);
  const auto ea = embed_text(a, enc);
  const auto eb = embed_text(b, enc);
  if (ea.oov || eb.oov) return jac;
  const double cos = std::max(0.0, cosine(ea.vector, eb.vector));
  return std::clamp(0.5 * cos + 0.5 * jac, 0.0, 1.0);
}

class HybridMatcher final : public TextMatcher {
 public:
  // Borrows `enc`; it must outlive the matcher.
  explicit HybridMatcher(const Encoder& enc) : enc_(&enc) {}
  explicit HybridMatcher(std::shared_ptr<const Encoder> enc) : owned_(std::move(enc)), enc_(owned_.get()) {
    if (!enc_) throw ContractViolation("HybridMatcher: no encoder");
  }
  double similarity(std::string_view a, std::string_view b) const override { return text_similarity(a, b, *enc_); }
  std::string name() const override { return "hybrid-embedding-jaccard"; }

 private:
  std::shared_ptr<const Encoder> owned_;
  const Encoder* enc_;
};

}  // namespace coach::textenc
