#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "coach/detail/utf8.hpp"

namespace coach::textenc {

namespace detail {

inline bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x20000 && c <= 0x2A6DF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x3040 && c <= 0x30FF) || (c >= 0xAC00 && c <= 0xD7AF);
}

inline bool is_separator(char32_t c) {
  if (c < 0x80) {
    const bool alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    return !alnum;
  }
  return (c >= 0x80 && c <= 0xBF) || (c >= 0x2000 && c <= 0x206F) || (c >= 0x3000 && c <= 0x303F) ||
         (c >= 0xFF00 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) || (c >= 0xFF3B && c <= 0xFF40) ||
         (c >= 0xFF5B && c <= 0xFF65) || c == 0xFFFD || c == 0xFEFF;
}

inline char32_t lower(char32_t c) { return (c >= 'A' && c <= 'Z') ? c + ('a' - 'A') : c; }

}  // namespace detail

// Lowercased words split at whitespace/punctuation. A CJK run becomes its
// overlapping character bigrams, or the single character for a run of one.
inline std::vector<std::string> tokenize(std::string_view text) {
  const auto cps = coach::detail::utf8_decode(text);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < cps.size()) {
    const char32_t c = cps[i];
    if (detail::is_separator(c)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    if (detail::is_cjk(c)) {
      while (j < cps.size() && detail::is_cjk(cps[j])) ++j;
      if (j - i == 1) {
        std::string tok;
        coach::detail::utf8_append(tok, c);
        tokens.push_back(std::move(tok));
      } else {
        for (std::size_t k = i; k + 1 < j; ++k) {
          std::string tok;
          coach::detail::utf8_append(tok, cps[k]);
          coach::detail::utf8_append(tok, cps[k + 1]);
          tokens.push_back(std::move(tok));
        }
      }
    } else {
      std::string tok;
      while (j < cps.size() && !detail::is_separator(cps[j]) && !detail::is_cjk(cps[j])) {
        coach::detail::utf8_append(tok, detail::lower(cps[j]));
        ++j;
      }
      tokens.push_back(std::move(tok));
    }
    i = j;
  }
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace coach::textenc
