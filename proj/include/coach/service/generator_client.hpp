#pragma once

// Candidate generator backed by an external HTTP service.
//
//   POST <url>  {"context": [{"role", "text"}...], "n": N, "scene": S}
//   200         {"candidates": ["...", ...]}
//
// Any transport error, timeout or malformed reply throws, which makes the
// simulator switch to its fallback generator for that turn.

#include <string>
#include <vector>

#include "coach/error.hpp"
#include "coach/respond/candidates.hpp"
#include "httplib.h"
#include "json.hpp"

namespace coach::service {

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0)
    throw ConfigError("generator url must start with http://: '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

inline nlohmann::json generation_request_json(const respond::GenerationRequest& req) {
  auto ctx = nlohmann::json::array();
  for (const auto& t : req.context) ctx.push_back({{"role", to_string(t.role)}, {"text", t.text}});
  return {{"context", ctx}, {"n", req.n}, {"scene", req.scene}};
}

class HttpGenerator final : public respond::CandidateGenerator {
 public:
  HttpGenerator(const std::string& url, std::int64_t timeout_ms) : url_(parse_url(url)), timeout_ms_(timeout_ms) {
    if (timeout_ms_ <= 0) throw ConfigError("generator timeout must be > 0");
  }

  std::vector<std::string> generate(const respond::GenerationRequest& req) const override {
    httplib::Client cli(url_.origin);
    const auto sec = static_cast<time_t>(timeout_ms_ / 1000);
    const auto usec = static_cast<time_t>((timeout_ms_ % 1000) * 1000);
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
    const auto res = cli.Post(url_.path, generation_request_json(req).dump(), "application/json");
    if (!res) throw IoError("generator: " + httplib::to_string(res.error()));
    if (res->status != 200) throw IoError("generator: HTTP " + std::to_string(res->status));
    std::vector<std::string> out;
    try {
      const auto j = nlohmann::json::parse(res->body);
      for (const auto& c : j.at("candidates")) out.push_back(c.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("generator: bad reply: ") + e.what());
    }
    return out;
  }

  std::string name() const override { return "http"; }

 private:
  ParsedUrl url_;
  std::int64_t timeout_ms_;
};

}  // namespace coach::service
