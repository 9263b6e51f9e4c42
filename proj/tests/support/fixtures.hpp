#pragma once

// Test-only fixtures and independent oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/textenc/sgns.hpp"

namespace coach::testing {

struct SceneTemplate {
  std::string name;
  // Each step holds paraphrases of one turn; steps alternate customer/agent
  // starting with the customer.
  std::vector<std::vector<std::string>> steps;
};

inline const std::vector<SceneTemplate>& scene_templates() {
  static const std::vector<SceneTemplate> scenes{
      {"refund",
       {{"I want a refund for my order", "I would like to get my money back for an order",
         "please refund my last order"},
        {"Sorry to hear that, could you share your order number?", "I can help with the refund, what is the order number?",
         "Sure, please tell me your order number"},
        {"The order number is 4471", "it is order 4471", "my order number is 4471"},
        {"Thank you, the refund has been submitted and arrives in three days",
         "Thanks, I have submitted the refund, expect it within three days",
         "The refund is submitted, the money returns in three days"},
        {"Great, thanks for the help", "ok thank you very much", "thanks, that is all"},
        {"You are welcome, is there anything else I can help with?", "Glad to help, anything else I can do for you?",
         "My pleasure, anything else I can help with today?"}}},
      {"delivery",
       {{"My parcel has not arrived yet", "where is my package, it is late", "the delivery is late, where is my parcel"},
        {"Sorry for the delay, may I have your tracking number?", "Let me check that, what is the tracking number?",
         "I will look into the delivery, please give me the tracking number"},
        {"tracking number is TX900", "it is TX900", "the tracking code is TX900"},
        {"The courier shows the parcel at the local station, it will be delivered tomorrow",
         "Your package is at the local station and arrives tomorrow",
         "The parcel reached the local station, delivery is scheduled for tomorrow"},
        {"ok, can I change the delivery address", "can the courier deliver it to my office instead",
         "I want to change the address please"},
        {"Yes, I have updated the delivery address for you", "Sure, the address is updated now",
         "Done, the courier will use the new address"}}},
      {"password",
       {{"I forgot my password and cannot log in", "I can not log into my account, password lost",
         "help, my password does not work"},
        {"I can help you reset it, please confirm the phone number on the account",
         "No problem, what phone number is linked to the account?",
         "Let us reset the password, please confirm your registered phone number"},
        {"the phone number ends with 8821", "it ends in 8821", "my phone ends with 8821"},
        {"A verification code was sent to your phone, please enter it on the reset page",
         "I sent a verification code to your phone, use it on the reset page",
         "Please check your phone for the verification code and enter it on the reset page"},
        {"got it, the reset worked", "it works now, thanks", "I reset it successfully"},
        {"Great, is there anything else I can help with?", "Glad it works, anything else for you today?",
         "Perfect, anything else I can do for you?"}}},
      {"complaint",
       {{"The blender I bought is broken and I am very unhappy", "I want to complain, the product broke after one day",
         "your blender stopped working, this is unacceptable"},
        {"I am very sorry about this experience, could you describe the problem?",
         "I apologize for the trouble, what exactly happened with the product?",
         "Sorry for the inconvenience, please describe what is wrong"},
        {"it makes a loud noise and then stops", "the motor stops after a loud noise", "loud noise, then it stops working"},
        {"I will arrange a free replacement and a coupon for the trouble",
         "We will send you a free replacement plus a coupon as an apology",
         "I can offer a replacement at no cost and a coupon for the inconvenience"},
        {"ok that sounds fair", "fine, please send the replacement", "alright, thank you"},
        {"Thank you for your patience, anything else I can help with?", "Thanks for understanding, anything else today?",
         "We appreciate your patience, is there anything else?"}}},
  };
  return scenes;
}

// Noisy synthetic service logs. Each dialogue follows one scene template with
// random paraphrases; roughly one in five gets an extra agent turn, so raw
// logs contain consecutive same-role turns.
inline std::vector<Dialogue> synthetic_logs(std::size_t count, std::uint64_t seed, bool tag_scene = false) {
  std::mt19937_64 gen(seed);
  const auto& scenes = scene_templates();
  std::vector<Dialogue> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& scene = scenes[i % scenes.size()];
    std::vector<std::pair<Role, std::string>> turns;
    for (std::size_t s = 0; s < scene.steps.size(); ++s) {
      const auto& variants = scene.steps[s];
      const Role role = s % 2 == 0 ? Role::Customer : Role::Agent;
      turns.emplace_back(role, variants[gen() % variants.size()]);
      if (role == Role::Agent && gen() % 5 == 0) turns.emplace_back(Role::Agent, "one moment please");
    }
    const std::size_t keep = 4 + gen() % (scene.steps.size() - 3);  // 4..6 turns of the template
    std::size_t customer_steps = 0;
    std::vector<std::pair<Role, std::string>> trimmed;
    for (auto& t : turns) {
      if (t.first == Role::Customer) ++customer_steps;
      if (customer_steps * 2 > keep + 1) break;
      trimmed.push_back(t);
    }
    char id[32];
    std::snprintf(id, sizeof id, "log-%05zu", i);
    Dialogue d{id, make_turns(trimmed), std::nullopt};
    if (tag_scene) d.scene = scene.name;
    out.push_back(std::move(d));
  }
  return out;
}

// Canonical scripts: first paraphrase of every step.
inline std::vector<DialogueScript> canonical_scripts() {
  std::vector<DialogueScript> out;
  for (const auto& scene : scene_templates()) {
    for (std::size_t variant = 0; variant < 2; ++variant) {
      std::vector<std::pair<Role, std::string>> turns;
      for (std::size_t s = 0; s < scene.steps.size(); ++s)
        turns.emplace_back(s % 2 == 0 ? Role::Customer : Role::Agent, scene.steps[s][variant]);
      out.push_back(DialogueScript{scene.name + "-script-" + std::to_string(variant), scene.name, make_turns(turns)});
    }
  }
  return out;
}

// Random alternating script of `agent_turns` exchanges over a small word pool.
inline DialogueScript random_script(std::mt19937_64& gen, std::size_t agent_turns, const std::string& id = "rand") {
  static const std::vector<std::string> pool{"order", "refund", "parcel", "password", "reset", "address", "phone",
                                             "number", "replacement", "coupon", "tomorrow", "check", "please",
                                             "thanks", "sorry", "help", "account", "code", "station", "courier"};
  std::vector<std::pair<Role, std::string>> turns;
  for (std::size_t k = 0; k < agent_turns; ++k) {
    for (Role role : {Role::Customer, Role::Agent}) {
      std::string text;
      const int n = 3 + static_cast<int>(gen() % 6);
      for (int w = 0; w < n; ++w) text += (w ? " " : "") + pool[gen() % pool.size()];
      turns.emplace_back(role, text + " " + std::to_string(k) + (role == Role::Agent ? "a" : "c"));
    }
  }
  if (gen() % 2) turns.emplace_back(Role::Customer, "ok bye");
  return DialogueScript{id, "random", make_turns(turns)};
}

// ---------------------------------------------------------------------------
// SGNS finite-difference oracle. The loss is re-derived here from the
// objective directly and never calls the library's loss code.

inline double reference_sgns_loss(const std::vector<double>& v, const std::vector<double>& u_pos,
                                  const std::vector<std::vector<double>>& u_neg) {
  auto dotp = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto log_sig = [](double x) { return -std::log(1.0 + std::exp(-x)); };
  double loss = -log_sig(dotp(u_pos, v));
  for (const auto& u : u_neg) loss -= log_sig(-dotp(u, v));
  return loss;
}

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

inline GradientCheckResult sgns_gradient_check(std::size_t points, std::size_t dim, std::size_t negatives,
                                               std::uint64_t seed, double h = 1e-4) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 0.6);
  GradientCheckResult res;
  for (std::size_t p = 0; p < points; ++p) {
    std::vector<double> v(dim), up(dim);
    std::vector<std::vector<double>> un(negatives, std::vector<double>(dim));
    for (auto& x : v) x = nd(gen);
    for (auto& x : up) x = nd(gen);
    for (auto& u : un)
      for (auto& x : u) x = nd(gen);

    std::vector<std::span<const double>> spans;
    for (const auto& u : un) spans.emplace_back(u);
    const auto g = textenc::sgns_pair_gradient(v, up, spans);

    auto central = [&](std::vector<double>& param, std::size_t k) {
      const double orig = param[k];
      param[k] = orig + h;
      const double fp = reference_sgns_loss(v, up, un);
      param[k] = orig - h;
      const double fm = reference_sgns_loss(v, up, un);
      param[k] = orig;
      return (fp - fm) / (2 * h);
    };
    for (std::size_t k = 0; k < dim; ++k) {
      res.max_rel_error = std::max(res.max_rel_error, relative_error(g.d_center[k], central(v, k)));
      res.max_rel_error = std::max(res.max_rel_error, relative_error(g.d_context[k], central(up, k)));
      for (std::size_t n = 0; n < negatives; ++n)
        res.max_rel_error = std::max(res.max_rel_error, relative_error(g.d_negatives[n][k], central(un[n], k)));
      res.coordinates += 2 + negatives;
    }
  }
  return res;
}

}  // namespace coach::testing
