#include <doctest.h>

#include <cctype>
#include <json.hpp>

#include "property.hpp"
#include "scot/triplet_forge.hpp"

using namespace scot;
using namespace scot::testing;

namespace {

/// Captions mixing grammar vocabulary, filler words and punctuation.
std::string random_caption(Rng& rng, const std::vector<GrammarRule>& rules) {
  std::vector<std::string> vocab{"a", "the", "with", "and", "on", "photo", "of", "near", "small"};
  for (const auto& r : rules) {
    vocab.insert(vocab.end(), r.match_tokens.begin(), r.match_tokens.end());
    vocab.insert(vocab.end(), r.pool.begin(), r.pool.end());
  }
  std::string caption;
  const std::size_t n = pick(rng, 1, 14);
  for (std::size_t k = 0; k < n; ++k) {
    if (k) caption += ' ';
    auto w = vocab[rng.bounded(static_cast<std::uint32_t>(vocab.size()))];
    if (rng.bounded(6) == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    caption += w;
    if (rng.bounded(8) == 0) caption += rng.bounded(2) ? "," : ".";
  }
  return caption;
}

class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(std::string body) : body_(std::move(body)) {}
  std::string post(const LlmEndpointConfig&, const std::string&) override { return body_; }

 private:
  std::string body_;
};

std::string random_text(Rng& rng, std::size_t max_len) {
  static const std::string alphabet = "abc xyz\"\\{}";
  std::string s;
  const std::size_t n = pick(rng, 0, max_len);
  for (std::size_t k = 0; k < n; ++k) s += alphabet[rng.bounded(static_cast<std::uint32_t>(alphabet.size()))];
  return s;
}

}  // namespace

TEST_CASE("grammar generation is a pure function of caption, rules and seed") {
  const auto rules = default_grammar();
  for (int i = 0; i < kCases; ++i) {
    Rng meta = case_rng(301, i);
    const auto caption = random_caption(meta, rules);
    const std::uint64_t seed = meta.next_u32();
    auto attempt = [&] {
      Rng rng(seed);
      try {
        return std::optional<TextTriplet>(gen_template_triplet(caption, rules, rng, "x"));
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NoRuleApplies);
        return std::optional<TextTriplet>();
      }
    };
    CHECK(attempt() == attempt());
  }
}

TEST_CASE("grammar triplets re-derive from their edit") {
  const auto rules = default_grammar();
  std::size_t generated = 0;
  for (int i = 0; i < kCases; ++i) {
    Rng rng = case_rng(302, i);
    const auto caption = random_caption(rng, rules);
    try {
      const auto r = gen_template_edit(caption, rules, rng);
      ++generated;
      const auto& rule = rules.at(r.edit.rule_index);
      CHECK(r.triplet.caption == caption);
      CHECK(apply_edit(caption, rule, r.edit) == r.triplet.modified_caption);
      CHECK(render_modification(rule, r.edit) == r.triplet.modification);
      CHECK_FALSE(validate_triplet(r.triplet).has_value());
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NoRuleApplies);
    }
  }
  CHECK(generated > kCases / 2);
}

TEST_CASE("llm_generate only returns valid triplets") {
  LlmEndpointConfig cfg;
  cfg.base_url = "http://localhost:1/v1";
  cfg.model_name = "m";
  cfg.max_retries = 0;
  const auto no_sleep = [](std::chrono::milliseconds) {};
  std::size_t accepted = 0;
  for (int i = 0; i < kCases; ++i) {
    Rng rng = case_rng(303, i);
    const std::string caption = rng.bounded(5) == 0 ? random_text(rng, 4) : "a red dress " + random_text(rng, 8);
    nlohmann::json payload;
    const auto kind = rng.bounded(6);
    payload["modification"] = kind == 0 ? std::string() : random_text(rng, 20);
    payload["modified_caption"] = kind == 1   ? caption
                                  : kind == 2 ? std::string(600, 'w')
                                              : caption + " " + random_text(rng, 10);
    std::string body = payload.dump();
    if (kind == 3) body = "{\"response\": " + nlohmann::json(payload.dump()).dump() + "}";
    if (kind == 4 && rng.bounded(2)) body = random_text(rng, 30);
    ScriptedTransport t(body);
    try {
      const auto trip = llm_generate(caption, cfg, t, no_sleep, "id");
      CHECK_FALSE(validate_triplet(trip).has_value());
      ++accepted;
    } catch (const Error&) {
    }
  }
  CHECK(accepted > 0);
}
