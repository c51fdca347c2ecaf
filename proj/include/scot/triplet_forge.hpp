#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scot/embedding_store.hpp"
#include "scot/rng.hpp"

namespace scot {

enum class RuleKind {
  Swap,    // replace a matched token with another from the pool
  Add,     // insert a pool word before a matched token
  Remove,  // drop a matched token
};

struct GrammarRule {
  std::string name;
  RuleKind kind = RuleKind::Swap;
  /// The rule applies when a caption token equals one of these.
  std::vector<std::string> match_tokens;
  std::vector<std::string> pool;
  /// Uses {old} and/or {new} depending on kind.
  std::string modification_template;
};

/// Throws BadConfig when the pool is empty or required slots are missing.
void validate_rule(const GrammarRule& rule);

/// Color swap, object-noun swap, attribute add and attribute remove.
std::vector<GrammarRule> default_grammar();

/// A single concrete edit: which rule fired, at which token, with which words.
struct TemplateEdit {
  std::size_t rule_index = 0;
  std::size_t token_index = 0;
  std::string old_word;
  std::string new_word;
};

/// Rewrites the caption according to edit. Pure; shared by generation and checks.
std::string apply_edit(const std::string& caption, const GrammarRule& rule, const TemplateEdit& edit);
std::string render_modification(const GrammarRule& rule, const TemplateEdit& edit);

struct TemplateResult {
  TextTriplet triplet;
  TemplateEdit edit;
};

TemplateResult gen_template_edit(const std::string& caption, const std::vector<GrammarRule>& rules,
                                 Rng& rng, const std::string& id = {});
TextTriplet gen_template_triplet(const std::string& caption, const std::vector<GrammarRule>& rules,
                                 Rng& rng, const std::string& id = {});

inline constexpr std::size_t kMaxTextLength = 512;

/// Empty optional means accepted; otherwise the rejection reason.
std::optional<std::string> validate_triplet(const TextTriplet& t);

struct LlmEndpointConfig {
  std::string base_url;
  std::string model_name;
  std::string prompt_template = "{caption}";
  double timeout_s = 30.0;
  int max_retries = 3;
  double temperature = 0.7;
  std::string api_key;
};

void validate_endpoint(const LlmEndpointConfig& cfg);

/// Sends one request body and returns the raw response body. Implementations
/// throw Error(TransportError) on connection failure or non-2xx status.
/// Must be safe to call from several threads.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string post(const LlmEndpointConfig& cfg, const std::string& body) = 0;
};

/// HTTP POST to cfg.base_url with a JSON body; bearer auth when api_key is set.
std::unique_ptr<Transport> make_http_transport();

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Real sleep via std::this_thread.
Sleeper default_sleeper();

std::string build_prompt(const LlmEndpointConfig& cfg, const std::string& caption);
std::string build_request_body(const LlmEndpointConfig& cfg, const std::string& caption);

/// Extracts {modification, modified_caption} from a response body. Accepts the
/// plain object, or a vendor envelope whose text payload holds that object
/// ("response", "choices[0].text", "choices[0].message.content").
std::pair<std::string, std::string> parse_llm_response(const std::string& body);

/// Retries TransportError with backoff 1s, 2s, 4s, ... up to cfg.max_retries.
TextTriplet llm_generate(const std::string& caption, const LlmEndpointConfig& cfg,
                         Transport& transport, const Sleeper& sleep = default_sleeper(),
                         const std::string& id = {});

struct LlmOutcome {
  std::optional<TextTriplet> triplet;
  std::string error;  // set when triplet is empty
};

/// Runs llm_generate over captions with at most `parallelism` requests in
/// flight. Results come back in input order.
std::vector<LlmOutcome> llm_generate_many(const std::vector<std::pair<std::string, std::string>>& id_captions,
                                          const LlmEndpointConfig& cfg, Transport& transport,
                                          std::size_t parallelism = 4,
                                          const Sleeper& sleep = default_sleeper());

}  // namespace scot
