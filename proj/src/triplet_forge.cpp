#include "scot/triplet_forge.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace scot {

using json = nlohmann::json;

namespace {

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

// Token with trailing punctuation split off, lowercased for matching.
struct TokenParts {
  std::string core;
  std::string suffix;
};

TokenParts parts_of(const std::string& tok) {
  std::size_t end = tok.size();
  while (end > 0 && std::string_view(".,!?;:").find(tok[end - 1]) != std::string_view::npos) --end;
  return {tok.substr(0, end), tok.substr(end)};
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

// Pool words admissible for an edit at token_index.
std::vector<std::string> candidates_for(const GrammarRule& rule, const std::vector<std::string>& toks,
                                        std::size_t token_index) {
  std::vector<std::string> lowered;
  for (const auto& t : toks) lowered.push_back(lower(parts_of(t).core));
  const std::string& old = lowered[token_index];
  std::vector<std::string> out;
  switch (rule.kind) {
    case RuleKind::Swap:
      for (const auto& w : rule.pool) {
        if (lower(w) != old) out.push_back(w);
      }
      break;
    case RuleKind::Add:
      for (const auto& w : rule.pool) {
        if (!contains(lowered, lower(w))) out.push_back(w);
      }
      break;
    case RuleKind::Remove:
      if (toks.size() >= 2) out.push_back({});
      break;
  }
  return out;
}

// Code points, counting every byte that is not a UTF-8 continuation byte.
std::size_t utf8_length(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace

void validate_rule(const GrammarRule& rule) {
  if (rule.match_tokens.empty()) throw Error(ErrorKind::BadConfig, "rule '" + rule.name + "' has no match tokens");
  if (rule.kind != RuleKind::Remove && rule.pool.empty()) {
    throw Error(ErrorKind::BadConfig, "rule '" + rule.name + "' has an empty substitution pool");
  }
  const bool has_old = rule.modification_template.find("{old}") != std::string::npos;
  const bool has_new = rule.modification_template.find("{new}") != std::string::npos;
  const bool ok = rule.kind == RuleKind::Swap     ? has_old && has_new
                  : rule.kind == RuleKind::Add    ? has_new
                                                  : has_old;
  if (!ok) throw Error(ErrorKind::BadConfig, "rule '" + rule.name + "' template lacks required slots");
}

std::vector<GrammarRule> default_grammar() {
  const std::vector<std::string> colors = {"red",  "blue",   "green",  "black", "white", "yellow",
                                           "pink", "purple", "gray",   "brown", "orange", "beige"};
  const std::vector<std::string> objects = {"dress", "shirt", "skirt", "jacket", "coat",  "sweater",
                                            "hat",   "shoes", "bag",   "dog",    "cat",   "car",
                                            "chair", "table", "bike",  "horse",  "bird",  "cup"};
  const std::vector<std::string> attributes = {"sleeveless", "striped", "floral", "plaid",
                                               "denim",      "leather", "wooden", "fluffy",
                                               "vintage",    "small",   "large",  "shiny"};
  return {
      {"color-swap", RuleKind::Swap, colors, colors, "change the color from {old} to {new}"},
      {"object-swap", RuleKind::Swap, objects, objects, "replace the {old} with a {new}"},
      {"attribute-add", RuleKind::Add, objects, attributes, "make it {new}"},
      {"attribute-remove", RuleKind::Remove, attributes, {}, "remove the {old} look"},
  };
}

std::string apply_edit(const std::string& caption, const GrammarRule& rule, const TemplateEdit& edit) {
  auto toks = split_tokens(caption);
  if (edit.token_index >= toks.size()) {
    throw Error(ErrorKind::InvariantViolation, "edit token index out of range");
  }
  auto parts = parts_of(toks[edit.token_index]);
  switch (rule.kind) {
    case RuleKind::Swap:
      toks[edit.token_index] = edit.new_word + parts.suffix;
      break;
    case RuleKind::Add:
      toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(edit.token_index), edit.new_word);
      break;
    case RuleKind::Remove:
      if (!parts.suffix.empty() && edit.token_index > 0) toks[edit.token_index - 1] += parts.suffix;
      toks.erase(toks.begin() + static_cast<std::ptrdiff_t>(edit.token_index));
      break;
  }
  return join_tokens(toks);
}

std::string render_modification(const GrammarRule& rule, const TemplateEdit& edit) {
  std::string m = rule.modification_template;
  replace_all(m, "{old}", edit.old_word);
  replace_all(m, "{new}", edit.new_word);
  return m;
}

TemplateResult gen_template_edit(const std::string& caption, const std::vector<GrammarRule>& rules,
                                 Rng& rng, const std::string& id) {
  if (caption.empty()) throw Error(ErrorKind::InvariantViolation, "empty caption");
  for (const auto& r : rules) validate_rule(r);
  const auto toks = split_tokens(caption);

  struct Site {
    std::size_t rule;
    std::size_t token;
  };
  std::vector<Site> sites;
  for (std::size_t ri = 0; ri < rules.size(); ++ri) {
    std::vector<std::string> match;
    for (const auto& m : rules[ri].match_tokens) match.push_back(lower(m));
    for (std::size_t ti = 0; ti < toks.size(); ++ti) {
      if (contains(match, lower(parts_of(toks[ti]).core)) && !candidates_for(rules[ri], toks, ti).empty()) {
        sites.push_back({ri, ti});
      }
    }
  }
  if (sites.empty()) throw Error(ErrorKind::NoRuleApplies, "no rule matches caption '" + caption + "'");

  const Site site = sites[rng.bounded(static_cast<std::uint32_t>(sites.size()))];
  const auto pool = candidates_for(rules[site.rule], toks, site.token);
  TemplateEdit edit;
  edit.rule_index = site.rule;
  edit.token_index = site.token;
  edit.old_word = parts_of(toks[site.token]).core;
  edit.new_word = pool[rng.bounded(static_cast<std::uint32_t>(pool.size()))];

  const GrammarRule& rule = rules[site.rule];
  TextTriplet t{id, caption, render_modification(rule, edit), apply_edit(caption, rule, edit)};
  return {std::move(t), std::move(edit)};
}

TextTriplet gen_template_triplet(const std::string& caption, const std::vector<GrammarRule>& rules,
                                 Rng& rng, const std::string& id) {
  return gen_template_edit(caption, rules, rng, id).triplet;
}

std::optional<std::string> validate_triplet(const TextTriplet& t) {
  if (t.caption.empty()) return "empty caption";
  if (t.modification.empty()) return "empty modification";
  if (t.modified_caption.empty()) return "empty modified_caption";
  if (t.modified_caption == t.caption) return "modified_caption equals caption";
  if (utf8_length(t.caption) > kMaxTextLength || utf8_length(t.modification) > kMaxTextLength ||
      utf8_length(t.modified_caption) > kMaxTextLength) {
    return "length exceeds 512 characters";
  }
  return std::nullopt;
}

void validate_endpoint(const LlmEndpointConfig& cfg) {
  if (cfg.base_url.empty()) throw Error(ErrorKind::BadConfig, "LLM endpoint base_url is empty");
  if (!(cfg.timeout_s > 0)) throw Error(ErrorKind::BadConfig, "LLM timeout must be positive");
  if (cfg.max_retries < 0) throw Error(ErrorKind::BadConfig, "max_retries must be >= 0");
  if (cfg.prompt_template.find("{caption}") == std::string::npos) {
    throw Error(ErrorKind::BadConfig, "prompt_template lacks {caption}");
  }
}

Sleeper default_sleeper() {
  return [](std::chrono::milliseconds ms) { std::this_thread::sleep_for(ms); };
}

std::string build_prompt(const LlmEndpointConfig& cfg, const std::string& caption) {
  std::string prompt = cfg.prompt_template;
  replace_all(prompt, "{caption}", caption);
  return prompt;
}

std::string build_request_body(const LlmEndpointConfig& cfg, const std::string& caption) {
  json body;
  body["model"] = cfg.model_name;
  body["prompt"] = build_prompt(cfg, caption);
  body["temperature"] = cfg.temperature;
  return body.dump();
}

std::pair<std::string, std::string> parse_llm_response(const std::string& body) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(ErrorKind::MalformedResponse, "response body is not a JSON object");
  }
  auto has_fields = [](const json& j) {
    return j.is_object() && j.contains("modification") && j.contains("modified_caption");
  };
  if (!has_fields(doc)) {
    const json* text = nullptr;
    if (auto it = doc.find("response"); it != doc.end() && it->is_string()) {
      text = &*it;
    } else if (auto ch = doc.find("choices"); ch != doc.end() && ch->is_array() && !ch->empty()) {
      const json& first = (*ch)[0];
      if (first.contains("text") && first["text"].is_string()) {
        text = &first["text"];
      } else if (first.contains("message") && first["message"].is_object() &&
                 first["message"].contains("content") && first["message"]["content"].is_string()) {
        text = &first["message"]["content"];
      }
    }
    if (text == nullptr) throw Error(ErrorKind::MalformedResponse, "response lacks modification fields");
    doc = json::parse(text->get<std::string>(), nullptr, false);
    if (!has_fields(doc)) throw Error(ErrorKind::MalformedResponse, "embedded payload lacks modification fields");
  }
  if (!doc["modification"].is_string() || !doc["modified_caption"].is_string()) {
    throw Error(ErrorKind::MalformedResponse, "modification fields are not strings");
  }
  return {doc["modification"].get<std::string>(), doc["modified_caption"].get<std::string>()};
}

TextTriplet llm_generate(const std::string& caption, const LlmEndpointConfig& cfg, Transport& transport,
                         const Sleeper& sleep, const std::string& id) {
  if (caption.empty()) throw Error(ErrorKind::InvariantViolation, "empty caption");
  validate_endpoint(cfg);
  const std::string body = build_request_body(cfg, caption);
  std::string response;
  for (int attempt = 0;; ++attempt) {
    try {
      response = transport.post(cfg, body);
      break;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::TransportError) throw;
      if (attempt >= cfg.max_retries) {
        throw Error(ErrorKind::TransportError,
                    e.detail() + " (after " + std::to_string(attempt + 1) + " attempts)");
      }
      sleep(std::chrono::milliseconds(1000LL << attempt));
    }
  }
  auto [modification, modified] = parse_llm_response(response);
  TextTriplet t{id, caption, std::move(modification), std::move(modified)};
  if (auto reason = validate_triplet(t)) throw Error(ErrorKind::InvariantViolation, *reason);
  return t;
}

std::vector<LlmOutcome> llm_generate_many(const std::vector<std::pair<std::string, std::string>>& id_captions,
                                          const LlmEndpointConfig& cfg, Transport& transport,
                                          std::size_t parallelism, const Sleeper& sleep) {
  std::vector<LlmOutcome> out(id_captions.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < id_captions.size(); i = next++) {
      const auto& [id, caption] = id_captions[i];
      try {
        out[i].triplet = llm_generate(caption, cfg, transport, sleep, id);
      } catch (const Error& e) {
        out[i].error = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(parallelism, id_captions.size()));
  std::vector<std::jthread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  return out;
}

}  // namespace scot
