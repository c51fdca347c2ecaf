#include <doctest.h>

#include <atomic>
#include <mutex>

#include "scot/triplet_forge.hpp"

using namespace scot;

namespace {

GrammarRule color_rule(std::vector<std::string> pool) {
  return {"color-swap", RuleKind::Swap, {"red", "blue", "green"}, std::move(pool),
          "change the color from {old} to {new}"};
}

class MockTransport : public Transport {
 public:
  explicit MockTransport(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string post(const LlmEndpointConfig&, const std::string& body) override {
    calls.fetch_add(1);
    {
      std::lock_guard lock(mu);
      bodies.push_back(body);
    }
    return fn_(body);
  }
  std::atomic<int> calls{0};
  std::mutex mu;
  std::vector<std::string> bodies;

 private:
  std::function<std::string(const std::string&)> fn_;
};

LlmEndpointConfig endpoint() {
  LlmEndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:9/generate";
  cfg.model_name = "mock";
  cfg.prompt_template = "Edit: {caption}";
  cfg.max_retries = 3;
  return cfg;
}

const Sleeper no_sleep = [](std::chrono::milliseconds) {};

}  // namespace

TEST_CASE("color swap with a forced pool") {
  Rng rng(1);
  const auto t = gen_template_triplet("a red dress", {color_rule({"blue"})}, rng, "x");
  CHECK(t.modification == "change the color from red to blue");
  CHECK(t.modified_caption == "a blue dress");
  CHECK(t.caption == "a red dress");
  CHECK(t.id == "x");
}

TEST_CASE("no rule applies") {
  Rng rng(1);
  try {
    gen_template_triplet("xqzt", {color_rule({"blue"})}, rng);
    FAIL("expected NoRuleApplies");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoRuleApplies);
  }
}

TEST_CASE("template generation is deterministic per seed") {
  const auto rules = default_grammar();
  Rng a(77), b(77);
  const auto ta = gen_template_triplet("a red leather jacket on a chair", rules, a);
  const auto tb = gen_template_triplet("a red leather jacket on a chair", rules, b);
  CHECK(ta == tb);
}

TEST_CASE("default grammar rule families") {
  const auto rules = default_grammar();
  REQUIRE(rules.size() == 4);
  for (const auto& r : rules) CHECK_NOTHROW(validate_rule(r));
  SUBCASE("attribute add") {
    TemplateEdit e{2, 1, "dress", "striped"};
    CHECK(apply_edit("a dress", rules[2], e) == "a striped dress");
    CHECK(render_modification(rules[2], e) == "make it striped");
  }
  SUBCASE("attribute remove keeps punctuation") {
    TemplateEdit e{3, 2, "striped", ""};
    CHECK(apply_edit("a blue striped.", rules[3], e) == "a blue.");
    CHECK(render_modification(rules[3], e) == "remove the striped look");
  }
  SUBCASE("object swap") {
    TemplateEdit e{1, 1, "dog", "cat"};
    CHECK(apply_edit("a dog, sleeping", rules[1], e) == "a cat, sleeping");
  }
}

TEST_CASE("rules need a pool and their slots") {
  CHECK_THROWS_AS(validate_rule(color_rule({})), Error);
  auto r = color_rule({"blue"});
  r.modification_template = "make it {new}";
  CHECK_THROWS_AS(validate_rule(r), Error);
}

TEST_CASE("validate_triplet") {
  CHECK_FALSE(validate_triplet({"1", "a dog", "make it a cat", "a cat"}).has_value());
  CHECK(validate_triplet({"1", "a dog", "", "a cat"}) == std::optional<std::string>("empty modification"));
  CHECK(validate_triplet({"1", "a dog", "m", "a dog"}).has_value());
  const auto reason = validate_triplet({"1", std::string(600, 'a'), "m", "a cat"});
  REQUIRE(reason.has_value());
  CHECK(reason->find("length") != std::string::npos);
  // 512 two-byte characters are within the limit.
  std::string wide;
  for (int i = 0; i < 512; ++i) wide += "\xc3\xa9";
  CHECK_FALSE(validate_triplet({"1", wide, "m", "a cat"}).has_value());
}

TEST_CASE("llm_generate with a mock transport") {
  auto cfg = endpoint();
  SUBCASE("valid response") {
    MockTransport t([](const std::string&) {
      return R"({"modification":"make it sleeveless","modified_caption":"a sleeveless red dress"})";
    });
    const auto r = llm_generate("a red dress", cfg, t, no_sleep, "id1");
    CHECK(r.caption == "a red dress");
    CHECK(r.modification == "make it sleeveless");
    CHECK(r.modified_caption == "a sleeveless red dress");
    CHECK(t.bodies.at(0).find("Edit: a red dress") != std::string::npos);
  }
  SUBCASE("non-object body") {
    MockTransport t([](const std::string&) { return "[1, 2]"; });
    CHECK_THROWS_WITH_AS(llm_generate("a red dress", cfg, t, no_sleep), doctest::Contains("MalformedResponse"), Error);
  }
  SUBCASE("unchanged caption") {
    MockTransport t([](const std::string&) {
      return R"({"modification":"nothing","modified_caption":"a red dress"})";
    });
    CHECK_THROWS_WITH_AS(llm_generate("a red dress", cfg, t, no_sleep), doctest::Contains("InvariantViolation"),
                         Error);
  }
  SUBCASE("vendor envelopes") {
    MockTransport chat([](const std::string&) {
      return R"({"choices":[{"message":{"content":"{\"modification\":\"m\",\"modified_caption\":\"a blue dress\"}"}}]})";
    });
    CHECK(llm_generate("a red dress", cfg, chat, no_sleep).modified_caption == "a blue dress");
    MockTransport plain([](const std::string&) {
      return R"({"response":"{\"modification\":\"m\",\"modified_caption\":\"a blue dress\"}"})";
    });
    CHECK(llm_generate("a red dress", cfg, plain, no_sleep).modified_caption == "a blue dress");
  }
}

TEST_CASE("transport errors are retried with doubling backoff") {
  auto cfg = endpoint();
  cfg.max_retries = 3;
  std::vector<long long> waits;
  const Sleeper record = [&](std::chrono::milliseconds ms) { waits.push_back(ms.count()); };
  MockTransport t([](const std::string&) -> std::string { throw Error(ErrorKind::TransportError, "down"); });
  CHECK_THROWS_WITH_AS(llm_generate("a red dress", cfg, t, record), doctest::Contains("TransportError"), Error);
  CHECK(t.calls == 4);
  CHECK(waits == std::vector<long long>{1000, 2000, 4000});

  int n = 0;
  MockTransport flaky([&](const std::string&) -> std::string {
    if (n++ < 2) throw Error(ErrorKind::TransportError, "flaky");
    return R"({"modification":"m","modified_caption":"a blue dress"})";
  });
  waits.clear();
  CHECK(llm_generate("a red dress", cfg, flaky, record).modified_caption == "a blue dress");
  CHECK(waits.size() == 2);
}

TEST_CASE("request body and prompt") {
  auto cfg = endpoint();
  CHECK(build_prompt(cfg, "a cat") == "Edit: a cat");
  const auto body = build_request_body(cfg, "a cat");
  CHECK(body.find("\"model\":\"mock\"") != std::string::npos);
  CHECK(body.find("\"prompt\":\"Edit: a cat\"") != std::string::npos);
  CHECK(body.find("\"temperature\"") != std::string::npos);
}

TEST_CASE("endpoint validation") {
  auto cfg = endpoint();
  cfg.timeout_s = 0;
  CHECK_THROWS_AS(validate_endpoint(cfg), Error);
  cfg = endpoint();
  cfg.max_retries = -1;
  CHECK_THROWS_AS(validate_endpoint(cfg), Error);
}

TEST_CASE("llm_generate_many keeps input order and reports per-record errors") {
  auto cfg = endpoint();
  MockTransport t([](const std::string& body) -> std::string {
    if (body.find("bad") != std::string::npos) return "not json";
    const auto pos = body.find("Edit: ") + 6;
    const auto caption = body.substr(pos, body.find('"', pos) - pos);
    return R"({"modification":"m","modified_caption":")" + caption + R"( edited"})";
  });
  std::vector<std::pair<std::string, std::string>> items;
  for (int i = 0; i < 20; ++i) items.emplace_back("id" + std::to_string(i), i == 7 ? "bad" : "cap" + std::to_string(i));
  const auto out = llm_generate_many(items, cfg, t, 4, no_sleep);
  REQUIRE(out.size() == 20);
  for (int i = 0; i < 20; ++i) {
    if (i == 7) {
      CHECK_FALSE(out[i].triplet.has_value());
      CHECK(out[i].error.find("MalformedResponse") != std::string::npos);
    } else {
      REQUIRE(out[i].triplet.has_value());
      CHECK(out[i].triplet->id == "id" + std::to_string(i));
      CHECK(out[i].triplet->modified_caption == "cap" + std::to_string(i) + " edited");
    }
  }
}

TEST_CASE("unreachable endpoint fails with a transport error") {
  auto cfg = endpoint();
  cfg.max_retries = 0;
  cfg.timeout_s = 2;
  auto http = make_http_transport();
  CHECK_THROWS_WITH_AS(llm_generate("a red dress", cfg, *http, no_sleep), doctest::Contains("TransportError"), Error);
}
