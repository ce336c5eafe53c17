#include "doctest.h"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "httplib.h"
#include "sticker_tts/answers.hpp"
#include "sticker_tts/llm_client.hpp"
#include "sticker_tts/prompts.hpp"

using namespace sticker_tts;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(bool(in), "missing file: " << path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ChatRequest sample_request() {
  ChatRequest req;
  req.model_name = "deepseek-r1";
  req.messages = {{"user", "hello"}};
  req.temperature = 0.6;
  req.top_p = 0.95;
  req.max_tokens = 32000;
  req.seed = 7;
  return req;
}

// Fails the first `failures` calls, then delegates to an inner backend.
class FlakyBackend : public Backend {
 public:
  FlakyBackend(Backend& inner, int failures, bool timeouts = false)
      : inner_(inner), failures_(failures), timeouts_(timeouts) {}

  ChatResponse chat(const RoleConfig& cfg, const ChatRequest& req,
                    const CallContext& ctx) override {
    ++attempts_;
    if (attempts_ <= failures_) {
      if (timeouts_) throw TransientTimeout("synthetic timeout");
      throw TransientFailure("synthetic 503");
    }
    return inner_.chat(cfg, req, ctx);
  }
  bool deterministic() const override { return true; }

  int attempts() const { return attempts_; }

 private:
  Backend& inner_;
  int failures_;
  bool timeouts_;
  int attempts_ = 0;
};

RoleConfig test_config(Role role) {
  RoleConfig cfg = default_role_config(role);
  cfg.model_name = "test-model";
  return cfg;
}

constexpr BackoffPolicy kFastBackoff{std::chrono::milliseconds(1),
                                     std::chrono::milliseconds(4)};

}  // namespace

TEST_CASE("request body matches the golden wire bytes") {
  std::string body = chat_request_body(sample_request());
  CHECK(body == read_file(std::string(STICKER_TTS_TEST_GOLDEN_DIR) +
                          "/chat_request.golden.json"));
}

TEST_CASE("seed is omitted when unset and key order is fixed") {
  ChatRequest req = sample_request();
  req.seed.reset();
  CHECK(chat_request_body(req) ==
        "{\"model\":\"deepseek-r1\","
        "\"messages\":[{\"role\":\"user\",\"content\":\"hello\"}],"
        "\"temperature\":0.6,\"top_p\":0.95,\"max_tokens\":32000}");
}

TEST_CASE("requests carry exactly one user message") {
  ChatRequest req = sample_request();
  req.messages.push_back({"user", "second"});
  CHECK_THROWS_AS(chat_request_body(req), Error);
  req.messages = {{"system", "hi"}};
  CHECK_THROWS_AS(chat_request_body(req), Error);
  req.messages = {};
  CHECK_THROWS_AS(chat_request_body(req), Error);
}

TEST_CASE("scripted backend replays by (question, role, call index)") {
  ScriptedBackend backend;
  backend.set_response("q1", Role::Extractor, 0, "X");
  backend.set_response("q1", Role::Extractor, 1, "Y");

  CallContext ctx{"q1", Role::Extractor, 0};
  ReasoningTrace t = send(backend, test_config(Role::Extractor), "p", ctx);
  CHECK(t.text == "X");
  CHECK(t.role == Role::Extractor);
  CHECK(t.prompt_tokens > 0);
  CHECK(t.completion_tokens > 0);

  ctx.call_index = 1;
  CHECK(send(backend, test_config(Role::Extractor), "p", ctx).text == "Y");

  ctx.call_index = 2;
  CHECK_THROWS_AS(send(backend, test_config(Role::Extractor), "p", ctx),
                  ScriptMiss);

  backend.set_default_response("fallback");
  CHECK(send(backend, test_config(Role::Extractor), "p", ctx).text ==
        "fallback");

  auto calls = backend.calls();
  REQUIRE(calls.size() == 4);
  CHECK(calls[0].ctx.call_index == 0);
  CHECK(calls[3].ctx.call_index == 2);
  CHECK(calls[0].prompt == "p");
}

TEST_CASE("scripted backend loads from a JSON file") {
  std::string path = "/tmp/sticker_tts_test_script.json";
  {
    std::ofstream out(path);
    out << R"({"default_response": "dflt", "responses": [
      {"question_id": "q1", "role": "utilizer", "call_index": 0,
       "text": "\\boxed{5}"}]})";
  }
  ScriptedBackend backend = ScriptedBackend::from_json_file(path);
  CallContext ctx{"q1", Role::Utilizer, 0};
  CHECK(send(backend, test_config(Role::Utilizer), "p", ctx).text ==
        "\\boxed{5}");
  ctx.call_index = 9;
  CHECK(send(backend, test_config(Role::Utilizer), "p", ctx).text == "dflt");
}

TEST_CASE("send rejects empty prompts") {
  ScriptedBackend backend;
  backend.set_default_response("x");
  CallContext ctx;
  CHECK_THROWS_AS(send(backend, test_config(Role::Utilizer), "", ctx),
                  EmptyInputError);
}

TEST_CASE("transient failures retry up to max_retries") {
  ScriptedBackend inner;
  inner.set_default_response("ok");
  CallContext ctx;
  RoleConfig cfg = test_config(Role::Utilizer);
  cfg.max_retries = 3;

  {
    FlakyBackend flaky(inner, 2);
    ReasoningTrace t = send(flaky, cfg, "p", ctx, kFastBackoff);
    CHECK(t.text == "ok");
    CHECK(flaky.attempts() == 3);
  }
  {
    FlakyBackend flaky(inner, 4);
    CHECK_THROWS_AS(send(flaky, cfg, "p", ctx, kFastBackoff),
                    PermanentFailure);
    CHECK(flaky.attempts() == 4);  // 1 + max_retries, never more
  }
  {
    FlakyBackend flaky(inner, 4, /*timeouts=*/true);
    CHECK_THROWS_AS(send(flaky, cfg, "p", ctx, kFastBackoff), TimeoutError);
  }
  {
    cfg.max_retries = 0;
    FlakyBackend flaky(inner, 1);
    CHECK_THROWS_AS(send(flaky, cfg, "p", ctx, kFastBackoff),
                    PermanentFailure);
    CHECK(flaky.attempts() == 1);
  }
}

TEST_CASE("backoff delays are monotonically non-decreasing and capped") {
  BackoffPolicy policy{std::chrono::milliseconds(250),
                       std::chrono::milliseconds(4000)};
  auto prev = std::chrono::milliseconds(0);
  for (int attempt = 0; attempt < 12; ++attempt) {
    auto d = backoff_delay(attempt, policy);
    CHECK(d >= prev);
    CHECK(d <= policy.cap);
    prev = d;
  }
  CHECK(backoff_delay(0, policy) == std::chrono::milliseconds(250));
  CHECK(backoff_delay(1, policy) == std::chrono::milliseconds(500));
  CHECK(backoff_delay(11, policy) == policy.cap);
}

TEST_CASE("http backend speaks the wire protocol against a local server") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::atomic<int> fail_first{0};
  std::string seen_auth;
  std::string seen_body;

  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                int n = ++hits;
                seen_auth = req.get_header_value("Authorization");
                seen_body = req.body;
                if (n <= fail_first.load()) {
                  res.status = 503;
                  return;
                }
                res.set_content(
                    R"({"choices":[{"message":{"content":"The answer is \\boxed{9}."},)"
                    R"("finish_reason":"stop"}],)"
                    R"("usage":{"prompt_tokens":12,"completion_tokens":34}})",
                    "application/json");
              });
  server.Post("/v1/notfound/chat/completions",
              [&](const httplib::Request&, httplib::Response& res) {
                res.status = 404;
                ++hits;
              });

  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("STICKER_TTS_API_KEY", "sk-test-key", 1);
  HttpBackend backend;
  RoleConfig cfg = test_config(Role::Utilizer);
  cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.max_retries = 3;
  CallContext ctx{"q1", Role::Utilizer, 0};

  SUBCASE("success path parses content, usage, and sends auth") {
    hits = 0;
    ReasoningTrace t = send(backend, cfg, "hello", ctx, kFastBackoff);
    CHECK(t.text == "The answer is \\boxed{9}.");
    CHECK(t.prompt_tokens == 12);
    CHECK(t.completion_tokens == 34);
    CHECK(t.finish_reason == FinishReason::Stop);
    CHECK(seen_auth == "Bearer sk-test-key");
    ChatRequest expected;
    expected.model_name = cfg.model_name;
    expected.messages = {{"user", "hello"}};
    expected.temperature = cfg.sampling.temperature;
    expected.top_p = cfg.sampling.top_p;
    expected.max_tokens = cfg.sampling.max_tokens;
    CHECK(seen_body == chat_request_body(expected));
  }

  SUBCASE("two 503s then success succeeds within max_retries") {
    hits = 0;
    fail_first = 2;
    ReasoningTrace t = send(backend, cfg, "hello", ctx, kFastBackoff);
    CHECK(t.text == "The answer is \\boxed{9}.");
    CHECK(hits.load() == 3);
  }

  SUBCASE("persistent 503s exhaust retries into PermanentFailure") {
    hits = 0;
    fail_first = 100;
    CHECK_THROWS_AS(send(backend, cfg, "hello", ctx, kFastBackoff),
                    PermanentFailure);
    CHECK(hits.load() == 4);
  }

  SUBCASE("non-429 4xx fails immediately without retry") {
    hits = 0;
    RoleConfig bad = cfg;
    bad.endpoint_url =
        "http://127.0.0.1:" + std::to_string(port) + "/v1/notfound";
    CHECK_THROWS_AS(send(backend, bad, "hello", ctx, kFastBackoff),
                    PermanentFailure);
    CHECK(hits.load() == 1);
  }

  fail_first = 0;
  server.stop();
  server_thread.join();
}

TEST_CASE("stochastic backend degenerate probabilities") {
  Question q{"q1", "What is 6*7?", "42", "unit"};

  StochasticParams sure;
  sure.p_initial_correct = 1.0;
  StochasticBackend always(sure);
  for (int step = 0; step < 50; ++step) {
    std::string text = stochastic_utilizer_step(always, q, std::nullopt, step);
    CHECK(extract_boxed(text) == std::optional<std::string>("42"));
  }

  StochasticParams absorbing;
  absorbing.p_initial_correct = 0.0;
  absorbing.p_fix = 0.0;
  absorbing.p_stay_correct = 1.0;
  StochasticBackend stuck(absorbing);
  std::string text = stochastic_utilizer_step(stuck, q, std::nullopt, 0);
  auto first = extract_boxed(text);
  REQUIRE(first.has_value());
  CHECK(*first != "42");
  for (int step = 1; step < 30; ++step) {
    auto a = extract_boxed(stochastic_utilizer_step(stuck, q, false, step));
    REQUIRE(a.has_value());
    CHECK(*a != "42");
  }
}

TEST_CASE("stochastic initial correctness matches its probability") {
  StochasticParams params;
  params.rng_seed = 7;
  params.p_initial_correct = 0.6;
  StochasticBackend backend(params);
  Question q{"", "x?", "17", "unit"};
  int correct = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    q.id = "q" + std::to_string(i);
    auto a = extract_boxed(stochastic_utilizer_step(backend, q, std::nullopt, 0));
    REQUIRE(a.has_value());
    if (*a == "17") ++correct;
  }
  double rate = static_cast<double>(correct) / n;
  CHECK(rate == doctest::Approx(0.6).epsilon(0.025));
  CHECK(std::abs(rate - 0.6) <= 0.015);
}

TEST_CASE("stochastic responses replay exactly and vary by stream") {
  StochasticParams params;
  params.rng_seed = 99;
  params.p_initial_correct = 0.5;
  StochasticBackend backend(params);
  Question q{"q7", "x?", "3", "unit"};

  std::string a = stochastic_utilizer_step(backend, q, std::nullopt, 0);
  std::string b = stochastic_utilizer_step(backend, q, std::nullopt, 0);
  CHECK(a == b);

  bool any_differs = false;
  for (int step = 1; step < 20; ++step) {
    if (stochastic_utilizer_step(backend, q, std::nullopt, step) != a) {
      any_differs = true;
    }
  }
  CHECK(any_differs);

  bool salt_differs = false;
  for (std::uint64_t salt = 1; salt < 20; ++salt) {
    if (stochastic_utilizer_step(backend, q, std::nullopt, 0, salt) != a) {
      salt_differs = true;
    }
  }
  CHECK(salt_differs);
}

TEST_CASE("stochastic backend requires a gold answer") {
  StochasticBackend backend(StochasticParams{});
  Question no_gold{"q1", "x?", std::nullopt, "unit"};
  CHECK_THROWS_AS(stochastic_utilizer_step(backend, no_gold, std::nullopt, 0),
                  MissingGoldError);

  CallContext ctx{"q1", Role::Utilizer, 0};
  CHECK_THROWS_AS(send(backend, test_config(Role::Utilizer), "p", ctx),
                  MissingGoldError);
}

TEST_CASE("stochastic extractor and modifier emit parseable stickers") {
  StochasticBackend backend(StochasticParams{});
  RoleConfig cfg = test_config(Role::Extractor);

  CallContext ectx{"q1", Role::Extractor, 0};
  ReasoningTrace e = send(backend, cfg, "p", ectx);
  Sticker es = parse_sticker(e.text);
  CHECK_FALSE(es.parse_failed);
  CHECK_FALSE(es.conditions.empty());

  CallContext mctx{"q1", Role::Modifier, 0};
  ReasoningTrace m = send(backend, cfg, "p", mctx);
  Sticker ms = parse_sticker(m.text);
  CHECK_FALSE(ms.parse_failed);
  CHECK(ms.requirements.has_value());

  // utilizer answers canonicalize to themselves (gold or "w<k>" tokens)
  StochasticBackend util(StochasticParams{});
  Question q{"q1", "x?", "42", "unit"};
  for (int step = 0; step < 10; ++step) {
    auto a = extract_boxed(stochastic_utilizer_step(util, q, std::nullopt, step));
    REQUIRE(a.has_value());
    CHECK(canonicalize(*a) == *a);
  }
}
