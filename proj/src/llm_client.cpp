#include "sticker_tts/llm_client.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include "httplib.h"

namespace sticker_tts {

namespace {

// Synthesized usage for offline backends: rough 4-bytes-per-token proxy.
std::int64_t synth_tokens(const std::string& text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::uint64_t fnv1a64(std::uint64_t h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a64_u64(std::uint64_t h, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv1a64(h, bytes, 8);
}

// Pure function of (seed, question, step); independent of call order.
std::mt19937_64 per_call_rng(std::uint64_t seed, const std::string& question_id,
                             int step_index) {
  std::uint64_t h = 14695981039346656037ULL;
  h = fnv1a64_u64(h, seed);
  h = fnv1a64(h, question_id.data(), question_id.size());
  h = fnv1a64_u64(h, static_cast<std::uint64_t>(step_index));
  return std::mt19937_64(h);
}

double unit_interval(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string utilizer_text(const StochasticParams& params, const std::string& gold,
                          std::optional<bool> prev_correct,
                          std::mt19937_64& rng) {
  double p = !prev_correct.has_value() ? params.p_initial_correct
             : (*prev_correct ? params.p_stay_correct : params.p_fix);
  bool correct = unit_interval(rng) < p;
  std::string answer;
  if (correct) {
    answer = gold;
  } else {
    int alphabet = std::max(1, params.answer_alphabet_size);
    answer = "w" + std::to_string(rng() % static_cast<std::uint64_t>(alphabet));
  }
  return "Reviewing the sticker conditions against the previous attempt, I "
         "recompute the target quantity step by step and check it against "
         "every condition.\n\nThe final answer is \\boxed{" +
         answer + "}.";
}

std::string extractor_text(const std::string& question_id) {
  return "**Conditions:**\n"
         "1. Every quantity stated in the problem is taken as given.\n"
         "2. The target quantity is uniquely determined by the givens.\n"
         "**Question:**\n"
         "Compute the target quantity for problem " + question_id + ".";
}

std::string modifier_text(const std::string& question_id) {
  return "**Conditions:**\n"
         "1. Every quantity stated in the problem is taken as given.\n"
         "2. The target quantity is uniquely determined by the givens.\n"
         "3. Checked: no condition contradicts another.\n"
         "**Question:**\n"
         "Compute the target quantity for problem " + question_id + ".\n"
         "**Requirements:**\n"
         "Give the final answer inside \\boxed{}.";
}

struct SplitUrl {
  std::string base;  // scheme://authority
  std::string path_prefix;
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw PermanentFailure("endpoint_url missing scheme: " + url);
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

FinishReason finish_reason_from_wire(const json& choice) {
  if (!choice.contains("finish_reason") || choice["finish_reason"].is_null()) {
    return FinishReason::Stop;
  }
  std::string s = choice["finish_reason"].get<std::string>();
  if (s == "stop") return FinishReason::Stop;
  if (s == "length") return FinishReason::Length;
  return FinishReason::Error;
}

}  // namespace

std::string chat_request_body(const ChatRequest& req) {
  if (req.messages.size() != 1 || req.messages[0].role != "user") {
    throw Error("chat requests carry exactly one user message");
  }
  ordered_json j;
  j["model"] = req.model_name;
  j["messages"] = ordered_json::array();
  for (const ChatMessage& m : req.messages) {
    ordered_json msg;
    msg["role"] = m.role;
    msg["content"] = m.content;
    j["messages"].push_back(std::move(msg));
  }
  j["temperature"] = req.temperature;
  j["top_p"] = req.top_p;
  j["max_tokens"] = req.max_tokens;
  if (req.seed.has_value()) j["seed"] = *req.seed;
  return j.dump();
}

std::chrono::milliseconds backoff_delay(int attempt, const BackoffPolicy& policy) {
  auto delay = policy.base;
  for (int i = 0; i < attempt && delay < policy.cap; ++i) delay *= 2;
  return std::min(delay, policy.cap);
}

ReasoningTrace send(Backend& backend, const RoleConfig& cfg,
                    const std::string& prompt, const CallContext& ctx,
                    const BackoffPolicy& backoff) {
  if (prompt.empty()) throw EmptyInputError("prompt must be non-empty");

  ChatRequest req;
  req.model_name = cfg.model_name;
  req.messages = {{"user", prompt}};
  req.temperature = cfg.sampling.temperature;
  req.top_p = cfg.sampling.top_p;
  req.max_tokens = cfg.sampling.max_tokens;

  const int attempts = 1 + std::max(0, cfg.max_retries);
  bool last_was_timeout = false;
  std::string last_error;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff_delay(attempt - 1, backoff));
    }
    try {
      ChatResponse resp = backend.chat(cfg, req, ctx);
      ReasoningTrace trace;
      trace.role = ctx.role;
      trace.text = resp.content;
      trace.prompt_tokens = resp.prompt_tokens;
      trace.completion_tokens = resp.completion_tokens;
      trace.finish_reason = resp.finish_reason;
      return trace;
    } catch (const TransientTimeout& e) {
      last_was_timeout = true;
      last_error = e.what();
    } catch (const TransientFailure& e) {
      last_was_timeout = false;
      last_error = e.what();
    }
  }
  std::string detail = " after " + std::to_string(attempts) +
                       " attempts: " + last_error;
  if (last_was_timeout) throw TimeoutError("request timed out" + detail);
  throw PermanentFailure("retries exhausted" + detail);
}

void ScriptedBackend::set_response(const std::string& question_id, Role role,
                                   int call_index, std::string text) {
  std::lock_guard lock(mu_);
  script_[{question_id, static_cast<int>(role), call_index}] = std::move(text);
}

void ScriptedBackend::set_default_response(std::string text) {
  std::lock_guard lock(mu_);
  default_response_ = std::move(text);
}

std::pair<std::map<ScriptedBackend::Key, std::string>,
          std::optional<std::string>>
ScriptedBackend::parse_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open script file: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError("script file is not valid JSON: " + path);

  std::map<Key, std::string> script;
  std::optional<std::string> default_response;
  if (j.contains("default_response") && !j["default_response"].is_null()) {
    default_response = j["default_response"].get<std::string>();
  }
  for (const json& r : j.value("responses", json::array())) {
    Key key{r.at("question_id").get<std::string>(),
            static_cast<int>(role_from_string(r.at("role").get<std::string>())),
            r.at("call_index").get<int>()};
    script[key] = r.at("text").get<std::string>();
  }
  return {std::move(script), std::move(default_response)};
}

ScriptedBackend ScriptedBackend::from_json_file(const std::string& path) {
  auto [script, default_response] = parse_script(path);
  return ScriptedBackend(std::move(script), std::move(default_response));
}

void ScriptedBackend::load_json_file(const std::string& path) {
  auto [script, default_response] = parse_script(path);
  std::lock_guard lock(mu_);
  script_ = std::move(script);
  default_response_ = std::move(default_response);
}

ChatResponse ScriptedBackend::chat(const RoleConfig& cfg, const ChatRequest& req,
                                   const CallContext& ctx) {
  (void)cfg;
  const std::string& prompt = req.messages.at(0).content;
  std::lock_guard lock(mu_);
  calls_.push_back({ctx, prompt});

  Key key{ctx.question_id, static_cast<int>(ctx.role), ctx.call_index};
  std::string text;
  if (auto it = script_.find(key); it != script_.end()) {
    text = it->second;
  } else if (default_response_.has_value()) {
    text = *default_response_;
  } else {
    throw ScriptMiss("no scripted response for (" + ctx.question_id + ", " +
                     to_string(ctx.role) + ", call " +
                     std::to_string(ctx.call_index) + ")");
  }
  return {text, synth_tokens(prompt), synth_tokens(text), FinishReason::Stop};
}

std::vector<ScriptedBackend::CallRecord> ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

StochasticBackend::StochasticBackend(StochasticParams params)
    : params_(params) {
  for (double p : {params.p_initial_correct, params.p_stay_correct, params.p_fix}) {
    if (p < 0.0 || p > 1.0) throw Error("probability out of [0,1]");
  }
  if (params.answer_alphabet_size < 1) {
    throw Error("answer_alphabet_size must be >= 1");
  }
}

ChatResponse StochasticBackend::chat(const RoleConfig& cfg,
                                     const ChatRequest& req,
                                     const CallContext& ctx) {
  (void)cfg;
  const std::string& prompt = req.messages.at(0).content;
  std::string text;
  switch (ctx.role) {
    case Role::Extractor:
      text = extractor_text(ctx.question_id);
      break;
    case Role::Modifier:
      text = modifier_text(ctx.question_id);
      break;
    case Role::Utilizer: {
      if (!ctx.gold.has_value()) {
        throw MissingGoldError("question " + ctx.question_id +
                               " has no gold answer; the stochastic backend "
                               "cannot simulate correctness without one");
      }
      std::optional<bool> prev_correct;
      if (ctx.prev_canonical.has_value()) {
        prev_correct = (*ctx.prev_canonical == *ctx.gold);
      }
      auto rng = per_call_rng(params_.rng_seed ^ ctx.stream_salt,
                              ctx.question_id, ctx.call_index);
      text = utilizer_text(params_, *ctx.gold, prev_correct, rng);
      break;
    }
  }
  return {text, synth_tokens(prompt), synth_tokens(text), FinishReason::Stop};
}

std::string stochastic_utilizer_step(const StochasticBackend& backend,
                                     const Question& question,
                                     std::optional<bool> prev_correct,
                                     int step_index, std::uint64_t stream_salt) {
  if (!question.gold.has_value()) {
    throw MissingGoldError("question " + question.id + " has no gold answer");
  }
  const StochasticParams& params = backend.params();
  auto rng = per_call_rng(params.rng_seed ^ stream_salt, question.id, step_index);
  return utilizer_text(params, *question.gold, prev_correct, rng);
}

ChatResponse HttpBackend::chat(const RoleConfig& cfg, const ChatRequest& req,
                               const CallContext& ctx) {
  (void)ctx;
  SplitUrl url = split_url(cfg.endpoint_url);
  httplib::Client client(url.base);
  client.set_connection_timeout(cfg.request_timeout);
  client.set_read_timeout(cfg.request_timeout);
  client.set_write_timeout(cfg.request_timeout);

  httplib::Headers headers;
  if (const char* key = std::getenv("STICKER_TTS_API_KEY")) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  auto res = client.Post(url.path_prefix + "/chat/completions", headers,
                         chat_request_body(req), "application/json");
  if (!res) {
    auto err = res.error();
    std::string what = "network error: " + httplib::to_string(err);
    if (err == httplib::Error::ConnectionTimeout) throw TransientTimeout(what);
    throw TransientFailure(what);
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransientFailure("HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw PermanentFailure("HTTP " + std::to_string(res->status) + ": " +
                           res->body);
  }

  json j = json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
    throw PermanentFailure("malformed response body");
  }
  const json& choice = j["choices"][0];
  ChatResponse resp;
  resp.content = choice.at("message").at("content").get<std::string>();
  resp.finish_reason = finish_reason_from_wire(choice);
  if (j.contains("usage")) {
    resp.prompt_tokens = j["usage"].value("prompt_tokens", 0);
    resp.completion_tokens = j["usage"].value("completion_tokens", 0);
  }
  return resp;
}

}  // namespace sticker_tts
