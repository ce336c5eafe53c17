// Uniform client over model backends: a remote OpenAI-compatible endpoint, a
// deterministic scripted backend for tests, and a stochastic simulation
// backend for desk-scale studies. Retry policy lives in send(); backends do a
// single call.
#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "sticker_tts/core.hpp"

namespace sticker_tts {

class PermanentFailure : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

// Thrown by backends for failures worth retrying (network error, 429, 5xx).
class TransientFailure : public Error {
 public:
  using Error::Error;
};

class TransientTimeout : public TransientFailure {
 public:
  using TransientFailure::TransientFailure;
};

class ScriptMiss : public Error {
 public:
  using Error::Error;
};

struct ChatMessage {
  std::string role = "user";
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

// The framework is single-turn per call: exactly one user message.
struct ChatRequest {
  std::string model_name;
  std::vector<ChatMessage> messages;
  double temperature = 0.6;
  double top_p = 0.95;
  int max_tokens = 32000;
  std::optional<std::int64_t> seed;

  bool operator==(const ChatRequest&) const = default;
};

struct ChatResponse {
  std::string content;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  FinishReason finish_reason = FinishReason::Stop;
};

// Exact wire bytes for the request: keys model, messages, temperature, top_p,
// max_tokens, then seed when set, in that order, compact encoding.
std::string chat_request_body(const ChatRequest& req);

// Everything a backend may need to identify one call. call_index counts calls
// per (question, role), so a retried call consumes the next index. gold and
// prev_canonical feed the stochastic backend only.
struct CallContext {
  std::string question_id;
  Role role = Role::Utilizer;
  int call_index = 0;
  std::uint64_t stream_salt = 0;
  std::optional<std::string> gold;
  std::optional<std::string> prev_canonical;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse chat(const RoleConfig& cfg, const ChatRequest& req,
                            const CallContext& ctx) = 0;
  // True when identical inputs always produce identical responses; the engine
  // then stamps logical wall times so trace files are byte-reproducible.
  virtual bool deterministic() const = 0;
};

struct BackoffPolicy {
  std::chrono::milliseconds base{250};
  std::chrono::milliseconds cap{4000};
};

// Delay before retry number (attempt+1); doubles per attempt, capped.
std::chrono::milliseconds backoff_delay(int attempt, const BackoffPolicy& policy);

// Issues one chat call with retries. Transient failures (network, 429, 5xx)
// are retried with exponential backoff up to cfg.max_retries extra attempts;
// exhaustion raises PermanentFailure, or TimeoutError when the last failure
// was a timeout. Other 4xx raise PermanentFailure immediately.
ReasoningTrace send(Backend& backend, const RoleConfig& cfg,
                    const std::string& prompt, const CallContext& ctx,
                    const BackoffPolicy& backoff = {});

// Replays canned responses from a script keyed by (question_id, role,
// call_index). Lookups outside the script fail loudly with ScriptMiss unless
// a default response is set.
class ScriptedBackend : public Backend {
 public:
  struct CallRecord {
    CallContext ctx;
    std::string prompt;
  };

  ScriptedBackend() = default;

  void set_response(const std::string& question_id, Role role, int call_index,
                    std::string text);
  void set_default_response(std::string text);

  // JSON file: {"default_response": optional string, "responses": [{
  //   "question_id", "role", "call_index", "text"}]}
  static ScriptedBackend from_json_file(const std::string& path);

  // Same format; replaces this instance's script. ScriptedBackend cannot be
  // moved, so heap instances are filled in place.
  void load_json_file(const std::string& path);

  ChatResponse chat(const RoleConfig& cfg, const ChatRequest& req,
                    const CallContext& ctx) override;
  bool deterministic() const override { return true; }

  std::vector<CallRecord> calls() const;

 private:
  using Key = std::tuple<std::string, int, int>;

  ScriptedBackend(std::map<Key, std::string> script,
                  std::optional<std::string> default_response)
      : script_(std::move(script)),
        default_response_(std::move(default_response)) {}

  static std::pair<std::map<Key, std::string>, std::optional<std::string>>
  parse_script(const std::string& path);

  mutable std::mutex mu_;
  std::map<Key, std::string> script_;
  std::optional<std::string> default_response_;
  std::vector<CallRecord> calls_;
};

struct StochasticParams {
  std::uint64_t rng_seed = 0;
  double p_initial_correct = 0.5;
  double p_stay_correct = 0.9;
  double p_fix = 0.3;
  int answer_alphabet_size = 10;
};

// Simulates the three roles without a model. Utilizer answers follow a
// two-state Markov chain over correctness: the first answer for a question is
// correct with probability p_initial_correct, later ones with p_stay_correct
// or p_fix depending on the previous answer. Wrong answers are "w0".."w{k-1}"
// drawn uniformly. Every response is a pure function of (rng_seed ^
// stream_salt, question_id, call_index), so replays and reordered concurrent
// runs see identical text.
class StochasticBackend : public Backend {
 public:
  explicit StochasticBackend(StochasticParams params);

  ChatResponse chat(const RoleConfig& cfg, const ChatRequest& req,
                    const CallContext& ctx) override;
  bool deterministic() const override { return true; }

  const StochasticParams& params() const { return params_; }

 private:
  StochasticParams params_;
};

// One utilizer draw: returns response text containing exactly one boxed
// answer. prev_correct absent means this is the initial response for the
// question. Raises MissingGoldError when the question has no gold answer.
std::string stochastic_utilizer_step(const StochasticBackend& backend,
                                     const Question& question,
                                     std::optional<bool> prev_correct,
                                     int step_index,
                                     std::uint64_t stream_salt = 0);

// Remote OpenAI-compatible endpoint. POSTs {endpoint_url}/chat/completions
// with the chat_request_body bytes; Authorization is "Bearer " + the value of
// the STICKER_TTS_API_KEY environment variable when set. The key is never
// accepted via flags or config files.
class HttpBackend : public Backend {
 public:
  HttpBackend() = default;

  ChatResponse chat(const RoleConfig& cfg, const ChatRequest& req,
                    const CallContext& ctx) override;
  bool deterministic() const override { return false; }
};

}  // namespace sticker_tts
