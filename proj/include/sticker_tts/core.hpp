// Shared domain types, identifiers, and run configuration for the Sticker-TTS
// engine. Everything here is an immutable value after construction and safe to
// move between threads.
#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace sticker_tts {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class EmptyBallotsError : public Error {
 public:
  using Error::Error;
};

class MissingGoldError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

enum class Role { Extractor, Modifier, Utilizer };
enum class FinishReason { Stop, Length, Error };
enum class StopReason { MaxIterations, EarlyExit, BudgetExhausted, Aborted };
enum class Strategy { Full, EarlyExit, Parallel };
enum class AnswerAbsentPolicy { RetryOnceThenSkip, Skip };

std::string to_string(Role r);
std::string to_string(FinishReason f);
std::string to_string(StopReason s);
std::string to_string(Strategy s);
std::string to_string(AnswerAbsentPolicy p);

Role role_from_string(const std::string& s);
FinishReason finish_reason_from_string(const std::string& s);
StopReason stop_reason_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);
AnswerAbsentPolicy answer_absent_policy_from_string(const std::string& s);

// One benchmark problem. `gold`, when present, is already canonical (a fixed
// point of answers::canonicalize); loaders are responsible for canonicalizing
// on ingest.
struct Question {
  std::string id;
  std::string text;
  std::optional<std::string> gold;
  std::string benchmark;

  bool operator==(const Question&) const = default;
};

// The distilled key-conditions summary produced by the extractor (s^(k)) or
// modifier (s^(k)'). `raw` is always the verbatim model output; the structured
// fields are populated only when the Conditions/Question parse succeeded,
// otherwise `parse_failed` is set and raw alone feeds downstream prompts.
// `seq` is the per-trajectory production-order stamp.
struct Sticker {
  std::string raw;
  std::vector<std::string> conditions;
  std::string question_summary;
  std::optional<std::string> requirements;
  bool parse_failed = false;
  std::uint64_t seq = 0;

  bool operator==(const Sticker&) const = default;
};

// One model completion with backend-reported usage. Token counts come from the
// backend only; there is no local tokenizer.
struct ReasoningTrace {
  Role role = Role::Utilizer;
  std::string text;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  FinishReason finish_reason = FinishReason::Stop;
  std::uint64_t seq = 0;

  bool operator==(const ReasoningTrace&) const = default;
};

// Final boxed answer of a trace. `canonical` is present iff `raw` is, and is a
// fixed point of canonicalization.
struct Answer {
  std::optional<std::string> raw;
  std::optional<std::string> canonical;

  bool present() const { return raw.has_value(); }
  bool operator==(const Answer&) const = default;
};

// One body of the recursive reasoning loop: extract -> modify -> utilize.
struct IterationRecord {
  int k = 1;
  Sticker sticker;
  Sticker modified_sticker;
  ReasoningTrace trace;
  Answer answer;

  bool operator==(const IterationRecord&) const = default;
};

// Per-chain initial response, kept on merged parallel trajectories so the
// pooled ballot list stays reconstructible from disk.
struct ChainInitial {
  ReasoningTrace trace;
  Answer answer;

  bool operator==(const ChainInitial&) const = default;
};

// A question's full iterative record. For parallel runs `chains` > 1 and the
// iterations are the chain-major concatenation of all chains, renumbered
// 1..P*D; `chain_initials` then holds every chain's initial response in chain
// order (chain 0's duplicates initial_trace/initial_answer), and
// chain_lengths/chain_stop_reasons record per-chain iteration counts and
// outcomes so the pooled ballot list stays reconstructible even when a chain
// aborted early.
struct Trajectory {
  std::string question_id;
  ReasoningTrace initial_trace;
  Answer initial_answer;
  std::vector<IterationRecord> iterations;
  Answer final_answer;
  StopReason stop_reason = StopReason::MaxIterations;
  std::int64_t long_cot_units = 0;
  std::chrono::milliseconds wall_time{0};

  int chains = 0;  // 0 = sequential trajectory
  int chain_depth = 0;
  std::vector<ChainInitial> chain_initials;
  std::vector<int> chain_lengths;
  std::vector<StopReason> chain_stop_reasons;

  bool parallel() const { return chains > 1; }
  bool operator==(const Trajectory&) const = default;
};

struct SamplingParams {
  double temperature = 0.6;
  double top_p = 0.95;
  int max_tokens = 32000;

  bool operator==(const SamplingParams&) const = default;
};

// Binding of one role (E/M/U) to a backend endpoint.
struct RoleConfig {
  Role role = Role::Utilizer;
  std::string endpoint_url;
  std::string model_name;
  SamplingParams sampling;
  std::chrono::milliseconds request_timeout{120000};
  int max_retries = 3;

  bool operator==(const RoleConfig&) const = default;
};

// Shipped defaults: nucleus sampling top_p 0.95, temperature 0.6; extractor
// capped at 5000 completion tokens, modifier/utilizer at 32000.
RoleConfig default_role_config(Role role);

struct ParallelSpec {
  int chains = 1;
  int depth = 1;

  bool operator==(const ParallelSpec&) const = default;
};

struct RunConfig {
  int n_iterations = 10;
  Strategy strategy = Strategy::Full;
  ParallelSpec parallel;  // meaningful only when strategy == Parallel
  int question_concurrency = 1;
  std::uint64_t rng_seed = 0;
  AnswerAbsentPolicy answer_absent_policy = AnswerAbsentPolicy::RetryOnceThenSkip;

  bool operator==(const RunConfig&) const = default;
};

enum class RunConfigErrorKind { InvalidParallelFactorization, NonPositiveField };

struct RunConfigError {
  RunConfigErrorKind kind;
  std::string message;
};

// ok (nullopt) iff all RunConfig invariants hold: n_iterations >= 0,
// question_concurrency >= 1, and for parallel strategy P >= 1, D >= 1 and
// P*D == N.
std::optional<RunConfigError> validate_run_config(const RunConfig& cfg);

// --- Trace persistence (JSONL, schema 1) ---------------------------------
//
// One Trajectory per line; snake_case field names match the type definitions
// above. Serialization uses ordered_json so the byte layout is stable across
// runs and platforms.

inline constexpr int kTraceSchemaVersion = 1;

ordered_json to_json(const Sticker& s);
ordered_json to_json(const ReasoningTrace& t);
ordered_json to_json(const Answer& a);
ordered_json to_json(const IterationRecord& r);
ordered_json to_json(const Trajectory& t);

Sticker sticker_from_json(const json& j);
ReasoningTrace trace_from_json(const json& j);
Answer answer_from_json(const json& j);
IterationRecord iteration_from_json(const json& j);
Trajectory trajectory_from_json(const json& j);

// Single-line form with the schema version stamp, as persisted by the sink.
std::string to_jsonl(const Trajectory& t);
Trajectory trajectory_from_jsonl(const std::string& line);

}  // namespace sticker_tts
