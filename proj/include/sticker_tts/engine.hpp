// Executes the refinement loop per question: initial response, then N rounds
// of extract -> modify -> utilize, with early-exit and parallel-chain
// strategies, long-CoT cost accounting, and incremental JSONL persistence.
#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sticker_tts/answers.hpp"
#include "sticker_tts/core.hpp"
#include "sticker_tts/llm_client.hpp"

namespace sticker_tts {

class SinkWriteFailed : public Error {
 public:
  using Error::Error;
};

struct RoleSet {
  RoleConfig extractor = default_role_config(Role::Extractor);
  RoleConfig modifier = default_role_config(Role::Modifier);
  RoleConfig utilizer = default_role_config(Role::Utilizer);
};

// Loop-visible state; |trace_list| == |answer_list| == k+1 at every loop
// boundary (initial entry plus one per completed iteration).
struct EngineState {
  Question question;
  std::vector<ReasoningTrace> trace_list;
  std::vector<Answer> answer_list;
  int k = 0;
  std::optional<StopReason> stop_reason;
};

struct TrajectoryResult {
  Trajectory trajectory;
  std::vector<std::string> ballots;  // canonical answers in ballot order
  std::optional<VoteResult> vote;
  int extractor_calls = 0;
  int modifier_calls = 0;
  int utilizer_calls = 0;
  std::int64_t total_prompt_tokens = 0;
  std::int64_t total_completion_tokens = 0;
};

// Runs one question under strategy full or early_exit. A permanent backend
// failure does not throw: the trajectory comes back with stop_reason=aborted
// and whatever records completed. The stochastic stream salt is
// run.rng_seed.
TrajectoryResult run_trajectory(const Question& q, const RunConfig& run,
                                const RoleSet& roles, Backend& backend,
                                const BackoffPolicy& backoff = {});

// Runs P independent chains of depth D (each with its own initial response,
// stream salt run.rng_seed ^ chain_index) and pools every present answer
// chain-major into one ballot list. P=1 delegates to run_trajectory, so the
// ballot list and final answer are identical to a sequential run with the
// same seed. An aborted chain keeps its partial records but contributes no
// ballots.
TrajectoryResult run_parallel(const Question& q, const RunConfig& run,
                              const RoleSet& roles, Backend& backend,
                              const BackoffPolicy& backoff = {});

// Append-only JSONL trajectory store; every append is flushed and fsynced
// before returning, so completed work survives a crash.
class TraceSink {
 public:
  explicit TraceSink(const std::string& path);
  ~TraceSink();

  TraceSink(const TraceSink&) = delete;
  TraceSink& operator=(const TraceSink&) = delete;

  void append(const Trajectory& t);
  const std::string& path() const { return path_; }

  // Question ids already persisted in the file; a torn final line (crash
  // mid-write) is skipped, not fatal.
  static std::set<std::string> existing_ids(const std::string& path);

 private:
  std::string path_;
  int fd_ = -1;
  std::mutex mu_;
};

struct BatchOptions {
  bool resume = false;
  // Testing hook: start at most this many trajectories, then stop (simulates
  // a kill for resume tests). Negative means no limit. Resume skips do not
  // consume the budget.
  int stop_after = -1;
  BackoffPolicy backoff{};
};

struct QuestionResult {
  std::string question_id;
  std::optional<std::string> final_canonical;
  StopReason stop_reason = StopReason::MaxIterations;
  std::int64_t long_cot_units = 0;
};

struct BatchSummary {
  std::vector<QuestionResult> results;  // input order, ran trajectories only
  std::int64_t total_long_cot_units = 0;
  // The common approximation 2N per question, reported alongside the exact
  // count (which is 2N+1 for a full sequential run).
  std::int64_t approx_2n_units = 0;
  std::int64_t total_prompt_tokens = 0;
  std::int64_t total_completion_tokens = 0;
  int failures = 0;  // aborted trajectories
  int skipped = 0;   // resume skips
};

// Runs trajectories with at most run.question_concurrency in flight, writing
// each completed trajectory to the sink in input order (so the file bytes do
// not depend on concurrency). Raises SinkWriteFailed if persistence fails and
// Error if the run config is invalid.
BatchSummary run_batch(const std::vector<Question>& questions,
                       const RunConfig& run, const RoleSet& roles,
                       Backend& backend, TraceSink& sink,
                       const BatchOptions& options = {});

}  // namespace sticker_tts
