// Pass@1 and Cons@N over benchmark files, N-scaling studies, and comparison
// reports (CSV, aligned text, per-question JSONL outcomes).
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sticker_tts/core.hpp"
#include "sticker_tts/engine.hpp"

namespace sticker_tts {

struct BenchmarkSet {
  std::string name;
  std::vector<Question> questions;  // every gold present and canonical
};

// JSONL lines {"id","problem","answer"}; gold is canonicalized on ingest.
// Raises ParseError on malformed lines, Error on duplicate ids, empty
// problems, or missing answers. Empty name defaults to the file stem.
BenchmarkSet load_benchmark(const std::string& path, std::string name = "");

// One independent single-shot attempt at a question.
using SingleShotSampler = std::function<Answer(const Question&, int sample_index)>;

// Draws independent initial-style answers from the stochastic backend, one
// stream per sample index.
SingleShotSampler stochastic_sampler(const StochasticBackend& backend,
                                     std::uint64_t salt = 0);

// Same sampling through the uniform backend interface: renders the initial
// prompt and issues one utilizer call per sample index (with retries per the
// role config). On the stochastic backend this reproduces stochastic_sampler.
SingleShotSampler backend_sampler(Backend& backend, const RoleConfig& utilizer,
                                  std::uint64_t salt = 0);

// Mean of equals_gold over K independent single-shot samples.
double pass_at_1_baseline(const Question& q, const SingleShotSampler& sampler,
                          int k = 64);

// Ballot list for voting: every present canonical answer of the trajectory in
// ballot order. For parallel records the chains are pooled chain-major and an
// aborted chain contributes nothing.
std::vector<std::string> trajectory_ballots(const Trajectory& traj);

// Framework Pass@1: correctness of the final recorded answer. An absent
// final answer scores 0; earlier answers never substitute for scoring.
int pass_at_1_framework(const Trajectory& traj, const std::string& gold);

// Cons@N: correctness of the majority-vote winner. No present ballots scores
// 0.
int cons_at_n(const std::vector<std::string>& ballots, const std::string& gold);
int cons_at_n(const Trajectory& traj, const std::string& gold);

struct QuestionOutcome {
  std::string question_id;
  int cons = 0;   // 0/1
  int pass1 = 0;  // 0/1
  bool answered = false;
  std::optional<std::string> vote_canonical;
  std::optional<std::string> last_canonical;  // last present answer (logging)
  int ballots = 0;
  std::int64_t long_cot_units = 0;
  StopReason stop_reason = StopReason::MaxIterations;

  bool operator==(const QuestionOutcome&) const = default;
};

struct MetricReport {
  std::string benchmark;
  std::string method;
  int questions_total = 0;
  int questions_evaluated = 0;
  double pass_at_1 = 0.0;   // percentage in [0,100]
  double cons_at_n = 0.0;   // percentage in [0,100]
  int n = 0;                // the N in Cons@N (max ballot count seen)
  std::int64_t long_cot_units_total = 0;
  std::int64_t approx_2n_units_total = 0;
  // Summed over persisted traces (utilizer only); extractor/modifier usage is
  // not stored in trajectories, so live-run totals are higher.
  std::int64_t prompt_tokens_total = 0;
  std::int64_t completion_tokens_total = 0;
  std::vector<QuestionOutcome> outcomes;
};

// Scores persisted trajectories against the benchmark gold answers.
// Trajectories for unknown question ids raise Error; benchmark questions
// without a trajectory lower questions_evaluated but produce no outcome.
MetricReport evaluate_trajectories(const BenchmarkSet& benchmark,
                                   const std::vector<Trajectory>& trajectories,
                                   const std::string& method,
                                   int approx_n = -1);

std::vector<Trajectory> load_trajectories(const std::string& path);

struct ScalingRow {
  int n = 0;
  double cons_rate = 0.0;  // fraction in [0,1]
  std::int64_t long_cot_units = 0;
};

// One engine batch per N over the benchmark (shared seed base), emitting one
// row per N. n_values must be sorted ascending.
std::vector<ScalingRow> scaling_study(const BenchmarkSet& benchmark,
                                      const RunConfig& run_template,
                                      const RoleSet& roles, Backend& backend,
                                      const std::vector<int>& n_values);

std::string report_csv(const MetricReport& report);
std::string report_table(const MetricReport& report);
std::string scaling_csv(const std::vector<ScalingRow>& rows);
std::string scaling_table(const std::vector<ScalingRow>& rows);

std::string outcome_to_jsonl(const QuestionOutcome& outcome);
QuestionOutcome outcome_from_jsonl(const std::string& line);
void write_outcomes(const MetricReport& report, const std::string& path);

}  // namespace sticker_tts
