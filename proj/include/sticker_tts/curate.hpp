// SFT data curation over persisted trajectories: difficulty estimation,
// transition classification, the solution-validity and correction-significance
// filters, 1:2 ratio enforcement, per-(problem, component) dedup, and
// prompt/completion record emission for the three roles.
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sticker_tts/core.hpp"
#include "sticker_tts/eval.hpp"

namespace sticker_tts {

struct DifficultyScore {
  std::string problem_id;
  int samples = 0;
  int correct = 0;
  double score = 0.0;  // correct / samples; lower = harder

  bool operator==(const DifficultyScore&) const = default;
};

enum class TransitionClass { ErrorToCorrect, CorrectToCorrect, Failed };

std::string to_string(TransitionClass c);
TransitionClass transition_class_from_string(const std::string& s);

struct SftRecord {
  Role component = Role::Utilizer;
  std::string prompt;
  std::string completion;
  std::string problem_id;
  std::string trajectory_id;  // the source trajectory's question id
  int iteration = 0;          // the k the pair was lifted from

  bool operator==(const SftRecord&) const = default;
};

// Correctness rate over n single-shot samples (default 10).
DifficultyScore estimate_difficulty(const Question& problem,
                                    const SingleShotSampler& sampler,
                                    int n = 10);

// Ids whose score satisfies lo <= score <= hi, both ends inclusive, in input
// order. Requires 0 <= lo <= hi <= 1. Stage-1 bounds are (0.2, 0.5), stage-2
// (0.0, 0.4).
std::vector<std::string> select_by_difficulty(
    const std::vector<DifficultyScore>& scores, double lo, double hi);

// Classifies by A^(0) versus the trajectory's vote winner (final_answer).
// error_to_correct needs a present incorrect initial and a correct final;
// an absent initial is not "incorrect", so it classifies failed even when the
// final is right. With by_final_iteration the last recorded per-iteration
// answer stands in for the vote winner (sensitivity analysis).
TransitionClass classify_transition(const Trajectory& traj,
                                    const std::string& gold,
                                    bool by_final_iteration = false);

// First iteration k >= 1 whose answer is present and equals gold; the
// iteration SFT pairs are lifted from.
std::optional<int> first_correct_iteration(const Trajectory& traj,
                                           const std::string& gold);

// Correction-significance criterion: with k* the first correct position in
// [A^(0), A^(1), ...], both answers immediately preceding k* must exist and
// be incorrect; k* < 2 fails. Absent answers never count as incorrect.
bool significance_filter(const Trajectory& traj, const std::string& gold);

// Largest (k, 2k) downsample of (e2c, c2c): k = min(|e2c|, |c2c| / 2). The
// overfull side is sampled uniformly without replacement with its own
// selection-sampling pass over mt19937_64(seed), preserving input order, so
// identical seeds give identical selections on every platform.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                        std::uint64_t seed);

template <typename T>
std::pair<std::vector<T>, std::vector<T>> enforce_ratio(
    const std::vector<T>& e2c, const std::vector<T>& c2c, std::uint64_t seed) {
  const std::size_t k = std::min(e2c.size(), c2c.size() / 2);
  std::pair<std::vector<T>, std::vector<T>> kept;
  for (std::size_t i : sample_indices(e2c.size(), k, seed)) {
    kept.first.push_back(e2c[i]);
  }
  for (std::size_t i : sample_indices(c2c.size(), 2 * k, seed + 1)) {
    kept.second.push_back(c2c[i]);
  }
  return kept;
}

// Corpus-wide dedup state: at most one record per (problem, component).
struct SftDedup {
  std::set<std::pair<std::string, Role>> seen;
  int dropped = 0;
};

// Lifts up to one record per requested component from iteration k_star.
// Prompts are re-rendered from the trajectory (byte-identical to inference
// prompting); completions are the verbatim stored outputs. Duplicate
// (problem, component) pairs are dropped and counted on the dedup state.
std::vector<SftRecord> emit_sft_records(const Question& q,
                                        const Trajectory& traj, int k_star,
                                        const std::set<Role>& components,
                                        SftDedup& dedup);

struct CurationManifest {
  int trajectories_in = 0;
  int skipped_parallel = 0;
  int error_to_correct = 0;  // class counts before filtering
  int correct_to_correct = 0;
  int failed = 0;
  int significance_rejected = 0;
  int no_emittable_iteration = 0;
  int kept_error_to_correct = 0;  // after ratio enforcement
  int kept_correct_to_correct = 0;
  int duplicates_dropped = 0;
  int records_extractor = 0;
  int records_modifier = 0;
  int records_utilizer = 0;

  bool operator==(const CurationManifest&) const = default;
};

struct CurationOptions {
  std::uint64_t seed = 0;
  bool classify_by_final_iteration = false;
  std::set<Role> components = {Role::Extractor, Role::Modifier,
                               Role::Utilizer};
};

struct CurationResult {
  std::vector<SftRecord> records;
  CurationManifest manifest;
};

// The full pipeline over sequential trajectories: classify, filter, enforce
// the 1:2 ratio, emit deduped records. Parallel-merged trajectories carry no
// per-iteration lineage across chains and are skipped (counted). Unknown
// question ids raise Error.
CurationResult curate_corpus(const BenchmarkSet& benchmark,
                             const std::vector<Trajectory>& trajectories,
                             const CurationOptions& options = {});

std::string sft_record_to_jsonl(const SftRecord& record);
SftRecord sft_record_from_jsonl(const std::string& line);

ordered_json manifest_to_json(const CurationManifest& manifest);

// Writes sft_extractor.jsonl / sft_modifier.jsonl / sft_utilizer.jsonl plus
// manifest.json under dir (created if missing).
void write_curation(const CurationResult& result, const std::string& dir);

}  // namespace sticker_tts
