#include "sticker_tts/curate.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <unordered_map>

#include "sticker_tts/answers.hpp"
#include "sticker_tts/prompts.hpp"

namespace sticker_tts {

namespace {

bool correct(const Answer& a, const std::string& gold) {
  return a.present() && equals_gold(*a.canonical, gold);
}

// Position 0 is A^(0); position k >= 1 is iteration k's answer.
const Answer& answer_at(const Trajectory& traj, std::size_t pos) {
  if (pos == 0) return traj.initial_answer;
  return traj.iterations[pos - 1].answer;
}

const Answer& last_recorded(const Trajectory& traj) {
  if (!traj.iterations.empty()) return traj.iterations.back().answer;
  return traj.initial_answer;
}

}  // namespace

std::string to_string(TransitionClass c) {
  switch (c) {
    case TransitionClass::ErrorToCorrect:
      return "error_to_correct";
    case TransitionClass::CorrectToCorrect:
      return "correct_to_correct";
    case TransitionClass::Failed:
      return "failed";
  }
  throw Error("unreachable transition class");
}

TransitionClass transition_class_from_string(const std::string& s) {
  if (s == "error_to_correct") return TransitionClass::ErrorToCorrect;
  if (s == "correct_to_correct") return TransitionClass::CorrectToCorrect;
  if (s == "failed") return TransitionClass::Failed;
  throw ParseError("unknown transition class: " + s);
}

DifficultyScore estimate_difficulty(const Question& problem,
                                    const SingleShotSampler& sampler, int n) {
  if (n < 1) throw Error("estimate_difficulty: sample count must be >= 1");
  if (!problem.gold) {
    throw MissingGoldError("question " + problem.id + " has no gold answer");
  }
  DifficultyScore score;
  score.problem_id = problem.id;
  score.samples = n;
  for (int i = 0; i < n; ++i) {
    if (correct(sampler(problem, i), *problem.gold)) ++score.correct;
  }
  score.score = static_cast<double>(score.correct) / n;
  return score;
}

std::vector<std::string> select_by_difficulty(
    const std::vector<DifficultyScore>& scores, double lo, double hi) {
  if (lo < 0.0 || hi > 1.0 || lo > hi) {
    throw Error("select_by_difficulty: bounds must satisfy 0 <= lo <= hi <= 1");
  }
  std::vector<std::string> ids;
  for (const DifficultyScore& s : scores) {
    if (s.score >= lo && s.score <= hi) ids.push_back(s.problem_id);
  }
  return ids;
}

TransitionClass classify_transition(const Trajectory& traj,
                                    const std::string& gold,
                                    bool by_final_iteration) {
  const Answer& final_answer =
      by_final_iteration ? last_recorded(traj) : traj.final_answer;
  if (!correct(final_answer, gold)) return TransitionClass::Failed;
  if (correct(traj.initial_answer, gold)) {
    return TransitionClass::CorrectToCorrect;
  }
  if (traj.initial_answer.present()) return TransitionClass::ErrorToCorrect;
  return TransitionClass::Failed;  // absent initial is not an "error"
}

std::optional<int> first_correct_iteration(const Trajectory& traj,
                                           const std::string& gold) {
  for (std::size_t i = 0; i < traj.iterations.size(); ++i) {
    if (correct(traj.iterations[i].answer, gold)) {
      return static_cast<int>(i) + 1;
    }
  }
  return std::nullopt;
}

bool significance_filter(const Trajectory& traj, const std::string& gold) {
  const std::size_t positions = traj.iterations.size() + 1;
  std::size_t k_star = positions;
  for (std::size_t pos = 0; pos < positions; ++pos) {
    if (correct(answer_at(traj, pos), gold)) {
      k_star = pos;
      break;
    }
  }
  if (k_star == positions || k_star < 2) return false;
  for (std::size_t pos : {k_star - 1, k_star - 2}) {
    const Answer& a = answer_at(traj, pos);
    if (!a.present() || equals_gold(*a.canonical, gold)) return false;
  }
  return true;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                        std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (k >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  out.reserve(k);
  std::mt19937_64 rng(seed);
  std::size_t need = k;
  for (std::size_t i = 0; i < n && need > 0; ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u * static_cast<double>(n - i) < static_cast<double>(need)) {
      out.push_back(i);
      --need;
    }
  }
  return out;
}

std::vector<SftRecord> emit_sft_records(const Question& q,
                                        const Trajectory& traj, int k_star,
                                        const std::set<Role>& components,
                                        SftDedup& dedup) {
  if (k_star < 1 || static_cast<std::size_t>(k_star) > traj.iterations.size()) {
    throw Error("emit_sft_records: iteration " + std::to_string(k_star) +
                " is not recorded");
  }
  const IterationRecord& rec = traj.iterations[static_cast<std::size_t>(k_star) - 1];
  const std::string& prev_text = k_star == 1
                                     ? traj.initial_trace.text
                                     : traj.iterations[k_star - 2].trace.text;
  const Answer& prev_answer =
      k_star == 1 ? traj.initial_answer : traj.iterations[k_star - 2].answer;

  std::vector<SftRecord> records;
  for (Role role : components) {
    if (!dedup.seen.insert({q.id, role}).second) {
      ++dedup.dropped;
      continue;
    }
    SftRecord record;
    record.component = role;
    record.problem_id = q.id;
    record.trajectory_id = traj.question_id;
    record.iteration = k_star;
    switch (role) {
      case Role::Extractor:
        record.prompt = render_extractor(prev_text);
        record.completion = rec.sticker.raw;
        break;
      case Role::Modifier:
        record.prompt = render_modifier(q.text, rec.sticker.raw);
        record.completion = rec.modified_sticker.raw;
        break;
      case Role::Utilizer:
        record.prompt = render_utilizer(q.text, rec.modified_sticker.raw,
                                        prev_answer);
        record.completion = rec.trace.text;
        break;
    }
    records.push_back(std::move(record));
  }
  return records;
}

CurationResult curate_corpus(const BenchmarkSet& benchmark,
                             const std::vector<Trajectory>& trajectories,
                             const CurationOptions& options) {
  std::unordered_map<std::string, const Question*> by_id;
  for (const Question& q : benchmark.questions) by_id.emplace(q.id, &q);

  struct Candidate {
    const Trajectory* traj;
    const Question* q;
    int k_star;
  };
  std::vector<Candidate> e2c;
  std::vector<Candidate> c2c;

  CurationResult result;
  CurationManifest& m = result.manifest;
  for (const Trajectory& traj : trajectories) {
    ++m.trajectories_in;
    auto it = by_id.find(traj.question_id);
    if (it == by_id.end()) {
      throw Error("trajectory for unknown question id \"" + traj.question_id +
                  "\"");
    }
    const Question& q = *it->second;
    if (!q.gold) {
      throw MissingGoldError("question " + q.id + " has no gold answer");
    }
    if (traj.parallel()) {
      ++m.skipped_parallel;
      continue;
    }
    const std::string& gold = *q.gold;
    TransitionClass cls =
        classify_transition(traj, gold, options.classify_by_final_iteration);
    switch (cls) {
      case TransitionClass::Failed:
        ++m.failed;
        continue;
      case TransitionClass::ErrorToCorrect:
        ++m.error_to_correct;
        if (!significance_filter(traj, gold)) {
          ++m.significance_rejected;
          continue;
        }
        break;
      case TransitionClass::CorrectToCorrect:
        ++m.correct_to_correct;
        break;
    }
    std::optional<int> k_star = first_correct_iteration(traj, gold);
    if (!k_star) {
      ++m.no_emittable_iteration;
      continue;
    }
    Candidate cand{&traj, &q, *k_star};
    (cls == TransitionClass::ErrorToCorrect ? e2c : c2c).push_back(cand);
  }

  auto [kept_e2c, kept_c2c] = enforce_ratio(e2c, c2c, options.seed);
  m.kept_error_to_correct = static_cast<int>(kept_e2c.size());
  m.kept_correct_to_correct = static_cast<int>(kept_c2c.size());

  SftDedup dedup;
  auto emit_all = [&](const std::vector<Candidate>& kept) {
    for (const Candidate& cand : kept) {
      std::vector<SftRecord> records = emit_sft_records(
          *cand.q, *cand.traj, cand.k_star, options.components, dedup);
      for (SftRecord& record : records) {
        switch (record.component) {
          case Role::Extractor:
            ++m.records_extractor;
            break;
          case Role::Modifier:
            ++m.records_modifier;
            break;
          case Role::Utilizer:
            ++m.records_utilizer;
            break;
        }
        result.records.push_back(std::move(record));
      }
    }
  };
  emit_all(kept_e2c);
  emit_all(kept_c2c);
  m.duplicates_dropped = dedup.dropped;
  return result;
}

std::string sft_record_to_jsonl(const SftRecord& record) {
  ordered_json j;
  j["component"] = to_string(record.component);
  j["prompt"] = record.prompt;
  j["completion"] = record.completion;
  j["problem_id"] = record.problem_id;
  j["trajectory_id"] = record.trajectory_id;
  j["iteration"] = record.iteration;
  return j.dump();
}

SftRecord sft_record_from_jsonl(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError("sft record line is not a JSON object");
  }
  SftRecord record;
  record.component = role_from_string(j.at("component").get<std::string>());
  record.prompt = j.at("prompt").get<std::string>();
  record.completion = j.at("completion").get<std::string>();
  record.problem_id = j.at("problem_id").get<std::string>();
  record.trajectory_id = j.at("trajectory_id").get<std::string>();
  record.iteration = j.at("iteration").get<int>();
  return record;
}

ordered_json manifest_to_json(const CurationManifest& manifest) {
  ordered_json j;
  j["trajectories_in"] = manifest.trajectories_in;
  j["skipped_parallel"] = manifest.skipped_parallel;
  j["error_to_correct"] = manifest.error_to_correct;
  j["correct_to_correct"] = manifest.correct_to_correct;
  j["failed"] = manifest.failed;
  j["significance_rejected"] = manifest.significance_rejected;
  j["no_emittable_iteration"] = manifest.no_emittable_iteration;
  j["kept_error_to_correct"] = manifest.kept_error_to_correct;
  j["kept_correct_to_correct"] = manifest.kept_correct_to_correct;
  j["duplicates_dropped"] = manifest.duplicates_dropped;
  j["records_extractor"] = manifest.records_extractor;
  j["records_modifier"] = manifest.records_modifier;
  j["records_utilizer"] = manifest.records_utilizer;
  return j;
}

void write_curation(const CurationResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&dir](const std::string& name) {
    std::ofstream out(std::filesystem::path(dir) / name,
                      std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot open output file: " + dir + "/" + name);
    return out;
  };
  std::ofstream files[] = {open("sft_extractor.jsonl"),
                           open("sft_modifier.jsonl"),
                           open("sft_utilizer.jsonl")};
  for (const SftRecord& record : result.records) {
    files[static_cast<int>(record.component)] << sft_record_to_jsonl(record)
                                              << '\n';
  }
  for (std::ofstream& f : files) {
    if (!f.flush()) throw Error("write failed under " + dir);
  }
  std::ofstream manifest = open("manifest.json");
  manifest << manifest_to_json(result.manifest).dump(2) << '\n';
  if (!manifest.flush()) throw Error("write failed under " + dir);
}

}  // namespace sticker_tts
