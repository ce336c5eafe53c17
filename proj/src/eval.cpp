#include "sticker_tts/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>

#include "sticker_tts/answers.hpp"
#include "sticker_tts/prompts.hpp"

namespace sticker_tts {

namespace {

std::string field_as_string(const json& j, const char* key, int line_no) {
  if (!j.contains(key)) {
    throw ParseError("benchmark line " + std::to_string(line_no) +
                     ": missing field \"" + key + "\"");
  }
  const json& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw ParseError("benchmark line " + std::to_string(line_no) + ": field \"" +
                   key + "\" must be a string");
}

std::string fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
  return buf;
}

// The per-iteration answer actually recorded last, which for parallel records
// is the last chain's final answer. Distinct from Trajectory::final_answer,
// which holds the vote winner.
const Answer& last_recorded_answer(const Trajectory& traj) {
  if (!traj.iterations.empty()) return traj.iterations.back().answer;
  return traj.initial_answer;
}

}  // namespace

BenchmarkSet load_benchmark(const std::string& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open benchmark file: " + path);
  if (name.empty()) name = std::filesystem::path(path).stem().string();

  BenchmarkSet set;
  set.name = name;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ParseError("benchmark line " + std::to_string(line_no) +
                       ": not a JSON object");
    }
    Question q;
    q.id = field_as_string(j, "id", line_no);
    q.text = field_as_string(j, "problem", line_no);
    q.gold = canonicalize(field_as_string(j, "answer", line_no));
    q.benchmark = name;
    if (q.text.empty()) {
      throw Error("benchmark line " + std::to_string(line_no) +
                  ": empty problem");
    }
    if (!seen.insert(q.id).second) {
      throw Error("benchmark: duplicate question id \"" + q.id + "\"");
    }
    set.questions.push_back(std::move(q));
  }
  return set;
}

SingleShotSampler stochastic_sampler(const StochasticBackend& backend,
                                     std::uint64_t salt) {
  const StochasticBackend* b = &backend;
  return [b, salt](const Question& q, int sample_index) {
    return answer_from_text(
        stochastic_utilizer_step(*b, q, std::nullopt, sample_index, salt));
  };
}

SingleShotSampler backend_sampler(Backend& backend, const RoleConfig& utilizer,
                                  std::uint64_t salt) {
  Backend* b = &backend;
  return [b, utilizer, salt](const Question& q, int sample_index) {
    CallContext ctx{q.id, Role::Utilizer, sample_index, salt, q.gold,
                    std::nullopt};
    ReasoningTrace trace = send(*b, utilizer, render_initial(q.text), ctx);
    return answer_from_text(trace.text);
  };
}

double pass_at_1_baseline(const Question& q, const SingleShotSampler& sampler,
                          int k) {
  if (k < 1) throw Error("pass_at_1_baseline: sample count must be >= 1");
  if (!q.gold) throw MissingGoldError("question " + q.id + " has no gold answer");
  int correct = 0;
  for (int i = 0; i < k; ++i) {
    Answer a = sampler(q, i);
    if (a.present() && equals_gold(*a.canonical, *q.gold)) ++correct;
  }
  return static_cast<double>(correct) / k;
}

std::vector<std::string> trajectory_ballots(const Trajectory& traj) {
  std::vector<std::string> ballots;
  auto push = [&ballots](const Answer& a) {
    if (a.present()) ballots.push_back(*a.canonical);
  };
  if (!traj.parallel()) {
    push(traj.initial_answer);
    for (const IterationRecord& it : traj.iterations) push(it.answer);
    return ballots;
  }
  std::size_t offset = 0;
  for (std::size_t c = 0; c < traj.chain_initials.size(); ++c) {
    const std::size_t len = c < traj.chain_lengths.size()
                                ? static_cast<std::size_t>(traj.chain_lengths[c])
                                : static_cast<std::size_t>(traj.chain_depth);
    const bool aborted = c < traj.chain_stop_reasons.size() &&
                         traj.chain_stop_reasons[c] == StopReason::Aborted;
    if (!aborted) {
      push(traj.chain_initials[c].answer);
      for (std::size_t i = offset;
           i < offset + len && i < traj.iterations.size(); ++i) {
        push(traj.iterations[i].answer);
      }
    }
    offset += len;
  }
  return ballots;
}

int pass_at_1_framework(const Trajectory& traj, const std::string& gold) {
  const Answer& final = last_recorded_answer(traj);
  if (!final.present()) return 0;
  return equals_gold(*final.canonical, gold) ? 1 : 0;
}

int cons_at_n(const std::vector<std::string>& ballots,
              const std::string& gold) {
  if (ballots.empty()) return 0;
  return equals_gold(majority_vote(ballots).winner, gold) ? 1 : 0;
}

int cons_at_n(const Trajectory& traj, const std::string& gold) {
  return cons_at_n(trajectory_ballots(traj), gold);
}

MetricReport evaluate_trajectories(const BenchmarkSet& benchmark,
                                   const std::vector<Trajectory>& trajectories,
                                   const std::string& method, int approx_n) {
  std::unordered_map<std::string, const Question*> by_id;
  for (const Question& q : benchmark.questions) by_id.emplace(q.id, &q);

  MetricReport report;
  report.benchmark = benchmark.name;
  report.method = method;
  report.questions_total = static_cast<int>(benchmark.questions.size());

  int pass1_sum = 0;
  int cons_sum = 0;
  int max_ballots = 0;
  for (const Trajectory& traj : trajectories) {
    auto it = by_id.find(traj.question_id);
    if (it == by_id.end()) {
      throw Error("trajectory for unknown question id \"" + traj.question_id +
                  "\"");
    }
    const std::string& gold = *it->second->gold;

    QuestionOutcome out;
    out.question_id = traj.question_id;
    out.stop_reason = traj.stop_reason;
    out.long_cot_units = traj.long_cot_units;

    std::vector<std::string> ballots = trajectory_ballots(traj);
    out.ballots = static_cast<int>(ballots.size());
    out.answered = !ballots.empty();
    if (!ballots.empty()) {
      out.vote_canonical = majority_vote(ballots).winner;
      out.last_canonical = ballots.back();
    }
    out.cons = cons_at_n(ballots, gold);
    out.pass1 = pass_at_1_framework(traj, gold);

    pass1_sum += out.pass1;
    cons_sum += out.cons;
    max_ballots = std::max(max_ballots, out.ballots);

    report.long_cot_units_total += traj.long_cot_units;
    report.approx_2n_units_total +=
        2 * static_cast<std::int64_t>(traj.iterations.size());
    if (traj.parallel()) {
      for (const ChainInitial& ci : traj.chain_initials) {
        report.prompt_tokens_total += ci.trace.prompt_tokens;
        report.completion_tokens_total += ci.trace.completion_tokens;
      }
    } else {
      report.prompt_tokens_total += traj.initial_trace.prompt_tokens;
      report.completion_tokens_total += traj.initial_trace.completion_tokens;
    }
    for (const IterationRecord& rec : traj.iterations) {
      report.prompt_tokens_total += rec.trace.prompt_tokens;
      report.completion_tokens_total += rec.trace.completion_tokens;
    }
    report.outcomes.push_back(std::move(out));
  }

  report.questions_evaluated = static_cast<int>(report.outcomes.size());
  report.n = approx_n >= 0 ? approx_n : max_ballots;
  if (report.questions_evaluated > 0) {
    report.pass_at_1 = 100.0 * pass1_sum / report.questions_evaluated;
    report.cons_at_n = 100.0 * cons_sum / report.questions_evaluated;
  }
  return report;
}

std::vector<Trajectory> load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file: " + path);
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;  // torn line from a crashed writer
    out.push_back(trajectory_from_json(j));
  }
  return out;
}

std::vector<ScalingRow> scaling_study(const BenchmarkSet& benchmark,
                                      const RunConfig& run_template,
                                      const RoleSet& roles, Backend& backend,
                                      const std::vector<int>& n_values) {
  if (!std::is_sorted(n_values.begin(), n_values.end())) {
    throw Error("scaling_study: n_values must be sorted ascending");
  }
  if (run_template.strategy == Strategy::Parallel) {
    throw Error("scaling_study: parallel strategy has no single-N sweep");
  }
  std::vector<ScalingRow> rows;
  for (int n : n_values) {
    if (n < 1) throw Error("scaling_study: every N must be >= 1");
    RunConfig run = run_template;
    run.n_iterations = n;
    ScalingRow row;
    row.n = n;
    int cons_sum = 0;
    for (const Question& q : benchmark.questions) {
      TrajectoryResult result = run_trajectory(q, run, roles, backend);
      cons_sum += cons_at_n(result.trajectory, *q.gold);
      row.long_cot_units += result.trajectory.long_cot_units;
    }
    if (!benchmark.questions.empty()) {
      row.cons_rate =
          static_cast<double>(cons_sum) / benchmark.questions.size();
    }
    rows.push_back(row);
  }
  return rows;
}

std::string report_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "benchmark,method,questions_total,questions_evaluated,pass_at_1,"
         "cons_at_n,n,long_cot_units,approx_2n_units,prompt_tokens,"
         "completion_tokens\n";
  out << report.benchmark << ',' << report.method << ','
      << report.questions_total << ',' << report.questions_evaluated << ','
      << fixed(report.pass_at_1, 2) << ',' << fixed(report.cons_at_n, 2) << ','
      << report.n << ',' << report.long_cot_units_total << ','
      << report.approx_2n_units_total << ',' << report.prompt_tokens_total
      << ',' << report.completion_tokens_total << '\n';
  return out.str();
}

std::string report_table(const MetricReport& report) {
  std::ostringstream out;
  auto row = [&out](const std::string& label, const std::string& value) {
    out << label;
    for (std::size_t i = label.size(); i < 20; ++i) out << ' ';
    out << value << '\n';
  };
  row("Benchmark", report.benchmark);
  row("Method", report.method);
  row("Questions", std::to_string(report.questions_evaluated) + "/" +
                       std::to_string(report.questions_total) + " evaluated");
  row("Pass@1", fixed(report.pass_at_1, 2) + "%");
  row("Cons@" + std::to_string(report.n), fixed(report.cons_at_n, 2) + "%");
  row("Long-CoT units", std::to_string(report.long_cot_units_total) + " (2N approx " +
                            std::to_string(report.approx_2n_units_total) + ")");
  row("Prompt tokens", std::to_string(report.prompt_tokens_total));
  row("Completion tokens", std::to_string(report.completion_tokens_total));
  return out.str();
}

std::string scaling_csv(const std::vector<ScalingRow>& rows) {
  std::ostringstream out;
  out << "n,cons_at_n,long_cot_units\n";
  for (const ScalingRow& row : rows) {
    out << row.n << ',' << fixed(row.cons_rate, 4) << ','
        << row.long_cot_units << '\n';
  }
  return out.str();
}

std::string scaling_table(const std::vector<ScalingRow>& rows) {
  std::ostringstream out;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%6s  %8s  %16s\n", "N", "Cons@N",
                "Long-CoT units");
  out << buf;
  for (const ScalingRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%6d  %8.4f  %16lld\n", row.n,
                  row.cons_rate, static_cast<long long>(row.long_cot_units));
    out << buf;
  }
  return out.str();
}

std::string outcome_to_jsonl(const QuestionOutcome& outcome) {
  ordered_json j;
  j["question_id"] = outcome.question_id;
  j["cons"] = outcome.cons;
  j["pass1"] = outcome.pass1;
  j["answered"] = outcome.answered;
  j["vote"] = outcome.vote_canonical ? json(*outcome.vote_canonical) : json();
  j["last_answer"] =
      outcome.last_canonical ? json(*outcome.last_canonical) : json();
  j["ballots"] = outcome.ballots;
  j["long_cot_units"] = outcome.long_cot_units;
  j["stop_reason"] = to_string(outcome.stop_reason);
  return j.dump();
}

QuestionOutcome outcome_from_jsonl(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError("outcome line is not a JSON object");
  }
  QuestionOutcome out;
  out.question_id = j.at("question_id").get<std::string>();
  out.cons = j.at("cons").get<int>();
  out.pass1 = j.at("pass1").get<int>();
  out.answered = j.at("answered").get<bool>();
  if (!j.at("vote").is_null()) {
    out.vote_canonical = j.at("vote").get<std::string>();
  }
  if (!j.at("last_answer").is_null()) {
    out.last_canonical = j.at("last_answer").get<std::string>();
  }
  out.ballots = j.at("ballots").get<int>();
  out.long_cot_units = j.at("long_cot_units").get<std::int64_t>();
  out.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
  return out;
}

void write_outcomes(const MetricReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open outcomes file: " + path);
  for (const QuestionOutcome& outcome : report.outcomes) {
    out << outcome_to_jsonl(outcome) << '\n';
  }
  if (!out.flush()) throw Error("write failed: " + path);
}

}  // namespace sticker_tts
