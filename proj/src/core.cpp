#include "sticker_tts/core.hpp"

namespace sticker_tts {

std::string to_string(Role r) {
  switch (r) {
    case Role::Extractor: return "extractor";
    case Role::Modifier: return "modifier";
    case Role::Utilizer: return "utilizer";
  }
  throw Error("unknown role");
}

std::string to_string(FinishReason f) {
  switch (f) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Error: return "error";
  }
  throw Error("unknown finish reason");
}

std::string to_string(StopReason s) {
  switch (s) {
    case StopReason::MaxIterations: return "max_iterations";
    case StopReason::EarlyExit: return "early_exit";
    case StopReason::BudgetExhausted: return "budget_exhausted";
    case StopReason::Aborted: return "aborted";
  }
  throw Error("unknown stop reason");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Full: return "full";
    case Strategy::EarlyExit: return "early_exit";
    case Strategy::Parallel: return "parallel";
  }
  throw Error("unknown strategy");
}

std::string to_string(AnswerAbsentPolicy p) {
  switch (p) {
    case AnswerAbsentPolicy::RetryOnceThenSkip: return "retry_once_then_skip";
    case AnswerAbsentPolicy::Skip: return "skip";
  }
  throw Error("unknown answer_absent_policy");
}

Role role_from_string(const std::string& s) {
  if (s == "extractor") return Role::Extractor;
  if (s == "modifier") return Role::Modifier;
  if (s == "utilizer") return Role::Utilizer;
  throw ParseError("unknown role: " + s);
}

FinishReason finish_reason_from_string(const std::string& s) {
  if (s == "stop") return FinishReason::Stop;
  if (s == "length") return FinishReason::Length;
  if (s == "error") return FinishReason::Error;
  throw ParseError("unknown finish reason: " + s);
}

StopReason stop_reason_from_string(const std::string& s) {
  if (s == "max_iterations") return StopReason::MaxIterations;
  if (s == "early_exit") return StopReason::EarlyExit;
  if (s == "budget_exhausted") return StopReason::BudgetExhausted;
  if (s == "aborted") return StopReason::Aborted;
  throw ParseError("unknown stop reason: " + s);
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "full") return Strategy::Full;
  if (s == "early_exit" || s == "early-exit") return Strategy::EarlyExit;
  if (s == "parallel") return Strategy::Parallel;
  throw ParseError("unknown strategy: " + s);
}

AnswerAbsentPolicy answer_absent_policy_from_string(const std::string& s) {
  if (s == "retry_once_then_skip") return AnswerAbsentPolicy::RetryOnceThenSkip;
  if (s == "skip") return AnswerAbsentPolicy::Skip;
  throw ParseError("unknown answer_absent_policy: " + s);
}

RoleConfig default_role_config(Role role) {
  RoleConfig cfg;
  cfg.role = role;
  cfg.sampling.temperature = 0.6;
  cfg.sampling.top_p = 0.95;
  cfg.sampling.max_tokens = role == Role::Extractor ? 5000 : 32000;
  return cfg;
}

std::optional<RunConfigError> validate_run_config(const RunConfig& cfg) {
  if (cfg.n_iterations < 0) {
    return RunConfigError{RunConfigErrorKind::NonPositiveField,
                          "n_iterations must be >= 0"};
  }
  if (cfg.question_concurrency < 1) {
    return RunConfigError{RunConfigErrorKind::NonPositiveField,
                          "question_concurrency must be >= 1"};
  }
  if (cfg.strategy == Strategy::Parallel) {
    if (cfg.parallel.chains < 1 || cfg.parallel.depth < 1) {
      return RunConfigError{RunConfigErrorKind::NonPositiveField,
                            "parallel chains and depth must be >= 1"};
    }
    if (cfg.parallel.chains * cfg.parallel.depth != cfg.n_iterations) {
      return RunConfigError{
          RunConfigErrorKind::InvalidParallelFactorization,
          "chains*depth must equal n_iterations (" +
              std::to_string(cfg.parallel.chains) + "*" +
              std::to_string(cfg.parallel.depth) + " != " +
              std::to_string(cfg.n_iterations) + ")"};
    }
  }
  return std::nullopt;
}

ordered_json to_json(const Sticker& s) {
  ordered_json j;
  j["raw"] = s.raw;
  j["conditions"] = s.conditions;
  j["question_summary"] = s.question_summary;
  j["requirements"] = s.requirements ? json(*s.requirements) : json(nullptr);
  j["parse_failed"] = s.parse_failed;
  j["seq"] = s.seq;
  return j;
}

ordered_json to_json(const ReasoningTrace& t) {
  ordered_json j;
  j["role"] = to_string(t.role);
  j["text"] = t.text;
  j["prompt_tokens"] = t.prompt_tokens;
  j["completion_tokens"] = t.completion_tokens;
  j["finish_reason"] = to_string(t.finish_reason);
  j["seq"] = t.seq;
  return j;
}

ordered_json to_json(const Answer& a) {
  ordered_json j;
  j["raw"] = a.raw ? json(*a.raw) : json(nullptr);
  j["canonical"] = a.canonical ? json(*a.canonical) : json(nullptr);
  return j;
}

ordered_json to_json(const IterationRecord& r) {
  ordered_json j;
  j["k"] = r.k;
  j["sticker"] = to_json(r.sticker);
  j["modified_sticker"] = to_json(r.modified_sticker);
  j["trace"] = to_json(r.trace);
  j["answer"] = to_json(r.answer);
  return j;
}

ordered_json to_json(const Trajectory& t) {
  ordered_json j;
  j["schema"] = kTraceSchemaVersion;
  j["question_id"] = t.question_id;
  j["initial_trace"] = to_json(t.initial_trace);
  j["initial_answer"] = to_json(t.initial_answer);
  ordered_json iters = ordered_json::array();
  for (const auto& it : t.iterations) iters.push_back(to_json(it));
  j["iterations"] = std::move(iters);
  j["final_answer"] = to_json(t.final_answer);
  j["stop_reason"] = to_string(t.stop_reason);
  j["long_cot_units"] = t.long_cot_units;
  j["wall_time"] = t.wall_time.count();
  if (t.parallel()) {
    j["chains"] = t.chains;
    j["chain_depth"] = t.chain_depth;
    ordered_json ci = ordered_json::array();
    for (const auto& c : t.chain_initials) {
      ordered_json e;
      e["trace"] = to_json(c.trace);
      e["answer"] = to_json(c.answer);
      ci.push_back(std::move(e));
    }
    j["chain_initials"] = std::move(ci);
    j["chain_lengths"] = t.chain_lengths;
    ordered_json reasons = ordered_json::array();
    for (StopReason r : t.chain_stop_reasons) reasons.push_back(to_string(r));
    j["chain_stop_reasons"] = std::move(reasons);
  }
  return j;
}

namespace {

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

Sticker sticker_from_json(const json& j) {
  Sticker s;
  s.raw = j.at("raw").get<std::string>();
  s.conditions = j.at("conditions").get<std::vector<std::string>>();
  s.question_summary = j.at("question_summary").get<std::string>();
  s.requirements = opt_string(j, "requirements");
  s.parse_failed = j.at("parse_failed").get<bool>();
  s.seq = j.at("seq").get<std::uint64_t>();
  return s;
}

ReasoningTrace trace_from_json(const json& j) {
  ReasoningTrace t;
  t.role = role_from_string(j.at("role").get<std::string>());
  t.text = j.at("text").get<std::string>();
  t.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  t.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  t.finish_reason =
      finish_reason_from_string(j.at("finish_reason").get<std::string>());
  t.seq = j.at("seq").get<std::uint64_t>();
  return t;
}

Answer answer_from_json(const json& j) {
  Answer a;
  a.raw = opt_string(j, "raw");
  a.canonical = opt_string(j, "canonical");
  return a;
}

IterationRecord iteration_from_json(const json& j) {
  IterationRecord r;
  r.k = j.at("k").get<int>();
  r.sticker = sticker_from_json(j.at("sticker"));
  r.modified_sticker = sticker_from_json(j.at("modified_sticker"));
  r.trace = trace_from_json(j.at("trace"));
  r.answer = answer_from_json(j.at("answer"));
  return r;
}

Trajectory trajectory_from_json(const json& j) {
  if (j.contains("schema") && j.at("schema").get<int>() != kTraceSchemaVersion) {
    throw ParseError("unsupported trace schema version");
  }
  Trajectory t;
  t.question_id = j.at("question_id").get<std::string>();
  t.initial_trace = trace_from_json(j.at("initial_trace"));
  t.initial_answer = answer_from_json(j.at("initial_answer"));
  for (const auto& it : j.at("iterations")) {
    t.iterations.push_back(iteration_from_json(it));
  }
  t.final_answer = answer_from_json(j.at("final_answer"));
  t.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
  t.long_cot_units = j.at("long_cot_units").get<std::int64_t>();
  t.wall_time = std::chrono::milliseconds(j.at("wall_time").get<std::int64_t>());
  if (j.contains("chains")) {
    t.chains = j.at("chains").get<int>();
    t.chain_depth = j.at("chain_depth").get<int>();
    for (const auto& c : j.at("chain_initials")) {
      ChainInitial ci;
      ci.trace = trace_from_json(c.at("trace"));
      ci.answer = answer_from_json(c.at("answer"));
      t.chain_initials.push_back(std::move(ci));
    }
    t.chain_lengths = j.at("chain_lengths").get<std::vector<int>>();
    for (const auto& r : j.at("chain_stop_reasons")) {
      t.chain_stop_reasons.push_back(
          stop_reason_from_string(r.get<std::string>()));
    }
  }
  return t;
}

std::string to_jsonl(const Trajectory& t) { return to_json(t).dump(); }

Trajectory trajectory_from_jsonl(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw ParseError("trace line is not valid JSON");
  return trajectory_from_json(j);
}

}  // namespace sticker_tts
