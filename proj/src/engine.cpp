#include "sticker_tts/engine.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <thread>

#include "sticker_tts/prompts.hpp"

namespace sticker_tts {

namespace {

using Clock = std::chrono::steady_clock;

struct ChainOutput {
  ReasoningTrace initial_trace;
  Answer initial_answer;
  std::vector<IterationRecord> iterations;
  StopReason stop_reason = StopReason::MaxIterations;
  std::vector<std::string> ballots;
  int extractor_calls = 0;
  int modifier_calls = 0;
  int utilizer_calls = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t backend_calls = 0;
  std::uint64_t next_seq = 0;

  bool aborted() const { return stop_reason == StopReason::Aborted; }
};

// One sequential chain of the loop. Every completed backend call advances the
// seq stamp and the logical clock tick; a permanent call failure ends the
// chain with stop_reason=aborted and whatever records completed.
class ChainRunner {
 public:
  ChainRunner(const Question& q, const RoleSet& roles, Backend& backend,
              AnswerAbsentPolicy policy, std::uint64_t salt,
              const BackoffPolicy& backoff)
      : q_(q),
        roles_(roles),
        backend_(backend),
        policy_(policy),
        salt_(salt),
        backoff_(backoff) {}

  ChainOutput run(int n, bool early_exit) {
    out_ = ChainOutput{};
    out_.initial_trace.finish_reason = FinishReason::Error;
    EngineState state;
    state.question = q_;
    try {
      auto [trace, answer] = utilize(render_initial(q_.text), Answer{});
      out_.initial_trace = trace;
      out_.initial_answer = answer;
      state.trace_list.push_back(trace);
      state.answer_list.push_back(answer);
      push_ballot(answer);

      for (int k = 1; k <= n; ++k) {
        Sticker sticker = extract(state.trace_list.back().text);
        Sticker modified = modify(sticker);
        const Answer prev = state.answer_list.back();
        auto [t, a] =
            utilize(render_utilizer(q_.text, modified.raw, prev), prev);
        out_.iterations.push_back({k, sticker, modified, t, a});
        state.trace_list.push_back(t);
        state.answer_list.push_back(a);
        push_ballot(a);
        state.k = k;

        if (early_exit && a.present() && prev.present() &&
            *a.canonical == *prev.canonical) {
          out_.stop_reason = StopReason::EarlyExit;
          break;
        }
      }
    } catch (const Error&) {
      out_.stop_reason = StopReason::Aborted;
    }
    state.stop_reason = out_.stop_reason;
    return std::move(out_);
  }

 private:
  ReasoningTrace call(Role role, const RoleConfig& cfg, const std::string& prompt,
                      int call_index, const std::optional<std::string>& prev) {
    CallContext ctx{q_.id, role, call_index, salt_, q_.gold, prev};
    ReasoningTrace trace = send(backend_, cfg, prompt, ctx, backoff_);
    trace.seq = out_.next_seq++;
    out_.backend_calls += 1;
    out_.prompt_tokens += trace.prompt_tokens;
    out_.completion_tokens += trace.completion_tokens;
    return trace;
  }

  Sticker extract(const std::string& solution) {
    ReasoningTrace trace = call(Role::Extractor, roles_.extractor,
                                render_extractor(solution),
                                extractor_index_++, std::nullopt);
    ++out_.extractor_calls;
    Sticker s = parse_sticker(trace.text);
    s.seq = trace.seq;
    return s;
  }

  Sticker modify(const Sticker& sticker) {
    ReasoningTrace trace = call(Role::Modifier, roles_.modifier,
                                render_modifier(q_.text, sticker.raw),
                                modifier_index_++, std::nullopt);
    ++out_.modifier_calls;
    Sticker s = parse_sticker(trace.text);
    s.seq = trace.seq;
    return s;
  }

  std::pair<ReasoningTrace, Answer> utilize(const std::string& prompt,
                                            const Answer& prev) {
    ReasoningTrace trace = call(Role::Utilizer, roles_.utilizer, prompt,
                                utilizer_index_++, prev.canonical);
    ++out_.utilizer_calls;
    Answer answer = answer_from_text(trace.text);
    if (!answer.present() && policy_ == AnswerAbsentPolicy::RetryOnceThenSkip) {
      trace = call(Role::Utilizer, roles_.utilizer, prompt, utilizer_index_++,
                   prev.canonical);
      ++out_.utilizer_calls;
      answer = answer_from_text(trace.text);
    }
    return {trace, answer};
  }

  void push_ballot(const Answer& a) {
    if (a.present()) out_.ballots.push_back(*a.canonical);
  }

  const Question& q_;
  const RoleSet& roles_;
  Backend& backend_;
  AnswerAbsentPolicy policy_;
  std::uint64_t salt_;
  BackoffPolicy backoff_;
  ChainOutput out_;
  int extractor_index_ = 0;
  int modifier_index_ = 0;
  int utilizer_index_ = 0;
};

void apply_vote(TrajectoryResult& result) {
  if (result.ballots.empty()) {
    result.trajectory.final_answer = Answer{};
    return;
  }
  result.vote = majority_vote(result.ballots);
  result.trajectory.final_answer =
      Answer{result.vote->winner, result.vote->winner};
}

void require_valid(const RunConfig& run) {
  if (auto err = validate_run_config(run)) {
    throw Error("invalid run config: " + err->message);
  }
}

}  // namespace

TrajectoryResult run_trajectory(const Question& q, const RunConfig& run,
                                const RoleSet& roles, Backend& backend,
                                const BackoffPolicy& backoff) {
  require_valid(run);
  if (run.strategy == Strategy::Parallel) {
    throw Error("run_trajectory handles full/early_exit; use run_parallel");
  }
  auto started = Clock::now();
  ChainRunner runner(q, roles, backend, run.answer_absent_policy, run.rng_seed,
                     backoff);
  ChainOutput chain =
      runner.run(run.n_iterations, run.strategy == Strategy::EarlyExit);

  TrajectoryResult result;
  Trajectory& t = result.trajectory;
  t.question_id = q.id;
  t.initial_trace = chain.initial_trace;
  t.initial_answer = chain.initial_answer;
  t.iterations = std::move(chain.iterations);
  t.stop_reason = chain.stop_reason;
  t.long_cot_units = chain.modifier_calls + chain.utilizer_calls;
  t.wall_time = backend.deterministic()
                    ? std::chrono::milliseconds(chain.backend_calls)
                    : std::chrono::duration_cast<std::chrono::milliseconds>(
                          Clock::now() - started);
  result.ballots = std::move(chain.ballots);
  result.extractor_calls = chain.extractor_calls;
  result.modifier_calls = chain.modifier_calls;
  result.utilizer_calls = chain.utilizer_calls;
  result.total_prompt_tokens = chain.prompt_tokens;
  result.total_completion_tokens = chain.completion_tokens;
  apply_vote(result);
  return result;
}

TrajectoryResult run_parallel(const Question& q, const RunConfig& run,
                              const RoleSet& roles, Backend& backend,
                              const BackoffPolicy& backoff) {
  require_valid(run);
  if (run.strategy != Strategy::Parallel) {
    throw Error("run_parallel requires strategy=parallel");
  }
  const int chains = run.parallel.chains;
  const int depth = run.parallel.depth;
  if (chains == 1) {
    RunConfig seq = run;
    seq.strategy = Strategy::Full;
    seq.n_iterations = depth;
    return run_trajectory(q, seq, roles, backend, backoff);
  }

  auto started = Clock::now();
  std::vector<ChainOutput> outputs;
  outputs.reserve(chains);
  for (int c = 0; c < chains; ++c) {
    ChainRunner runner(q, roles, backend, run.answer_absent_policy,
                       run.rng_seed ^ static_cast<std::uint64_t>(c), backoff);
    outputs.push_back(runner.run(depth, false));
  }

  TrajectoryResult result;
  Trajectory& t = result.trajectory;
  t.question_id = q.id;
  t.chains = chains;
  t.chain_depth = depth;

  std::uint64_t seq_offset = 0;
  int global_k = 0;
  std::int64_t backend_calls = 0;
  bool any_aborted = false;
  for (ChainOutput& chain : outputs) {
    chain.initial_trace.seq += seq_offset;
    t.chain_initials.push_back(
        ChainInitial{chain.initial_trace, chain.initial_answer});
    t.chain_lengths.push_back(static_cast<int>(chain.iterations.size()));
    t.chain_stop_reasons.push_back(chain.stop_reason);
    for (IterationRecord& rec : chain.iterations) {
      rec.k = ++global_k;
      rec.sticker.seq += seq_offset;
      rec.modified_sticker.seq += seq_offset;
      rec.trace.seq += seq_offset;
      t.iterations.push_back(std::move(rec));
    }
    if (!chain.aborted()) {
      result.ballots.insert(result.ballots.end(), chain.ballots.begin(),
                            chain.ballots.end());
    } else {
      any_aborted = true;
    }
    t.long_cot_units += chain.modifier_calls + chain.utilizer_calls;
    result.extractor_calls += chain.extractor_calls;
    result.modifier_calls += chain.modifier_calls;
    result.utilizer_calls += chain.utilizer_calls;
    result.total_prompt_tokens += chain.prompt_tokens;
    result.total_completion_tokens += chain.completion_tokens;
    backend_calls += chain.backend_calls;
    seq_offset += chain.next_seq;
  }
  t.initial_trace = t.chain_initials.front().trace;
  t.initial_answer = t.chain_initials.front().answer;
  t.stop_reason = any_aborted ? StopReason::Aborted : StopReason::MaxIterations;
  t.wall_time = backend.deterministic()
                    ? std::chrono::milliseconds(backend_calls)
                    : std::chrono::duration_cast<std::chrono::milliseconds>(
                          Clock::now() - started);
  apply_vote(result);
  return result;
}

TraceSink::TraceSink(const std::string& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_RDWR | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw SinkWriteFailed("cannot open trace sink " + path + ": " +
                          std::strerror(errno));
  }
  // Terminate a torn tail line left by a crash mid-write, so the next append
  // starts on a fresh line instead of gluing onto the fragment.
  off_t size = ::lseek(fd_, 0, SEEK_END);
  if (size > 0) {
    char last = '\0';
    if (::pread(fd_, &last, 1, size - 1) == 1 && last != '\n') {
      if (::write(fd_, "\n", 1) != 1) {
        throw SinkWriteFailed("cannot repair torn tail of " + path);
      }
    }
  }
}

TraceSink::~TraceSink() {
  if (fd_ >= 0) ::close(fd_);
}

void TraceSink::append(const Trajectory& t) {
  std::string line = to_jsonl(t);
  line.push_back('\n');
  std::lock_guard lock(mu_);
  const char* p = line.data();
  size_t left = line.size();
  while (left > 0) {
    ssize_t written = ::write(fd_, p, left);
    if (written < 0) {
      if (errno == EINTR) continue;
      throw SinkWriteFailed("write to " + path_ + " failed: " +
                            std::strerror(errno));
    }
    p += written;
    left -= static_cast<size_t>(written);
  }
  if (::fsync(fd_) != 0) {
    throw SinkWriteFailed("fsync of " + path_ + " failed: " +
                          std::strerror(errno));
  }
}

std::set<std::string> TraceSink::existing_ids(const std::string& path) {
  std::set<std::string> ids;
  std::ifstream in(path, std::ios::binary);
  if (!in) return ids;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("question_id") ||
        !j["question_id"].is_string()) {
      continue;  // torn tail line from a crash mid-write
    }
    ids.insert(j["question_id"].get<std::string>());
  }
  return ids;
}

BatchSummary run_batch(const std::vector<Question>& questions,
                       const RunConfig& run, const RoleSet& roles,
                       Backend& backend, TraceSink& sink,
                       const BatchOptions& options) {
  require_valid(run);

  std::set<std::string> done;
  if (options.resume) done = TraceSink::existing_ids(sink.path());

  struct Slot {
    bool skipped = false;
    std::optional<TrajectoryResult> result;
  };
  std::vector<Slot> slots(questions.size());
  std::vector<size_t> work;
  for (size_t i = 0; i < questions.size(); ++i) {
    if (options.resume && done.count(questions[i].id)) {
      slots[i].skipped = true;
    } else {
      work.push_back(i);
    }
  }
  if (options.stop_after >= 0 &&
      work.size() > static_cast<size_t>(options.stop_after)) {
    work.resize(static_cast<size_t>(options.stop_after));
  }

  // Completions are buffered and written in work order, so the sink bytes are
  // independent of concurrency and timing.
  std::mutex write_mu;
  std::map<size_t, const Trajectory*> ready;
  size_t write_cursor = 0;
  std::exception_ptr sink_error;
  std::atomic<bool> stop_flag{false};
  std::atomic<size_t> next_work{0};

  auto worker = [&] {
    while (!stop_flag.load()) {
      size_t j = next_work.fetch_add(1);
      if (j >= work.size()) break;
      size_t i = work[j];
      TrajectoryResult result =
          run.strategy == Strategy::Parallel
              ? run_parallel(questions[i], run, roles, backend, options.backoff)
              : run_trajectory(questions[i], run, roles, backend,
                               options.backoff);
      std::lock_guard lock(write_mu);
      slots[i].result = std::move(result);
      ready[j] = &slots[i].result->trajectory;
      while (!ready.empty() && ready.begin()->first == write_cursor) {
        try {
          sink.append(*ready.begin()->second);
        } catch (const SinkWriteFailed&) {
          if (!sink_error) sink_error = std::current_exception();
          stop_flag.store(true);
          return;
        }
        ready.erase(ready.begin());
        ++write_cursor;
      }
    }
  };

  size_t threads = std::min<size_t>(
      std::max(1, run.question_concurrency), std::max<size_t>(work.size(), 1));
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();
  if (sink_error) std::rethrow_exception(sink_error);

  BatchSummary summary;
  for (size_t i = 0; i < questions.size(); ++i) {
    const Slot& slot = slots[i];
    if (slot.skipped) {
      ++summary.skipped;
      continue;
    }
    if (!slot.result.has_value()) continue;  // beyond stop_after
    const TrajectoryResult& r = *slot.result;
    QuestionResult row;
    row.question_id = r.trajectory.question_id;
    if (r.trajectory.final_answer.present()) {
      row.final_canonical = r.trajectory.final_answer.canonical;
    }
    row.stop_reason = r.trajectory.stop_reason;
    row.long_cot_units = r.trajectory.long_cot_units;
    summary.total_long_cot_units += row.long_cot_units;
    summary.approx_2n_units += 2 * run.n_iterations;
    summary.total_prompt_tokens += r.total_prompt_tokens;
    summary.total_completion_tokens += r.total_completion_tokens;
    if (r.trajectory.stop_reason == StopReason::Aborted) ++summary.failures;
    summary.results.push_back(std::move(row));
  }
  return summary;
}

}  // namespace sticker_tts
