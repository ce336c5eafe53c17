// sticker-tts: run, evaluate, scale, curate, and simulate iterative
// sticker-guided refinement over math benchmarks.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration/argument errors.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sticker_tts/config.hpp"
#include "sticker_tts/curate.hpp"
#include "sticker_tts/engine.hpp"
#include "sticker_tts/eval.hpp"
#include "sticker_tts/prompts.hpp"

namespace fs = std::filesystem;
using namespace sticker_tts;

namespace {

struct RunOverrides {
  std::optional<int> n;
  std::optional<std::string> strategy;
  std::optional<int> chains;
  std::optional<int> depth;
  std::optional<std::uint64_t> seed;
  std::optional<int> concurrency;
};

AppConfig load_or_default(const std::string& path) {
  if (path.empty()) return AppConfig{};
  return load_config(path);
}

void apply_overrides(AppConfig& config, const RunOverrides& o) {
  if (o.n) config.run.n_iterations = *o.n;
  if (o.strategy) {
    try {
      config.run.strategy = strategy_from_string(*o.strategy);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.chains) config.run.parallel.chains = *o.chains;
  if (o.depth) config.run.parallel.depth = *o.depth;
  // --chains/--depth imply the parallel strategy unless one was named.
  if ((o.chains || o.depth) && !o.strategy &&
      config.run.strategy != Strategy::Parallel) {
    config.run.strategy = Strategy::Parallel;
  }
  if (o.seed) config.run.rng_seed = *o.seed;
  if (o.concurrency) config.run.question_concurrency = *o.concurrency;
}

void validate_or_throw(const RunConfig& run) {
  if (auto err = validate_run_config(run)) {
    const char* kind = err->kind == RunConfigErrorKind::InvalidParallelFactorization
                           ? "InvalidParallelFactorization"
                           : "NonPositiveField";
    throw ConfigError(std::string(kind) + ": " + err->message);
  }
}

BenchmarkSet load_bench(const AppConfig& config,
                        const std::string& benchmark_flag) {
  std::string file =
      benchmark_flag.empty() ? config.paths.benchmark_file : benchmark_flag;
  if (file.empty()) {
    throw ConfigError("no benchmark file: pass --benchmark or set paths.benchmark_file");
  }
  if (!fs::exists(file)) {
    throw ConfigError("benchmark file does not exist: " + file);
  }
  return load_benchmark(file, config.benchmark_name);
}

std::string trace_path(const AppConfig& config, const BenchmarkSet& bench) {
  return (fs::path(config.paths.trace_dir) / (bench.name + ".jsonl")).string();
}

void ensure_parent_dir(const std::string& file) {
  fs::path parent = fs::path(file).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::vector<int> parse_n_list(const std::string& text) {
  std::vector<int> values;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      int n = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      values.push_back(n);
    } catch (const std::exception&) {
      throw ConfigError("--n expects a comma-separated integer list, got \"" +
                        text + "\"");
    }
  }
  if (values.empty()) throw ConfigError("--n list is empty");
  return values;
}

std::pair<double, double> parse_difficulty(const std::string& text) {
  std::size_t colon = text.find(':');
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      double lo = std::stod(text.substr(0, colon), &used);
      bool lo_ok = used == colon;
      std::string hi_text = text.substr(colon + 1);
      double hi = std::stod(hi_text, &used);
      if (lo_ok && used == hi_text.size()) return {lo, hi};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("--difficulty expects LO:HI, got \"" + text + "\"");
}

int cmd_run(const std::string& config_path, const RunOverrides& overrides,
            const std::string& benchmark_flag, const std::string& out_flag) {
  AppConfig config = load_or_default(config_path);
  apply_overrides(config, overrides);
  validate_or_throw(config.run);

  BenchmarkSet bench = load_bench(config, benchmark_flag);
  std::unique_ptr<Backend> backend = make_backend(config.backend);

  std::string path = out_flag.empty() ? trace_path(config, bench) : out_flag;
  ensure_parent_dir(path);
  TraceSink sink(path);

  BatchOptions options;
  options.resume = true;
  BatchSummary summary =
      run_batch(bench.questions, config.run, config.roles, *backend, sink, options);

  std::cout << "benchmark " << bench.name << ": " << summary.results.size()
            << " trajectories (" << summary.skipped << " resumed, "
            << summary.failures << " aborted)\n"
            << "long_cot_units " << summary.total_long_cot_units
            << " (2N approx " << summary.approx_2n_units << ")\n"
            << "tokens prompt " << summary.total_prompt_tokens
            << " completion " << summary.total_completion_tokens << "\n"
            << "traces -> " << path << "\n";
  return summary.failures > 0 ? 1 : 0;
}

int cmd_eval(const std::string& config_path, const std::string& benchmark_flag,
             const std::string& out_flag) {
  AppConfig config = load_or_default(config_path);
  BenchmarkSet bench = load_bench(config, benchmark_flag);

  std::string traces = trace_path(config, bench);
  std::vector<Trajectory> trajectories = load_trajectories(traces);
  MetricReport report = evaluate_trajectories(bench, trajectories, "sticker-tts");

  std::cout << report_table(report) << "\n" << report_csv(report);

  std::string outcomes_path =
      out_flag.empty()
          ? (fs::path(config.paths.trace_dir) / (bench.name + ".outcomes.jsonl"))
                .string()
          : out_flag;
  ensure_parent_dir(outcomes_path);
  write_outcomes(report, outcomes_path);
  std::cout << "outcomes -> " << outcomes_path << "\n";
  return 0;
}

int cmd_scale(const std::string& config_path, const std::string& n_list,
              std::optional<std::uint64_t> seed,
              const std::string& benchmark_flag, const std::string& out_flag) {
  AppConfig config = load_or_default(config_path);
  if (seed) config.run.rng_seed = *seed;
  if (config.run.strategy == Strategy::Parallel) {
    throw ConfigError("scale sweeps N and does not support strategy=parallel");
  }
  std::vector<int> n_values = parse_n_list(n_list);
  for (std::size_t i = 1; i < n_values.size(); ++i) {
    if (n_values[i] < n_values[i - 1]) {
      throw ConfigError("--n list must be sorted ascending");
    }
  }

  BenchmarkSet bench = load_bench(config, benchmark_flag);
  std::unique_ptr<Backend> backend = make_backend(config.backend);
  std::vector<ScalingRow> rows =
      scaling_study(bench, config.run, config.roles, *backend, n_values);

  std::cout << scaling_table(rows) << "\n" << scaling_csv(rows);
  if (!out_flag.empty()) {
    ensure_parent_dir(out_flag);
    std::ofstream out(out_flag, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot open output file: " + out_flag);
    out << scaling_csv(rows);
    if (!out.flush()) throw Error("write failed: " + out_flag);
    std::cout << "csv -> " << out_flag << "\n";
  }
  return 0;
}

int cmd_curate(const std::string& config_path, const std::string& benchmark_flag,
               std::optional<std::uint64_t> seed, int stage,
               const std::string& difficulty, const std::string& out_flag) {
  AppConfig config = load_or_default(config_path);
  double lo = stage == 1 ? 0.2 : 0.0;
  double hi = stage == 1 ? 0.5 : 0.4;
  if (!difficulty.empty()) std::tie(lo, hi) = parse_difficulty(difficulty);
  if (lo < 0.0 || hi > 1.0 || lo > hi) {
    throw ConfigError("--difficulty bounds must satisfy 0 <= LO <= HI <= 1");
  }

  BenchmarkSet bench = load_bench(config, benchmark_flag);
  std::vector<Trajectory> trajectories =
      load_trajectories(trace_path(config, bench));
  std::unique_ptr<Backend> backend = make_backend(config.backend);

  SingleShotSampler sampler =
      backend_sampler(*backend, config.roles.utilizer, config.run.rng_seed);
  std::set<std::string> selected;
  for (const Question& q : bench.questions) {
    DifficultyScore score = estimate_difficulty(q, sampler);
    if (score.score >= lo && score.score <= hi) selected.insert(q.id);
  }

  BenchmarkSet filtered_bench;
  filtered_bench.name = bench.name;
  for (const Question& q : bench.questions) {
    if (selected.count(q.id)) filtered_bench.questions.push_back(q);
  }
  std::vector<Trajectory> filtered;
  for (Trajectory& t : trajectories) {
    if (selected.count(t.question_id)) filtered.push_back(std::move(t));
  }

  CurationOptions options;
  options.seed = seed ? *seed : config.run.rng_seed;
  CurationResult result = curate_corpus(filtered_bench, filtered, options);

  std::string dir = out_flag.empty()
                        ? (fs::path(config.paths.report_dir) / "sft").string()
                        : out_flag;
  write_curation(result, dir);

  ordered_json manifest = manifest_to_json(result.manifest);
  manifest["difficulty_lo"] = lo;
  manifest["difficulty_hi"] = hi;
  manifest["problems_selected"] = static_cast<int>(selected.size());
  std::cout << manifest.dump(2) << "\n"
            << "sft -> " << dir << "\n";
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& n_list,
                 std::optional<std::uint64_t> seed, const std::string& out_flag) {
  AppConfig config = load_or_default(config_path);
  if (seed) config.run.rng_seed = *seed;
  if (config.run.strategy == Strategy::Parallel) {
    throw ConfigError("simulate sweeps N and does not support strategy=parallel");
  }
  std::vector<int> n_values = parse_n_list(n_list);

  BenchmarkSet bench;
  bench.name = "simulated";
  for (int i = 0; i < config.simulate_questions; ++i) {
    bench.questions.push_back({"sim" + std::to_string(i),
                               "Synthetic problem " + std::to_string(i), "7",
                               bench.name});
  }

  StochasticBackend backend(config.backend.stochastic);
  std::vector<ScalingRow> rows =
      scaling_study(bench, config.run, config.roles, backend, n_values);

  std::cout << "markov chain: p_initial="
            << config.backend.stochastic.p_initial_correct
            << " p_stay=" << config.backend.stochastic.p_stay_correct
            << " p_fix=" << config.backend.stochastic.p_fix << " over "
            << config.simulate_questions << " questions\n"
            << scaling_table(rows) << "\n"
            << scaling_csv(rows);
  if (!out_flag.empty()) {
    ensure_parent_dir(out_flag);
    std::ofstream out(out_flag, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot open output file: " + out_flag);
    out << scaling_csv(rows);
    if (!out.flush()) throw Error("write failed: " + out_flag);
    std::cout << "csv -> " << out_flag << "\n";
  }
  return 0;
}

int cmd_render_prompt(const std::string& role, const std::string& question,
                      const std::string& sticker, const std::string& answer,
                      const std::string& solution) {
  auto require = [](const std::string& value, const char* flag) {
    if (value.empty()) {
      throw ConfigError(std::string("render-prompt: missing required ") + flag);
    }
  };
  try {
    std::string rendered;
    if (role == "initial") {
      require(question, "--question");
      rendered = render_initial(question);
    } else if (role == "extractor") {
      require(solution, "--solution");
      rendered = render_extractor(solution);
    } else if (role == "modifier") {
      require(question, "--question");
      require(sticker, "--sticker");
      rendered = render_modifier(question, sticker);
    } else if (role == "utilizer") {
      require(question, "--question");
      require(sticker, "--sticker");
      Answer prev;
      if (!answer.empty()) prev = {answer, canonicalize(answer)};
      rendered = render_utilizer(question, sticker, prev);
    } else {
      throw ConfigError("--role must be one of initial|extractor|modifier|utilizer");
    }
    std::cout << rendered;
  } catch (const EmptyInputError& e) {
    throw ConfigError(e.what());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sticker-TTS: sticker-guided iterative test-time scaling"};
  app.require_subcommand(1);
  int rc = 0;

  std::string config_path;
  std::string benchmark_flag;
  std::string out_flag;
  std::string n_list = "2,4,8,16";
  std::string strategy_help = "full|early-exit|parallel";
  RunOverrides overrides;
  std::optional<std::uint64_t> seed_flag;
  int stage = 1;
  std::string difficulty;
  std::string role;
  std::string question;
  std::string sticker;
  std::string answer;
  std::string solution;

  CLI::App* run = app.add_subcommand("run", "Run refinement over a benchmark");
  run->add_option("--config", config_path, "TOML config file");
  run->add_option("--n", overrides.n, "Iterations per question");
  run->add_option("--strategy", overrides.strategy, strategy_help);
  run->add_option("--chains", overrides.chains,
                  "Parallel chains (implies --strategy parallel)");
  run->add_option("--depth", overrides.depth,
                  "Iterations per chain (implies --strategy parallel)");
  run->add_option("--seed", overrides.seed, "RNG seed");
  run->add_option("--concurrency", overrides.concurrency,
                  "Questions in flight");
  run->add_option("--benchmark", benchmark_flag, "Benchmark JSONL file");
  run->add_option("--out", out_flag, "Trace JSONL path");
  run->callback([&]() {
    rc = cmd_run(config_path, overrides, benchmark_flag, out_flag);
  });

  CLI::App* eval = app.add_subcommand("eval", "Score persisted trajectories");
  eval->add_option("--config", config_path, "TOML config file");
  eval->add_option("--benchmark", benchmark_flag, "Benchmark JSONL file");
  eval->add_option("--out", out_flag, "Outcomes JSONL path");
  eval->callback([&]() { rc = cmd_eval(config_path, benchmark_flag, out_flag); });

  CLI::App* scale = app.add_subcommand("scale", "Cons@N across an N grid");
  scale->add_option("--config", config_path, "TOML config file");
  scale->add_option("--n", n_list, "Comma-separated ascending N list");
  scale->add_option("--seed", seed_flag, "RNG seed");
  scale->add_option("--benchmark", benchmark_flag, "Benchmark JSONL file");
  scale->add_option("--out", out_flag, "CSV output path");
  scale->callback([&]() {
    rc = cmd_scale(config_path, n_list, seed_flag, benchmark_flag, out_flag);
  });

  CLI::App* curate = app.add_subcommand("curate", "Build SFT data from traces");
  curate->add_option("--config", config_path, "TOML config file");
  curate->add_option("--benchmark", benchmark_flag, "Benchmark JSONL file");
  curate->add_option("--seed", seed_flag, "Downsampling seed");
  curate->add_option("--stage", stage, "Difficulty preset: 1 = 0.2:0.5, 2 = 0.0:0.4")
      ->check(CLI::IsMember({1, 2}));
  curate->add_option("--difficulty", difficulty, "Explicit LO:HI bounds");
  curate->add_option("--out", out_flag, "Output directory");
  curate->callback([&]() {
    rc = cmd_curate(config_path, benchmark_flag, seed_flag, stage, difficulty,
                    out_flag);
  });

  CLI::App* simulate =
      app.add_subcommand("simulate", "Markov-model scaling curves");
  simulate->add_option("--config", config_path, "TOML config file");
  simulate->add_option("--n", n_list, "Comma-separated ascending N list");
  simulate->add_option("--seed", seed_flag, "RNG seed");
  simulate->add_option("--out", out_flag, "CSV output path");
  simulate->callback(
      [&]() { rc = cmd_simulate(config_path, n_list, seed_flag, out_flag); });

  CLI::App* render =
      app.add_subcommand("render-prompt", "Print a rendered prompt");
  render->add_option("--role", role, "initial|extractor|modifier|utilizer")
      ->required();
  render->add_option("--question", question, "Question text");
  render->add_option("--sticker", sticker, "Sticker text");
  render->add_option("--answer", answer, "Previous answer");
  render->add_option("--solution", solution, "Prior solution text (extractor)");
  render->callback(
      [&]() { rc = cmd_render_prompt(role, question, sticker, answer, solution); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
