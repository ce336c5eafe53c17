#include "sticker_tts/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace sticker_tts {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.' &&
        c != '-') {
      return false;
    }
  }
  return true;
}

[[noreturn]] void fail(int line_no, const std::string& what) {
  throw ConfigError("config line " + std::to_string(line_no) + ": " + what);
}

// Drops a trailing # comment, respecting double quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (c == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string parse_quoted(const std::string& value, int line_no) {
  std::string out;
  std::size_t i = 1;
  for (; i < value.size(); ++i) {
    char c = value[i];
    if (c == '"') break;
    if (c == '\\') {
      if (i + 1 >= value.size()) fail(line_no, "dangling escape");
      char next = value[++i];
      switch (next) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: fail(line_no, std::string("unsupported escape \\") + next);
      }
      continue;
    }
    out += c;
  }
  if (i >= value.size()) fail(line_no, "unterminated string");
  if (!trim(value.substr(i + 1)).empty()) {
    fail(line_no, "trailing characters after string value");
  }
  return interpolate_env(out);
}

TomlValue parse_value(const std::string& raw, int line_no) {
  std::string value = trim(raw);
  if (value.empty()) fail(line_no, "missing value");
  if (value[0] == '"') return parse_quoted(value, line_no);
  if (value == "true") return true;
  if (value == "false") return false;

  bool integral = true;
  for (std::size_t i = 0; i < value.size(); ++i) {
    char c = value[i];
    if (i == 0 && (c == '+' || c == '-')) continue;
    if (!std::isdigit(static_cast<unsigned char>(c))) {
      integral = false;
      break;
    }
  }
  errno = 0;
  char* end = nullptr;
  if (integral) {
    long long n = std::strtoll(value.c_str(), &end, 10);
    if (errno != 0 || end != value.c_str() + value.size()) {
      fail(line_no, "integer out of range: " + value);
    }
    return static_cast<std::int64_t>(n);
  }
  double d = std::strtod(value.c_str(), &end);
  if (errno != 0 || end != value.c_str() + value.size()) {
    fail(line_no, "unparseable value: " + value);
  }
  return d;
}

// Pulls typed values out of the flattened map, tracking consumption so
// config_from_toml can reject unknown keys afterwards.
class KeyReader {
 public:
  explicit KeyReader(std::map<std::string, TomlValue> kv) : kv_(std::move(kv)) {
    for (const auto& [key, value] : kv_) {
      std::size_t dot = key.rfind('.');
      std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
      if (leaf == "api_key") {
        throw ConfigError(
            "config key \"" + key +
            "\" rejected: the API key is read only from the "
            "STICKER_TTS_API_KEY environment variable");
      }
    }
  }

  void take(const std::string& key, std::string& out) {
    if (const TomlValue* v = consume(key)) {
      if (const auto* s = std::get_if<std::string>(v)) {
        out = *s;
        return;
      }
      wrong_type(key, "string");
    }
  }

  void take(const std::string& key, int& out) {
    if (const TomlValue* v = consume(key)) {
      if (const auto* n = std::get_if<std::int64_t>(v)) {
        out = static_cast<int>(*n);
        return;
      }
      wrong_type(key, "integer");
    }
  }

  void take(const std::string& key, std::uint64_t& out) {
    if (const TomlValue* v = consume(key)) {
      const auto* n = std::get_if<std::int64_t>(v);
      if (n && *n >= 0) {
        out = static_cast<std::uint64_t>(*n);
        return;
      }
      wrong_type(key, "non-negative integer");
    }
  }

  void take(const std::string& key, double& out) {
    if (const TomlValue* v = consume(key)) {
      if (const auto* d = std::get_if<double>(v)) {
        out = *d;
        return;
      }
      if (const auto* n = std::get_if<std::int64_t>(v)) {
        out = static_cast<double>(*n);
        return;
      }
      wrong_type(key, "number");
    }
  }

  template <typename Enum, typename Parse>
  void take_enum(const std::string& key, Enum& out, Parse parse) {
    std::string text;
    take(key, text);
    if (text.empty()) return;
    try {
      out = parse(text);
    } catch (const Error& e) {
      throw ConfigError("config key \"" + key + "\": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, value] : kv_) {
      if (!consumed_.count(key)) {
        throw ConfigError("unknown config key \"" + key + "\"");
      }
    }
  }

 private:
  const TomlValue* consume(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    consumed_.insert(key);
    return &it->second;
  }

  [[noreturn]] void wrong_type(const std::string& key, const char* want) {
    throw ConfigError("config key \"" + key + "\" must be a " +
                      std::string(want));
  }

  std::map<std::string, TomlValue> kv_;
  std::set<std::string> consumed_;
};

void read_role(KeyReader& reader, const std::string& section, RoleConfig& role) {
  reader.take(section + ".endpoint_url", role.endpoint_url);
  reader.take(section + ".model_name", role.model_name);
  reader.take(section + ".temperature", role.sampling.temperature);
  reader.take(section + ".top_p", role.sampling.top_p);
  reader.take(section + ".max_tokens", role.sampling.max_tokens);
  int timeout_ms = static_cast<int>(role.request_timeout.count());
  reader.take(section + ".request_timeout_ms", timeout_ms);
  role.request_timeout = std::chrono::milliseconds(timeout_ms);
  reader.take(section + ".max_retries", role.max_retries);
}

}  // namespace

std::string interpolate_env(const std::string& value) {
  std::string out;
  std::size_t i = 0;
  while (i < value.size()) {
    if (value[i] == '$' && i + 1 < value.size() && value[i + 1] == '{') {
      std::size_t close = value.find('}', i + 2);
      if (close == std::string::npos) {
        throw ConfigError("unterminated ${ in value: " + value);
      }
      std::string name = value.substr(i + 2, close - i - 2);
      if (name.empty()) throw ConfigError("empty ${} in value: " + value);
      const char* env = std::getenv(name.c_str());
      if (!env) {
        throw ConfigError("undefined environment variable ${" + name + "}");
      }
      out += env;
      i = close + 1;
      continue;
    }
    out += value[i++];
  }
  return out;
}

std::map<std::string, TomlValue> parse_toml(const std::string& text) {
  std::map<std::string, TomlValue> out;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_key(section)) fail(line_no, "invalid section name");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!valid_key(key) || key.find('.') != std::string::npos) {
      fail(line_no, "invalid key \"" + key + "\"");
    }
    std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full)) fail(line_no, "duplicate key \"" + full + "\"");
    out.emplace(full, parse_value(line.substr(eq + 1), line_no));
  }
  return out;
}

std::string to_string(BackendKind k) {
  switch (k) {
    case BackendKind::Remote:
      return "remote";
    case BackendKind::Scripted:
      return "scripted";
    case BackendKind::Stochastic:
      return "stochastic";
  }
  throw Error("unreachable backend kind");
}

BackendKind backend_kind_from_string(const std::string& s) {
  if (s == "remote") return BackendKind::Remote;
  if (s == "scripted") return BackendKind::Scripted;
  if (s == "stochastic") return BackendKind::Stochastic;
  throw ParseError("unknown backend kind: " + s);
}

AppConfig config_from_toml(const std::string& text) {
  KeyReader reader(parse_toml(text));
  AppConfig config;

  reader.take("benchmark_name", config.benchmark_name);

  reader.take("run.n", config.run.n_iterations);
  reader.take_enum("run.strategy", config.run.strategy, strategy_from_string);
  reader.take("run.chains", config.run.parallel.chains);
  reader.take("run.depth", config.run.parallel.depth);
  reader.take("run.seed", config.run.rng_seed);
  reader.take("run.concurrency", config.run.question_concurrency);
  reader.take_enum("run.answer_absent_policy", config.run.answer_absent_policy,
                   answer_absent_policy_from_string);

  reader.take("paths.benchmark_file", config.paths.benchmark_file);
  reader.take("paths.trace_dir", config.paths.trace_dir);
  reader.take("paths.report_dir", config.paths.report_dir);

  reader.take_enum("backend.kind", config.backend.kind,
                   backend_kind_from_string);
  reader.take("backend.script_file", config.backend.script_file);
  reader.take("backend.rng_seed", config.backend.stochastic.rng_seed);
  reader.take("backend.p_initial_correct",
              config.backend.stochastic.p_initial_correct);
  reader.take("backend.p_stay_correct",
              config.backend.stochastic.p_stay_correct);
  reader.take("backend.p_fix", config.backend.stochastic.p_fix);
  reader.take("backend.answer_alphabet_size",
              config.backend.stochastic.answer_alphabet_size);

  read_role(reader, "roles.extractor", config.roles.extractor);
  read_role(reader, "roles.modifier", config.roles.modifier);
  read_role(reader, "roles.utilizer", config.roles.utilizer);

  reader.take("simulate.questions", config.simulate_questions);

  reader.finish();
  return config;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_toml(buf.str());
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  switch (config.kind) {
    case BackendKind::Remote:
      return std::make_unique<HttpBackend>();
    case BackendKind::Scripted: {
      if (config.script_file.empty()) {
        throw ConfigError("scripted backend requires backend.script_file");
      }
      auto backend = std::make_unique<ScriptedBackend>();
      backend->load_json_file(config.script_file);
      return backend;
    }
    case BackendKind::Stochastic:
      return std::make_unique<StochasticBackend>(config.stochastic);
  }
  throw Error("unreachable backend kind");
}

}  // namespace sticker_tts
