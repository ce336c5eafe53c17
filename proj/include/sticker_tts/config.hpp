// TOML-subset application configuration: role endpoints, run parameters,
// paths, and backend selection, with ${VAR} environment interpolation inside
// strings. Flags override file values; the API key is read exclusively from
// the STICKER_TTS_API_KEY environment variable and is rejected here.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>

#include "sticker_tts/core.hpp"
#include "sticker_tts/engine.hpp"
#include "sticker_tts/llm_client.hpp"

namespace sticker_tts {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Supported value shapes: "string" (with \" \\ \n \t escapes and ${VAR}
// interpolation), integer, float, true/false.
using TomlValue = std::variant<std::string, std::int64_t, double, bool>;

// Parses the subset: [section] / [a.b] headers, key = value pairs, # comments.
// Keys are returned flattened as "section.key". Duplicate keys and malformed
// lines raise ConfigError.
std::map<std::string, TomlValue> parse_toml(const std::string& text);

// ${VAR} -> value of the environment variable; undefined variables raise
// ConfigError.
std::string interpolate_env(const std::string& value);

enum class BackendKind { Remote, Scripted, Stochastic };

std::string to_string(BackendKind k);
BackendKind backend_kind_from_string(const std::string& s);

struct BackendConfig {
  BackendKind kind = BackendKind::Stochastic;
  std::string script_file;      // scripted only
  StochasticParams stochastic;  // stochastic only

  bool operator==(const BackendConfig&) const = default;
};

struct PathsConfig {
  std::string benchmark_file;
  std::string trace_dir = "traces";
  std::string report_dir = "reports";

  bool operator==(const PathsConfig&) const = default;
};

struct AppConfig {
  std::string benchmark_name;  // empty = derive from the benchmark file stem
  RoleSet roles;
  RunConfig run;
  PathsConfig paths;
  BackendConfig backend;
  int simulate_questions = 200;
};

// Builds an AppConfig from TOML text. Unknown keys are rejected (typo
// safety), as is any key named api_key anywhere: credentials travel only via
// STICKER_TTS_API_KEY.
AppConfig config_from_toml(const std::string& text);

AppConfig load_config(const std::string& path);

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

}  // namespace sticker_tts
