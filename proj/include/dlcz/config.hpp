#pragma once

// Campaign configuration: sectioned key = value text.
//
//   # comment
//   [model]
//   chi = 0.0169
//   xi  = 0.95
//
// Every key has a default; a file only lists what it changes. Unknown
// sections or keys are rejected. Times are in microseconds.

#include "dlcz/engine.hpp"
#include "dlcz/inference.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlcz::cli {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string key = {}, std::size_t line = 0);
  const std::string& key() const noexcept { return key_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string key_;
  std::size_t line_;
};

enum class ValueType { real, integer, boolean, choice, real_list };

struct KeySpec {
  std::string section;
  std::string key;
  ValueType type;
  std::string default_value;
  std::vector<std::string> choices;  // for ValueType::choice
  std::string doc;

  std::string name() const { return section + "." + key; }
};

const std::vector<KeySpec>& schema();

class Config {
 public:
  Config();  // all defaults

  /// Applies a config file body over the current values.
  void merge_text(const std::string& text, const std::string& source = "config");
  void merge_file(const std::string& path);
  /// "section.key=value"
  void apply_override(const std::string& assignment);
  void set(const std::string& name, const std::string& value);

  const std::string& get(const std::string& name) const;
  double real(const std::string& name) const;
  std::int64_t integer(const std::string& name) const;
  std::uint64_t uinteger(const std::string& name) const;
  bool boolean(const std::string& name) const;
  std::vector<double> real_list(const std::string& name) const;

  /// Fully resolved config in schema order; parses back to an equal Config.
  std::string canonical_text() const;
  /// FNV-1a over the canonical text without run.seed, as 16 hex digits.
  std::string hash() const;

  friend bool operator==(const Config&, const Config&) = default;

 private:
  std::map<std::string, std::string> values_;
};

Config parse_config(const std::string& text, const std::string& source = "config");

engine::ExperimentConfig to_experiment(const Config& config);
inference::EfficiencyChain to_chain(const Config& config);
inference::EfficiencyChain to_chain_sigma(const Config& config);
inference::InversionPolicy to_policy(const Config& config, const std::string& key = "inference.policy");

std::string valid_keys_message();

}  // namespace dlcz::cli
