#include "dlcz/config.hpp"

#include "dlcz/errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dlcz::cli {

namespace {

using V = ValueType;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_uint(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc{} && ptr == s.data() + s.size()) return true;
  // Accept integral reals such as 3e8.
  double d = 0;
  if (!parse_double(s, d) || d != std::floor(d) || std::abs(d) > 9.0e18) return false;
  out = static_cast<std::int64_t>(d);
  return true;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string tok; std::getline(in, tok, ',');) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

const KeySpec* find_spec(const std::string& name) {
  for (const auto& k : schema()) {
    if (k.name() == name) return &k;
  }
  return nullptr;
}

void check_value(const KeySpec& spec, const std::string& value, std::size_t line) {
  auto bad = [&](const std::string& why) {
    throw ConfigError("invalid value '" + value + "' for " + spec.name() + ": " + why, spec.name(), line);
  };
  switch (spec.type) {
    case V::real: {
      double d;
      if (!parse_double(value, d)) bad("expected a number");
      break;
    }
    case V::integer: {
      std::int64_t i;
      std::uint64_t u;
      if (!parse_int(value, i) && !parse_uint(value, u)) bad("expected an integer");
      if (parse_int(value, i) && i < 0) bad("expected a non-negative integer");
      break;
    }
    case V::boolean:
      if (value != "true" && value != "false") bad("expected true or false");
      break;
    case V::choice: {
      bool ok = false;
      std::string all;
      for (const auto& c : spec.choices) {
        ok = ok || c == value;
        all += (all.empty() ? "" : "|") + c;
      }
      if (!ok) bad("expected one of " + all);
      break;
    }
    case V::real_list:
      for (const auto& tok : split_list(value)) {
        double d;
        if (!parse_double(tok, d)) bad("expected a comma-separated list of numbers");
      }
      break;
  }
}

std::string format_ctor_message(const std::string& what, const std::string& key, std::size_t line) {
  std::string msg = "config error";
  if (line > 0) msg += " at line " + std::to_string(line);
  if (!key.empty()) msg += " (" + key + ")";
  return msg + ": " + what;
}

}  // namespace

ConfigError::ConfigError(const std::string& what, std::string key, std::size_t line)
    : std::runtime_error(format_ctor_message(what, key, line)), key_(std::move(key)), line_(line) {}

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"model", "chi", V::real, "0.01690399", {}, "excitation probability per trial per ensemble"},
      {"model", "xi", V::real, "0.95", {}, "field-2 mode overlap"},
      {"model", "theta", V::real, "0", {}, "herald phase (rad)"},

      {"optics", "field1_efficiency_u", V::real, "0.02619498", {}, "field-1 transmission, ensemble U"},
      {"optics", "field1_efficiency_d", V::real, "0.02619498", {}, "field-1 transmission, ensemble D"},
      {"optics", "readout_efficiency", V::real, "0.45", {}, "atomic excitation to field-2 photon"},
      {"optics", "field2_efficiency_u", V::real, "0.27853584", {}, "field-2 transmission, path U"},
      {"optics", "field2_efficiency_d", V::real, "0.30436607", {}, "field-2 transmission, path D"},

      {"detectors", "efficiency_d1a", V::real, "1", {}, ""},
      {"detectors", "efficiency_d1b", V::real, "1", {}, ""},
      {"detectors", "efficiency_d2a", V::real, "1", {}, ""},
      {"detectors", "efficiency_d2b", V::real, "1", {}, ""},
      {"detectors", "dark_mean_d1a", V::real, "0", {}, "dark counts per trial gate"},
      {"detectors", "dark_mean_d1b", V::real, "0", {}, ""},
      {"detectors", "dark_mean_d2a", V::real, "0", {}, ""},
      {"detectors", "dark_mean_d2b", V::real, "0", {}, ""},

      {"decay", "enabled", V::boolean, "true", {}, ""},
      {"decay", "tau0_us", V::real, "0.2", {}, "reference storage time"},
      {"decay", "pc0", V::real, "0.135", {}, ""},
      {"decay", "g0", V::real, "30", {}, ""},
      {"decay", "tau_d_pc_us", V::real, "13", {}, ""},
      {"decay", "tau_d_g_us", V::real, "13", {}, ""},
      {"decay", "g_floor", V::real, "1", {}, ""},

      {"storage", "time_us", V::real, "0.2", {}, "storage time between write and read"},

      {"readout", "mode", V::choice, "both", {"separate", "interfere", "both"}, ""},
      {"readout", "n_phases", V::integer, "12", {}, "equally spaced fringe phases when phases is empty"},
      {"readout", "phases", V::real_list, "", {}, "explicit fringe phases (rad)"},

      {"run", "n_trials", V::integer, "10000000", {}, ""},
      {"run", "seed", V::integer, "1", {}, ""},
      {"run", "n_max", V::integer, "3", {}, "Fock cutoff per mode"},
      {"run", "batch_size", V::integer, "65536", {}, ""},
      {"run", "ensemble", V::choice, "U", {"U", "D"}, "ensemble for characterize"},
      {"run", "trial_rate", V::real, "1.7e6", {}, "Hz, metadata"},
      {"run", "duty_factor", V::real, "0.10588235294117647", {}, "metadata"},

      {"analysis", "bootstrap_resamples", V::integer, "1000", {}, ""},
      {"analysis", "bootstrap_seed", V::integer, "20051", {}, ""},
      {"analysis", "characterize_trials", V::integer, "0", {}, "per-ensemble trials for sweep and table1; 0 means run.n_trials"},

      {"inference", "eta_path_u", V::real, "0.29409090909090907", {}, "field-2 propagation x detection, U"},
      {"inference", "eta_path_d", V::real, "0.29458333333333331", {}, "field-2 propagation x detection, D"},
      {"inference", "eta_readout", V::real, "0.45", {}, ""},
      {"inference", "sigma_eta_path_u", V::real, "0.053471", {}, ""},
      {"inference", "sigma_eta_path_d", V::real, "0.049097", {}, ""},
      {"inference", "sigma_eta_readout", V::real, "0.10", {}, ""},
      {"inference", "policy", V::choice, "strict", {"strict", "clip", "linear"}, ""},
      {"inference", "propagation_policy", V::choice, "linear", {"strict", "clip", "linear"}, ""},
      {"inference", "propagation_samples", V::integer, "20000", {}, ""},

      {"sweep", "parameter", V::choice, "chi", {"chi", "storage_time"}, "storage_time values in us"},
      {"sweep", "values", V::real_list, "", {}, ""},
  };
  return keys;
}

std::string valid_keys_message() {
  std::string msg = "valid keys:";
  for (const auto& k : schema()) msg += " " + k.name();
  return msg;
}

Config::Config() {
  for (const auto& k : schema()) values_[k.name()] = k.default_value;
}

void Config::set(const std::string& name, const std::string& value) {
  const KeySpec* spec = find_spec(name);
  if (!spec) throw ConfigError("unknown key; " + valid_keys_message(), name);
  check_value(*spec, value, 0);
  values_[name] = value;
}

void Config::merge_text(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string section;
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source + ": unterminated section header", "", line_no);
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      bool known = false;
      for (const auto& k : schema()) known = known || k.section == section;
      if (!known) throw ConfigError(source + ": unknown section [" + section + "]; " + valid_keys_message(), section, line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ": expected key = value", "", line_no);
    if (section.empty()) throw ConfigError(source + ": key outside of a section", "", line_no);
    const std::string name = section + "." + trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const KeySpec* spec = find_spec(name);
    if (!spec) throw ConfigError(source + ": unknown key; " + valid_keys_message(), name, line_no);
    check_value(*spec, value, line_no);
    values_[name] = value;
  }
}

void Config::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  merge_text(buf.str(), path);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

const std::string& Config::get(const std::string& name) const {
  const auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown key; " + valid_keys_message(), name);
  return it->second;
}

double Config::real(const std::string& name) const {
  double d = 0;
  if (!parse_double(get(name), d)) throw ConfigError("not a number", name);
  return d;
}

std::int64_t Config::integer(const std::string& name) const {
  std::int64_t i = 0;
  if (!parse_int(get(name), i)) throw ConfigError("not an integer", name);
  return i;
}

std::uint64_t Config::uinteger(const std::string& name) const {
  std::uint64_t u = 0;
  if (parse_uint(get(name), u)) return u;
  const auto i = integer(name);
  if (i < 0) throw ConfigError("must not be negative", name);
  return static_cast<std::uint64_t>(i);
}

bool Config::boolean(const std::string& name) const { return get(name) == "true"; }

std::vector<double> Config::real_list(const std::string& name) const {
  std::vector<double> out;
  for (const auto& tok : split_list(get(name))) {
    double d = 0;
    if (!parse_double(tok, d)) throw ConfigError("not a number list", name);
    out.push_back(d);
  }
  return out;
}

std::string Config::canonical_text() const {
  std::string out;
  std::string section;
  for (const auto& k : schema()) {
    if (k.section != section) {
      out += (section.empty() ? "[" : "\n[") + k.section + "]\n";
      section = k.section;
    }
    out += k.key + " = " + values_.at(k.name()) + "\n";
  }
  return out;
}

std::string Config::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& k : schema()) {
    if (k.name() == "run.seed") continue;
    feed(k.name());
    feed("=");
    feed(values_.at(k.name()));
    feed("\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Config parse_config(const std::string& text, const std::string& source) {
  Config c;
  c.merge_text(text, source);
  return c;
}

engine::ExperimentConfig to_experiment(const Config& c) {
  engine::ExperimentConfig e;
  e.model.chi = c.real("model.chi");
  e.model.xi = c.real("model.xi");
  e.model.theta = c.real("model.theta");
  e.field1_efficiency_u = c.real("optics.field1_efficiency_u");
  e.field1_efficiency_d = c.real("optics.field1_efficiency_d");
  e.readout_efficiency = c.real("optics.readout_efficiency");
  e.field2_efficiency_u = c.real("optics.field2_efficiency_u");
  e.field2_efficiency_d = c.real("optics.field2_efficiency_d");
  const char* names[4] = {"d1a", "d1b", "d2a", "d2b"};
  for (std::size_t k = 0; k < 4; ++k) {
    e.detectors[k].efficiency = c.real(std::string("detectors.efficiency_") + names[k]);
    e.detectors[k].dark_mean = c.real(std::string("detectors.dark_mean_") + names[k]);
  }
  e.apply_decay = c.boolean("decay.enabled");
  e.decay.tau0 = c.real("decay.tau0_us") * 1e-6;
  e.decay.pc0 = c.real("decay.pc0");
  e.decay.g0 = c.real("decay.g0");
  e.decay.tau_d_pc = c.real("decay.tau_d_pc_us") * 1e-6;
  e.decay.tau_d_g = c.real("decay.tau_d_g_us") * 1e-6;
  e.decay.g_floor = c.real("decay.g_floor");
  e.storage_time = c.real("storage.time_us") * 1e-6;

  const auto& mode = c.get("readout.mode");
  e.readout = mode == "separate" ? engine::ReadoutMode::separate
              : mode == "interfere" ? engine::ReadoutMode::interfere
                                    : engine::ReadoutMode::both;
  e.phases = c.real_list("readout.phases");
  if (e.phases.empty()) {
    const auto n = c.integer("readout.n_phases");
    if (n < 1 || n > 10000) throw ConfigError("must lie in [1, 10000]", "readout.n_phases");
    e.phases = engine::equally_spaced_phases(static_cast<int>(n));
  }

  e.n_trials = c.uinteger("run.n_trials");
  e.seed = c.uinteger("run.seed");
  e.n_max = static_cast<int>(c.integer("run.n_max"));
  e.batch_size = c.uinteger("run.batch_size");
  e.trial_rate = c.real("run.trial_rate");
  e.duty_factor = c.real("run.duty_factor");
  try {
    e.validate();
  } catch (const DomainError& err) {
    throw ConfigError(err.what());
  } catch (const UsageError& err) {
    throw ConfigError(err.what());
  }
  return e;
}

inference::EfficiencyChain to_chain(const Config& c) {
  return {c.real("inference.eta_path_u"), c.real("inference.eta_path_d"), c.real("inference.eta_readout")};
}

inference::EfficiencyChain to_chain_sigma(const Config& c) {
  return {c.real("inference.sigma_eta_path_u"), c.real("inference.sigma_eta_path_d"),
          c.real("inference.sigma_eta_readout")};
}

inference::InversionPolicy to_policy(const Config& c, const std::string& key) {
  const auto& p = c.get(key);
  return p == "clip" ? inference::InversionPolicy::clip
         : p == "linear" ? inference::InversionPolicy::linear
                         : inference::InversionPolicy::strict;
}

}  // namespace dlcz::cli
