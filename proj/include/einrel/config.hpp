#pragma once

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "einrel/environment.hpp"
#include "einrel/errors.hpp"
#include "einrel/regeneration.hpp"
#include "einrel/sde.hpp"

namespace einrel {

/// Suite parameters that do not belong to the environment or the integrator.
struct SuiteParams {
  double t_star = 100.0;               // time-change comparison time
  std::uint64_t repetitions = 5;       // time-change KS repetitions; 0 skips the KS comparison
  bool identity_check = true;          // time-change suite also compares Sigma^Y with gamma Sigma
  double exit_horizon = 0.0;           // 0: 20 / min(lambda)^2
  std::uint64_t gamma_points = 1000;   // spatial samples per environment
  double direct_blocks = 20.0;         // velocity horizon in units of lambda^-2
  double regen_blocks = 200.0;         // regeneration path length in units of lambda^-2
  bool regeneration_in_scan = true;    // einstein scan also runs the ratio estimator
  std::uint64_t sigma_paths = 0;       // paths per environment for Sigma; 0: sim.n_paths

  friend bool operator==(const SuiteParams&, const SuiteParams&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  EnvironmentSpec env;
  SimulationConfig sim;
  std::vector<double> lambdas{0.2, 0.1, 0.05};
  std::vector<double> alphas{1.0};
  std::vector<double> levels;
  std::vector<double> times;
  std::vector<int> powers{2};
  RegenerationParams regen;
  SuiteParams suite;
  std::map<std::string, double> tolerances;
  std::string output_dir = "results";
  unsigned threads = 0;  // 0: EINREL_THREADS or hardware concurrency

  double tolerance(const std::string& key, double fallback) const {
    const auto it = tolerances.find(key);
    return it == tolerances.end() ? fallback : it->second;
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  if (v.empty()) throw ConfigError(key, "expected a number, got an empty value");
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || errno == ERANGE) throw ConfigError(key, "expected a number, got '" + v + "'");
  return d;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  errno = 0;
  char* end = nullptr;
  const unsigned long long u = std::strtoull(v.c_str(), &end, 0);
  if (end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return u;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

}  // namespace detail

/// Ordered key -> value pairs of a config file. Accepts `key = value` lines,
/// dotted keys, `[section]` headers (prefixing following keys) and `#` comments.
inline std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno), "unterminated section header");
      section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    if (!section.empty()) key = section + "." + key;
    if (kv.count(key)) throw ConfigError(key, "duplicate key");
    kv[key] = detail::trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

/// Builds a config from parsed pairs on top of `base`; unknown keys and
/// malformed values raise ConfigError naming the key.
inline ExperimentConfig config_from_key_values(const std::map<std::string, std::string>& kv,
                                               ExperimentConfig c = {}) {
  using namespace detail;
  for (const auto& [k, v] : kv) {
    if (k == "name") c.name = v;
    else if (k == "env.kind") {
      auto kind = parse_environment_kind(v);
      if (!kind) throw ConfigError(k, "unknown environment kind '" + v + "'");
      c.env.kind = *kind;
    } else if (k == "env.dimension") c.env.dimension = static_cast<int>(parse_u64(k, v));
    else if (k == "env.seed") c.env.seed = parse_u64(k, v);
    else if (k == "env.cell_size") c.env.cell_size = parse_double(k, v);
    else if (k == "env.bump_amplitude") c.env.bump_amplitude = parse_double(k, v);
    else if (k == "env.aniso_amplitude") c.env.aniso_amplitude = parse_double(k, v);
    else if (k == "env.kappa") c.env.kappa = parse_double(k, v);
    else if (k == "env.bumps_per_cell") c.env.bumps_per_cell = static_cast<int>(parse_u64(k, v));
    else if (k == "sim.dt") c.sim.dt = parse_double(k, v);
    else if (k == "sim.horizon") c.sim.horizon = parse_double(k, v);
    else if (k == "sim.lambda") c.sim.lambda = parse_double(k, v);
    else if (k == "sim.direction") c.sim.direction = parse_list(k, v);
    else if (k == "sim.alpha") c.sim.alpha = v.empty() ? std::nullopt : std::optional(parse_double(k, v));
    else if (k == "sim.n_paths") c.sim.n_paths = parse_u64(k, v);
    else if (k == "sim.n_envs") c.sim.n_envs = parse_u64(k, v);
    else if (k == "sim.base_seed") c.sim.base_seed = parse_u64(k, v);
    else if (k == "sim.levels") c.sim.levels = parse_list(k, v);
    else if (k == "sim.observation_times") c.sim.observation_times = parse_list(k, v);
    else if (k == "sim.keep_stride") c.sim.keep_stride = parse_u64(k, v);
    else if (k == "sim.stop_at_clock")
      c.sim.stop_at_clock = v.empty() ? std::nullopt : std::optional(parse_double(k, v));
    else if (k == "sim.brownian_refinement") c.sim.brownian_refinement = static_cast<std::uint32_t>(parse_u64(k, v));
    else if (k == "grid.lambda") c.lambdas = parse_list(k, v);
    else if (k == "grid.alpha") c.alphas = parse_list(k, v);
    else if (k == "grid.levels") c.levels = parse_list(k, v);
    else if (k == "grid.times") c.times = parse_list(k, v);
    else if (k == "grid.powers") {
      c.powers.clear();
      for (double p : parse_list(k, v)) {
        if (p != std::floor(p) || p < 1) throw ConfigError(k, "powers must be positive integers");
        c.powers.push_back(static_cast<int>(p));
      }
    } else if (k == "regen.ladder_scale") c.regen.ladder_scale = parse_double(k, v);
    else if (k == "regen.horizon_blocks") c.regen.horizon_blocks = parse_double(k, v);
    else if (k == "regen.max_levels") c.regen.max_levels = parse_u64(k, v);
    else if (k == "suite.t_star") c.suite.t_star = parse_double(k, v);
    else if (k == "suite.repetitions") c.suite.repetitions = parse_u64(k, v);
    else if (k == "suite.identity_check") c.suite.identity_check = parse_bool(k, v);
    else if (k == "suite.exit_horizon") c.suite.exit_horizon = parse_double(k, v);
    else if (k == "suite.gamma_points") c.suite.gamma_points = parse_u64(k, v);
    else if (k == "suite.direct_blocks") c.suite.direct_blocks = parse_double(k, v);
    else if (k == "suite.regen_blocks") c.suite.regen_blocks = parse_double(k, v);
    else if (k == "suite.regeneration_in_scan") c.suite.regeneration_in_scan = parse_bool(k, v);
    else if (k == "suite.sigma_paths") c.suite.sigma_paths = parse_u64(k, v);
    else if (k.rfind("tolerance.", 0) == 0 && k.size() > 10) c.tolerances[k.substr(10)] = parse_double(k, v);
    else if (k == "output.dir") c.output_dir = v;
    else if (k == "run.threads") c.threads = static_cast<unsigned>(parse_u64(k, v));
    else throw ConfigError(k, "unknown key");
  }
  if (!kv.count("sim.direction") && c.env.dimension >= 1 &&
      c.sim.direction.size() != static_cast<std::size_t>(c.env.dimension)) {
    c.sim.direction.assign(static_cast<std::size_t>(c.env.dimension), 0.0);
    c.sim.direction[0] = 1.0;
  }
  return c;
}

/// Checks cross-field invariants; throws ConfigError naming the field.
inline void validate(const ExperimentConfig& c) {
  validate(c.env);
  validate(c.sim, c.env.dimension);
  validate(c.regen);
  if (c.lambdas.empty()) throw ConfigError("grid.lambda", "must be non-empty");
  if (c.alphas.empty()) throw ConfigError("grid.alpha", "must be non-empty");
  if (c.powers.empty()) throw ConfigError("grid.powers", "must be non-empty");
  for (double l : c.lambdas)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("grid.lambda", "entries must lie in [0, 1]");
  for (double a : c.alphas)
    if (!(a > 0.0)) throw ConfigError("grid.alpha", "entries must be positive");
  if (!(c.suite.t_star > 0.0)) throw ConfigError("suite.t_star", "must be positive");
  for (const auto& [field, text] : {std::pair{"name", c.name}, std::pair{"output.dir", c.output_dir}})
    if (text.empty() || text.find_first_of("#\n[]") != std::string::npos || text != detail::trim(text))
      throw ConfigError(field, "must be non-empty without '#', brackets, newlines or surrounding blanks");
  if (c.env.dimension > 3) throw ConfigError("env.dimension", "the command line supports dimensions 1 to 3");
}

inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {}) {
  ExperimentConfig c = config_from_key_values(parse_key_values(text), std::move(base));
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text form; parse_config(serialize_config(c)) == c. With
/// `for_hash` the output directory and thread count are left out.
inline std::string serialize_config(const ExperimentConfig& c, bool for_hash = false) {
  using detail::join;
  std::ostringstream o;
  auto kv = [&](const std::string& k, const std::string& v) { o << k << " = " << v << "\n"; };
  kv("name", c.name);
  o << "\n";
  kv("env.kind", std::string(to_string(c.env.kind)));
  kv("env.dimension", std::to_string(c.env.dimension));
  kv("env.seed", std::to_string(c.env.seed));
  kv("env.cell_size", format_double(c.env.cell_size));
  kv("env.bump_amplitude", format_double(c.env.bump_amplitude));
  kv("env.aniso_amplitude", format_double(c.env.aniso_amplitude));
  kv("env.kappa", format_double(c.env.kappa));
  kv("env.bumps_per_cell", std::to_string(c.env.bumps_per_cell));
  o << "\n";
  kv("sim.dt", format_double(c.sim.dt));
  kv("sim.horizon", format_double(c.sim.horizon));
  kv("sim.lambda", format_double(c.sim.lambda));
  kv("sim.direction", join(c.sim.direction));
  kv("sim.alpha", c.sim.alpha ? format_double(*c.sim.alpha) : "");
  kv("sim.n_paths", std::to_string(c.sim.n_paths));
  kv("sim.n_envs", std::to_string(c.sim.n_envs));
  kv("sim.base_seed", std::to_string(c.sim.base_seed));
  kv("sim.levels", join(c.sim.levels));
  kv("sim.observation_times", join(c.sim.observation_times));
  kv("sim.keep_stride", std::to_string(c.sim.keep_stride));
  kv("sim.stop_at_clock", c.sim.stop_at_clock ? format_double(*c.sim.stop_at_clock) : "");
  kv("sim.brownian_refinement", std::to_string(c.sim.brownian_refinement));
  o << "\n";
  kv("grid.lambda", join(c.lambdas));
  kv("grid.alpha", join(c.alphas));
  kv("grid.levels", join(c.levels));
  kv("grid.times", join(c.times));
  std::vector<double> powers(c.powers.begin(), c.powers.end());
  kv("grid.powers", join(powers));
  o << "\n";
  kv("regen.ladder_scale", format_double(c.regen.ladder_scale));
  kv("regen.horizon_blocks", format_double(c.regen.horizon_blocks));
  kv("regen.max_levels", std::to_string(c.regen.max_levels));
  o << "\n";
  kv("suite.t_star", format_double(c.suite.t_star));
  kv("suite.repetitions", std::to_string(c.suite.repetitions));
  kv("suite.identity_check", c.suite.identity_check ? "true" : "false");
  kv("suite.exit_horizon", format_double(c.suite.exit_horizon));
  kv("suite.gamma_points", std::to_string(c.suite.gamma_points));
  kv("suite.direct_blocks", format_double(c.suite.direct_blocks));
  kv("suite.regen_blocks", format_double(c.suite.regen_blocks));
  kv("suite.regeneration_in_scan", c.suite.regeneration_in_scan ? "true" : "false");
  kv("suite.sigma_paths", std::to_string(c.suite.sigma_paths));
  if (!c.tolerances.empty()) o << "\n";
  for (const auto& [k, v] : c.tolerances) kv("tolerance." + k, format_double(v));
  if (!for_hash) {
    o << "\n";
    kv("output.dir", c.output_dir);
    kv("run.threads", std::to_string(c.threads));
  }
  return o.str();
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Content hash of everything that affects results.
inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(serialize_config(c, true)); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace einrel
