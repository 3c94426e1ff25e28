#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "einrel/config.hpp"
#include "einrel/environment.hpp"
#include "einrel/errors.hpp"
#include "einrel/experiments.hpp"
#include "einrel/parallel.hpp"
#include "einrel/report.hpp"
#include "einrel/result_store.hpp"
#include "einrel/sde.hpp"

namespace fs = std::filesystem;
using namespace einrel;

namespace {

constexpr int kPass = 0;
constexpr int kStatFail = 1;
constexpr int kError = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string out;
};

std::optional<std::uint64_t> env_u64(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return detail::parse_u64(name, v);
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (auto s = c.seed ? c.seed : env_u64("EINREL_SEED")) cfg.sim.base_seed = *s;
  if (c.threads) cfg.threads = *c.threads;
  else if (auto t = env_u64("EINREL_THREADS")) cfg.threads = static_cast<unsigned>(*t);
  if (!c.out.empty()) cfg.output_dir = c.out;
  validate(cfg);
  if (cfg.threads) set_worker_count(cfg.threads);
  return cfg;
}

template <std::size_t D>
Vec<D> parse_point(const std::string& key, const std::string& text, double fallback_first) {
  Vec<D> x{};
  if (text.empty()) {
    x[0] = fallback_first;
    return x;
  }
  const auto v = detail::parse_list(key, text);
  if (v.size() != D) throw ConfigError(key, "needs " + std::to_string(D) + " comma-separated components");
  for (std::size_t i = 0; i < D; ++i) x[i] = v[i];
  return x;
}

struct ProbeArgs {
  std::string from, to;
  std::uint64_t samples = 101;
  std::uint64_t env_id = 0;
  bool trajectory = false;
  std::uint64_t path_id = 0;
  bool perturbed = false;
  bool time_changed = false;
  std::string file;
};

template <std::size_t D>
void probe(const ExperimentConfig& cfg, const ProbeArgs& a, std::ostream& out) {
  const EnvironmentFamily<D> family(cfg.env);
  const auto env = family.draw(a.env_id);
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
  };
  if (a.trajectory) {
    SimulationConfig c = cfg.sim;
    c.keep_stride = std::max<std::uint64_t>(1, c.keep_stride);
    validate(c, static_cast<int>(D));
    const auto rec = a.time_changed ? simulate_time_changed_path(env, c, a.path_id, a.env_id, a.perturbed)
                                    : simulate_path(env, c, a.path_id, a.env_id, a.perturbed);
    out << "step,time";
    for (std::size_t i = 0; i < D; ++i) out << ",x" << i + 1;
    out << ",B,bracket,A\n";
    for (std::size_t k = 0; k < rec.trajectory.size(); ++k) {
      const auto& s = rec.trajectory[k];
      out << step_index(s.time, c.dt) << "," << num(s.time);
      for (std::size_t i = 0; i < D; ++i) out << "," << num(s.x[i]);
      out << "," << num(s.girsanov_b) << "," << num(s.girsanov_bracket) << "," << num(s.clock) << "\n";
    }
    if (!rec.ok()) throw SimulationError(rec.diagnostic);
    return;
  }
  const Vec<D> from = parse_point<D>("--from", a.from, 0.0);
  const Vec<D> to = parse_point<D>("--to", a.to, 4.0 * cfg.env.cell_size);
  if (a.samples < 1) throw ConfigError("--samples", "must be >= 1");
  for (std::size_t i = 0; i < D; ++i) out << "x" << i + 1 << ",";
  out << "V";
  for (std::size_t i = 0; i < D; ++i) out << ",b" << i + 1;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) out << ",a" << i + 1 << j + 1;
  out << "\n";
  for (std::uint64_t k = 0; k < a.samples; ++k) {
    const double f = a.samples == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(a.samples - 1);
    Vec<D> x;
    for (std::size_t i = 0; i < D; ++i) x[i] = from[i] + f * (to[i] - from[i]);
    const auto c = env.evaluate(x);
    for (std::size_t i = 0; i < D; ++i) out << num(x[i]) << ",";
    out << num(c.potential);
    for (std::size_t i = 0; i < D; ++i) out << "," << num(c.drift[i]);
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) out << "," << num(i == j ? c.sigma * c.sigma : 0.0);
    out << "\n";
  }
}

int cmd_probe(const Common& common, const ProbeArgs& a) {
  const ExperimentConfig cfg = load(common);
  std::ofstream file;
  if (!a.file.empty()) {
    file.open(a.file);
    if (!file) throw std::runtime_error("cannot write '" + a.file + "'");
  }
  std::ostream& out = a.file.empty() ? std::cout : file;
  switch (cfg.env.dimension) {
    case 1: probe<1>(cfg, a, out); break;
    case 2: probe<2>(cfg, a, out); break;
    default: probe<3>(cfg, a, out); break;
  }
  return kPass;
}

void print_checks(const SuiteResult& r) {
  for (const auto& c : r.checks)
    std::printf("%s %s value=%.6g threshold=%.6g %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.value,
                c.threshold, c.detail.c_str());
}

int cmd_run(const Common& common, const std::string& suite, const std::string& cache_dir, bool no_cache) {
  const ExperimentConfig cfg = load(common);
  const std::uint64_t hash = config_hash(cfg);
  const ResultStore store(cache_dir);
  SuiteResult r;
  bool cached = false;
  if (!no_cache) {
    const CacheLookup hit = store.load(suite, hash);
    if (hit.status == CacheStatus::hit) {
      r = *hit.result;
      cached = true;
    } else if (hit.status == CacheStatus::corrupt) {
      std::fprintf(stderr, "cache: %s is corrupt (%s); recomputing\n", store.path_for(suite, hash).c_str(),
                   hit.reason.c_str());
    }
  }
  if (!cached) {
    r = run_suite(suite, cfg);
    if (!no_cache) store.store(r);
  }
  const fs::path dir = fs::path(cfg.output_dir) / suite;
  write_suite_outputs(dir, r, cfg);
  std::fprintf(stderr, "%s: config %s, %llu samples, %s, outputs in %s\n", suite.c_str(), hex64(hash).c_str(),
               static_cast<unsigned long long>(r.total_samples), cached ? "cache hit" : "computed",
               dir.string().c_str());
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  print_checks(r);
  return r.passed() ? kPass : kStatFail;
}

int cmd_report(const std::string& root) {
  if (!fs::is_directory(root)) throw ConfigError("report", "'" + root + "' is not a directory");
  std::vector<fs::path> summaries;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "summary.csv") summaries.push_back(e.path());
  std::sort(summaries.begin(), summaries.end());
  if (summaries.empty()) throw ConfigError("report", "no summary.csv under '" + root + "'");
  std::size_t total = 0, failed = 0;
  for (const auto& path : summaries) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    const auto header = parse_csv_line(line);
    if (header.size() < 2 || header[0] != "check" || header[1] != "pass")
      throw ConfigError(path.string(), "unexpected summary header");
    const std::string suite = fs::relative(path.parent_path(), root).string();
    std::printf("[%s]\n", suite.empty() || suite == "." ? path.parent_path().filename().c_str() : suite.c_str());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = parse_csv_line(line);
      if (cells.size() < 5) throw ConfigError(path.string(), "malformed row '" + line + "'");
      const bool pass = cells[1] == "1";
      ++total;
      failed += !pass;
      std::printf("  %s %s value=%s threshold=%s %s\n", pass ? "PASS" : "FAIL", cells[0].c_str(), cells[2].c_str(),
                  cells[3].c_str(), cells[4].c_str());
    }
  }
  std::printf("%zu checks, %zu failed\n", total, failed);
  return failed ? kStatFail : kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo lab for the Einstein relation of diffusions in random environment"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "config file (key = value)");
    sub->add_option("--seed", common.seed, "base seed (overrides EINREL_SEED and sim.base_seed)");
    sub->add_option("--threads", common.threads, "worker threads (overrides EINREL_THREADS)");
    sub->add_option("--out", common.out, "output directory (overrides output.dir)");
  };

  auto* env_cmd = app.add_subcommand("env", "inspect environments");
  env_cmd->require_subcommand(1);
  auto* probe_cmd = env_cmd->add_subcommand("probe", "sample V, b and a along a segment, or dump one trajectory");
  add_common(probe_cmd);
  ProbeArgs pa;
  probe_cmd->add_option("--from", pa.from, "segment start, comma-separated (default origin)");
  probe_cmd->add_option("--to", pa.to, "segment end, comma-separated (default 4 cells along x1)");
  probe_cmd->add_option("--samples", pa.samples, "points on the segment")->capture_default_str();
  probe_cmd->add_option("--env-id", pa.env_id, "environment draw")->capture_default_str();
  probe_cmd->add_flag("--trajectory", pa.trajectory, "dump a path instead: step,time,x,B,bracket,A");
  probe_cmd->add_option("--path-id", pa.path_id, "path for --trajectory")->capture_default_str();
  probe_cmd->add_flag("--perturbed", pa.perturbed, "add the lambda drift to the dumped path");
  probe_cmd->add_flag("--time-changed", pa.time_changed, "dump the time-changed process");
  probe_cmd->add_option("--file", pa.file, "write CSV here instead of stdout");

  auto* run_cmd = app.add_subcommand("run", "run a suite and write CSV/SVG outputs");
  add_common(run_cmd);
  std::string suite;
  std::string cache_dir = ".einrel-cache";
  if (const char* v = std::getenv("EINREL_CACHE_DIR"); v && *v) cache_dir = v;
  bool no_cache = false;
  run_cmd->add_option("suite", suite, "suite name")->required()->check(CLI::IsMember(suite_names()));
  run_cmd->add_option("--cache-dir", cache_dir, "result cache directory (EINREL_CACHE_DIR)")->capture_default_str();
  run_cmd->add_flag("--no-cache", no_cache, "always recompute");

  auto* report_cmd = app.add_subcommand("report", "summarize the checks of finished runs");
  std::string report_dir;
  report_cmd->add_option("dir", report_dir, "output directory of earlier runs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kError;
  }

  try {
    if (probe_cmd->parsed()) return cmd_probe(common, pa);
    if (run_cmd->parsed()) return cmd_run(common, suite, cache_dir, no_cache);
    if (report_cmd->parsed()) return cmd_report(report_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kError;
  }
  return kError;
}
