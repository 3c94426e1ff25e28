// Acceptance runner: one PASS/FAIL verdict per criterion C1-C9.
//
//   einrel_acceptance --configs configs/acceptance [--criterion N]... [--out DIR] [--threads K]
//
// Exit status: 0 all selected criteria pass, 1 a criterion fails, 2 config or runtime error.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "einrel/config.hpp"
#include "einrel/experiments.hpp"
#include "einrel/parallel.hpp"
#include "einrel/report.hpp"

namespace fs = std::filesystem;
using namespace einrel;

namespace {

struct Context {
  fs::path configs;
  std::optional<fs::path> out;
};

void line(const std::string& s) {
  std::fputs((s + "\n").c_str(), stdout);
  std::fflush(stdout);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool report_check(const std::string& where, const Check& c) {
  line("    " + std::string(c.pass ? "ok  " : "FAIL") + " " + where + " " + c.name + ": value " + num(c.value) +
       " threshold " + num(c.threshold) + (c.detail.empty() ? "" : " (" + c.detail + ")"));
  return c.pass;
}

/// Runs one suite on one config file and reports every check it produced.
bool suite(const Context& ctx, int id, const std::string& name, const std::string& file) {
  const ExperimentConfig cfg = load_config((ctx.configs / file).string());
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteResult r = run_suite(name, cfg);
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  line("  " + name + " on " + file + " (" + std::to_string(r.total_samples) + " samples, " + num(sec) + " s)");
  for (const auto& w : r.warnings) line("    warning: " + w);
  bool ok = !r.checks.empty();
  for (const auto& c : r.checks) ok = report_check(file, c) && ok;
  if (ctx.out) write_suite_outputs(*ctx.out / ("c" + std::to_string(id)) / fs::path(file).stem() / name, r, cfg);
  return ok;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

bool determinism(const Context& ctx) {
  const ExperimentConfig cfg = load_config((ctx.configs / "c9_determinism.ini").string());
  const fs::path tmp = fs::temp_directory_path() / ("einrel-acceptance-" + hex64(config_hash(cfg)));
  fs::remove_all(tmp);
  const unsigned saved = worker_count();
  for (unsigned threads : {1u, 8u}) {
    set_worker_count(threads);
    for (const char* s : {"girsanov", "moments", "regen"})
      write_suite_outputs(tmp / std::to_string(threads) / s, run_suite(s, cfg), cfg);
  }
  set_worker_count(saved);
  const auto one = csv_files(tmp / "1"), eight = csv_files(tmp / "8");
  bool ok = !one.empty() && one.size() == eight.size();
  for (const auto& [name, bytes] : one) {
    const auto it = eight.find(name);
    const bool same = it != eight.end() && it->second == bytes;
    line("    " + std::string(same ? "ok  " : "FAIL") + " threads 1 vs 8: " + name + " (" +
         std::to_string(bytes.size()) + " bytes)");
    ok = ok && same;
  }
  fs::remove_all(tmp);
  return ok;
}

// In the flat medium E[(e1 . X(t))^2] = t for every step size, so the bias b(dt)
// is zero and "b(dt/2) = b(dt)/2" is tested as E[2 f(dt/2) - f(dt)] = t.
bool weak_order(const Context& ctx) {
  const ExperimentConfig cfg = load_config((ctx.configs / "c9_weak.ini").string());
  if (cfg.env.kind != EnvironmentKind::constant || cfg.env.dimension != 1)
    throw ConfigError("env.kind", "the weak-order check expects the one-dimensional constant medium");
  const Environment<1> env = EnvironmentFamily<1>(cfg.env).draw(0);
  const double t = cfg.sim.horizon;
  const WeakOrderResult w =
      weak_order_study(env, cfg.sim, cfg.sim.dt, [](const Vec<1>& x) { return x[0] * x[0]; });
  const double k = 3.0;
  bool ok = true;
  for (std::size_t i = 0; i < 3; ++i) {
    const double b = w.levels.mean(i) - t, se = w.levels.std_error(i);
    ok = report_check("c9_weak.ini",
                      {"bias_dt/" + std::to_string(1 << i), std::abs(b) <= k * se, std::abs(b) / se, k,
                       "E[(e1 . X)^2] - t = " + num(b) + " se " + num(se)}) &&
         ok;
  }
  const double halved = w.differences.mean(3) - t, hse = w.differences.std_error(3);
  ok = report_check("c9_weak.ini", {"bias_halves_with_dt", std::abs(halved) <= k * hse, std::abs(halved) / hse, k,
                                    "b(dt/2) - b(dt)/2 = " + num(halved / 2) + " se " + num(hse / 2) +
                                        " on " + std::to_string(w.n) + " coupled paths"}) &&
       ok;
  return ok;
}

struct Criterion {
  int id;
  std::string title;
  std::function<bool(const Context&)> run;
};

std::vector<Criterion> criteria() {
  return {
      {1, "constant medium: ell/lambda = e1 and Sigma = I within 3 SE",
       [](const Context& c) { return suite(c, 1, "einstein", "c1_constant.ini"); }},
      {2, "periodic medium: Sigma within 3% and ell/lambda within 5% of the quadrature oracle",
       [](const Context& c) { return suite(c, 2, "einstein", "c2_periodic.ini"); }},
      {3, "2D random bumps: Einstein gap non-increasing and <= 15% at lambda = 0.05",
       [](const Context& c) { return suite(c, 3, "einstein", "c3_bumps.ini"); }},
      {4, "Girsanov at alpha = 1 on the three acceptance media",
       [](const Context& c) {
         bool ok = suite(c, 4, "girsanov", "c4_constant.ini");
         ok = suite(c, 4, "girsanov", "c4_periodic.ini") && ok;
         return suite(c, 4, "girsanov", "c4_bumps.ini") && ok;
       }},
      {5, "time change: KS at t*, Sigma^Y = gamma Sigma, clock bounds",
       [](const Context& c) {
         const bool ok = suite(c, 5, "timechange", "c5_periodic.ini");
         return suite(c, 5, "timechange", "c5_bumps.ini") && ok;
       }},
      {6, "exit tails: exp(-2 lambda L) in the flat medium, negative decay slopes in a random medium",
       [](const Context& c) {
         const bool ok = suite(c, 6, "exits", "c6_constant.ini");
         return suite(c, 6, "exits", "c6_bumps.ini") && ok;
       }},
      {7, "critical-scale moment bound: max/min < 10 over alpha x lambda",
       [](const Context& c) { return suite(c, 7, "moments", "c7_bumps.ini"); }},
      {8, "regeneration: K tail, increment scaling, lag-1, ratio vs direct",
       [](const Context& c) { return suite(c, 8, "regen", "c8_periodic.ini"); }},
      {9, "determinism across thread counts and weak order in dt",
       [](const Context& c) {
         const bool ok = determinism(c);
         return weak_order(c) && ok;
       }},
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"einrel acceptance criteria"};
  Context ctx;
  std::string configs, out;
  std::vector<int> selected;
  unsigned threads = 0;
  app.add_option("--configs", configs, "directory with the acceptance configs")->required();
  app.add_option("--criterion", selected, "criterion number 1-9 (repeatable; default all)")
      ->check(CLI::Range(1, 9));
  app.add_option("--out", out, "write suite outputs (CSV, SVG) under this directory");
  app.add_option("--threads", threads, "worker threads (default EINREL_THREADS or all cores)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  ctx.configs = configs;
  if (!out.empty()) ctx.out = out;
  if (threads) set_worker_count(threads);

  bool all_ok = true;
  try {
    for (const auto& c : criteria()) {
      if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
      line("C" + std::to_string(c.id) + ": " + c.title);
      const bool ok = c.run(ctx);
      line("C" + std::to_string(c.id) + " " + (ok ? "PASS" : "FAIL"));
      all_ok = all_ok && ok;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return all_ok ? 0 : 1;
}
