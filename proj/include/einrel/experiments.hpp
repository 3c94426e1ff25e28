#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "einrel/config.hpp"
#include "einrel/environment.hpp"
#include "einrel/estimators.hpp"
#include "einrel/measure_transforms.hpp"
#include "einrel/regeneration.hpp"
#include "einrel/report.hpp"
#include "einrel/sde.hpp"
#include "einrel/stats.hpp"

namespace einrel {

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"girsanov", "timechange", "exits", "moments",
                                              "regen",    "sigma",      "einstein"};
  return names;
}

/// Nearest positive multiple of dt.
inline double horizon_on_grid(double t, double dt) {
  return static_cast<double>(std::max<long long>(1, std::llround(t / dt))) * dt;
}

/// Smallest multiple of dt that is >= t.
inline double horizon_at_least(double t, double dt) {
  return std::ceil(t / dt * (1.0 - 1e-12)) * dt;
}

inline std::uint64_t sub_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t k = 0) {
  return hash_words({base, tag, k});
}

namespace detail {

enum : std::uint64_t {
  kSeedSigma = 0x51,
  kSeedVelocity = 0x52,
  kSeedRatio = 0x53,
  kSeedGirsanov = 0x54,
  kSeedTimeChange = 0x55,
  kSeedExits = 0x56,
  kSeedMoments = 0x57,
  kSeedRegen = 0x58,
  kSeedDirect = 0x59,
  kSeedGamma = 0x5A,
};

/// Simulation settings with the per-suite knobs cleared.
inline SimulationConfig plain(const SimulationConfig& s, double lambda, double horizon, std::uint64_t seed) {
  SimulationConfig c = s;
  c.lambda = lambda;
  c.horizon = horizon;
  c.alpha.reset();
  c.levels.clear();
  c.observation_times.clear();
  c.keep_stride = 0;
  c.stop_at_clock.reset();
  c.base_seed = seed;
  return c;
}

inline SimulationConfig sigma_run(const ExperimentConfig& cfg) {
  SimulationConfig c = plain(cfg.sim, 0.0, cfg.sim.horizon, sub_seed(cfg.sim.base_seed, kSeedSigma));
  if (cfg.suite.sigma_paths) c.n_paths = cfg.suite.sigma_paths;
  return c;
}

inline void note(SuiteResult& r, const std::string& what, const Estimate& e) {
  for (const auto& f : e.flags) r.warnings.push_back(what + ": " + f);
}

inline Check check(std::string name, bool pass, double value, double threshold, std::string detail = {}) {
  return {std::move(name), pass, value, threshold, std::move(detail)};
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string lam_tag(double lambda) { return "lambda=" + fmt(lambda); }

/// Sigma e1 and its componentwise standard error.
inline std::pair<std::vector<double>, std::vector<double>> sigma_times(const Estimate& sigma,
                                                                       const std::vector<double>& e1) {
  const std::size_t d = e1.size();
  std::vector<double> v(d, 0.0), se(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double s2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      v[i] += sigma.at(i, j) * e1[j];
      s2 += std::pow(sigma.se(i, j) * e1[j], 2);
    }
    se[i] = std::sqrt(s2);
  }
  return {v, se};
}

/// Exact Sigma when it is known in closed form or by quadrature.
inline std::optional<std::vector<double>> sigma_oracle(const EnvironmentSpec& spec) {
  const std::size_t d = static_cast<std::size_t>(spec.dimension);
  if (spec.kind == EnvironmentKind::constant) {
    std::vector<double> m(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
    return m;
  }
  if (spec.kind == EnvironmentKind::periodic_1d) return std::vector<double>{sigma_oracle_1d(spec)};
  return std::nullopt;
}

inline Table sigma_table(const Estimate& sigma, const std::optional<std::vector<double>>& oracle, double horizon) {
  Table t{"sigma", {"i", "j", "value", "se", "n", "t", "oracle"}, {}};
  for (std::size_t i = 0; i < sigma.rows; ++i)
    for (std::size_t j = 0; j < sigma.cols; ++j)
      t.add({std::int64_t(i + 1), std::int64_t(j + 1), sigma.at(i, j), sigma.se(i, j),
             std::int64_t(sigma.n_samples), horizon, oracle ? (*oracle)[i * sigma.cols + j] : std::nan("")});
  return t;
}

/// Checks Sigma against an oracle: within `k` SE for the constant medium,
/// within relative tolerance `rel` otherwise.
inline void sigma_checks(SuiteResult& r, const Estimate& sigma, const std::vector<double>& oracle, bool constant,
                         double k, double rel) {
  for (std::size_t i = 0; i < sigma.rows; ++i)
    for (std::size_t j = i; j < sigma.cols; ++j) {
      const double v = sigma.at(i, j), o = oracle[i * sigma.cols + j], se = sigma.se(i, j);
      const std::string name = "sigma_" + std::to_string(i + 1) + std::to_string(j + 1);
      if (constant)
        r.checks.push_back(check(name + "_within_se", within_se(v, o, se, k), std::abs(v - o) / se, k,
                                 "estimate " + fmt(v) + " oracle " + fmt(o) + " se " + fmt(se)));
      else
        r.checks.push_back(check(name + "_relative", std::abs(v - o) <= rel * std::abs(o), std::abs(v - o) / std::abs(o),
                                 rel, "estimate " + fmt(v) + " oracle " + fmt(o) + " se " + fmt(se)));
    }
}

}  // namespace detail

/// Effective diffusivity and the environment-clock factor gamma.
template <std::size_t D>
SuiteResult run_sigma(const ExperimentConfig& cfg) {
  using namespace detail;
  SuiteResult r;
  r.suite = "sigma";
  const EnvironmentFamily<D> family(cfg.env);
  const bool constant = cfg.env.kind == EnvironmentKind::constant;
  const SimulationConfig cs = sigma_run(cfg);
  const Estimate sigma = estimate_sigma(family, cs);
  note(r, "sigma", sigma);
  const auto oracle = sigma_oracle(cfg.env);
  r.tables.push_back(sigma_table(sigma, oracle, cs.horizon));
  r.checks.push_back(check("sigma_positive_definite", !sigma.has_flag("not_positive_definite"), 0, 0));
  if (oracle)
    sigma_checks(r, sigma, *oracle, constant, cfg.tolerance("sigma_se", 3.0), cfg.tolerance("sigma_rel", 0.03));

  SimulationConfig cg = cs;
  cg.base_seed = sub_seed(cfg.sim.base_seed, kSeedGamma);
  const GammaReport g = estimate_gamma(family, cg, cfg.suite.gamma_points);
  note(r, "gamma_spatial", g.spatial);
  note(r, "gamma_clock", g.clock);
  double gamma_oracle = std::nan("");
  if (constant) gamma_oracle = 1.0;
  else if (D == 1 && cfg.env.kind == EnvironmentKind::periodic_1d) gamma_oracle = gamma_oracle_1d(cfg.env);
  Table gt{"gamma", {"route", "value", "se", "n", "oracle"}, {}};
  gt.add({std::string("spatial"), g.spatial[0], g.spatial.se(0), std::int64_t(g.spatial.n_samples), gamma_oracle});
  gt.add({std::string("clock"), g.clock[0], g.clock.se(0), std::int64_t(g.clock.n_samples), gamma_oracle});
  r.tables.push_back(gt);
  const double grel = cfg.tolerance("gamma_rel", 0.02);
  if (std::isfinite(gamma_oracle)) {
    for (const auto& [route, e] : {std::pair{"spatial", &g.spatial}, std::pair{"clock", &g.clock}}) {
      const double dev = std::abs((*e)[0] - gamma_oracle) / gamma_oracle;
      r.checks.push_back(check(std::string("gamma_") + route + "_relative", dev <= grel, dev, grel,
                               "estimate " + fmt((*e)[0]) + " oracle " + fmt(gamma_oracle)));
    }
  } else {
    r.checks.push_back(check("gamma_routes_overlap", intervals_overlap(g.spatial[0], g.spatial.se(0), g.clock[0], g.clock.se(0)),
                             std::abs(g.spatial[0] - g.clock[0]) / (g.spatial.se(0) + g.clock.se(0)), 1.959963984540054,
                             "spatial " + fmt(g.spatial[0]) + " clock " + fmt(g.clock[0])));
  }
  Plot p{"gamma", "gamma by route", "route (0 spatial, 1 clock)", "gamma", false, {}, {}};
  p.series.push_back({"estimate", {0.0, 1.0}, {g.spatial[0], g.clock[0]}, {g.spatial.se(0), g.clock.se(0)}});
  if (std::isfinite(gamma_oracle)) p.hlines.emplace_back("quadrature", gamma_oracle);
  r.plots.push_back(p);
  r.total_samples = sigma.n_samples + g.spatial.n_samples + g.clock.n_samples;
  return r;
}

/// Velocity scan over the lambda grid compared with Sigma e1.
template <std::size_t D>
SuiteResult run_einstein(const ExperimentConfig& cfg) {
  using namespace detail;
  SuiteResult r;
  r.suite = "einstein";
  const EnvironmentFamily<D> family(cfg.env);
  const bool constant = cfg.env.kind == EnvironmentKind::constant;
  const bool periodic = cfg.env.kind == EnvironmentKind::periodic_1d;
  const std::vector<double>& e1 = cfg.sim.direction;

  const SimulationConfig cs = sigma_run(cfg);
  const Estimate sigma = estimate_sigma(family, cs);
  note(r, "sigma", sigma);
  r.total_samples += sigma.n_samples;
  const auto oracle = sigma_oracle(cfg.env);
  r.tables.push_back(sigma_table(sigma, oracle, cs.horizon));

  // Reference Sigma e1: the oracle when one exists, the estimate otherwise.
  auto [ref, ref_se] = sigma_times(sigma, e1);
  if (oracle) {
    Estimate o = sigma;
    o.value = *oracle;
    std::fill(o.std_error.begin(), o.std_error.end(), 0.0);
    std::tie(ref, ref_se) = sigma_times(o, e1);
  }
  double ref_norm = 0.0;
  for (double v : ref) ref_norm += v * v;
  ref_norm = std::sqrt(ref_norm);

  std::vector<double> lambdas = cfg.lambdas;
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  lambdas.erase(std::remove(lambdas.begin(), lambdas.end(), 0.0), lambdas.end());
  if (lambdas.empty()) throw ConfigError("grid.lambda", "the einstein suite needs a positive lambda");

  Table vt{"velocity", {"lambda", "component", "ell_over_lambda", "se", "n", "t", "reference", "reference_se"}, {}};
  Table gt{"gap", {"lambda", "relative_gap", "se", "n"}, {}};
  Table rt{"ratio_velocity", {"lambda", "component", "ell_over_lambda", "se", "n"}, {}};
  std::vector<double> gaps, gap_ses;
  Series scan{"direct X(t)/(lambda t)", {}, {}, {}}, ratio_series{"regeneration ratio", {}, {}, {}};
  const double kse = cfg.tolerance("velocity_se", 3.0);
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    const double lam = lambdas[k];
    const double t = horizon_on_grid(cfg.suite.direct_blocks / (lam * lam), cfg.sim.dt);
    const SimulationConfig cv = plain(cfg.sim, lam, t, sub_seed(cfg.sim.base_seed, kSeedVelocity, k));
    const Estimate v = estimate_velocity(family, cv);
    note(r, "velocity " + lam_tag(lam), v);
    r.total_samples += v.n_samples;
    double gap2 = 0.0, var = 0.0, proj = 0.0, proj_se2 = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      const double ell = v[i] / lam, se = v.se(i) / lam;
      vt.add({lam, std::int64_t(i + 1), ell, se, std::int64_t(v.n_samples), t, ref[i], ref_se[i]});
      gap2 += std::pow(ell - ref[i], 2);
      var += se * se + ref_se[i] * ref_se[i];
      proj += ell * e1[i];
      proj_se2 += std::pow(se * e1[i], 2);
      if (constant)
        r.checks.push_back(check("velocity_" + lam_tag(lam) + "_component_" + std::to_string(i + 1),
                                 within_se(ell, ref[i], se, kse), std::abs(ell - ref[i]) / se, kse,
                                 "estimate " + fmt(ell) + " reference " + fmt(ref[i]) + " se " + fmt(se)));
    }
    const double gap = std::sqrt(gap2) / ref_norm;
    gaps.push_back(gap);
    gap_ses.push_back(std::sqrt(var) / ref_norm);
    gt.add({lam, gap, gap_ses.back(), std::int64_t(v.n_samples)});
    scan.x.push_back(lam), scan.y.push_back(proj), scan.err.push_back(std::sqrt(proj_se2));

    if (cfg.suite.regeneration_in_scan) {
      SimulationConfig cr = plain(cfg.sim, lam, horizon_on_grid(cfg.suite.regen_blocks / (lam * lam), cfg.sim.dt),
                                  sub_seed(cfg.sim.base_seed, kSeedRatio, k));
      const auto seqs = simulate_regenerations(family, cr, cfg.regen);
      const bool by_env = family.is_random() && cr.n_envs >= 2;
      const Estimate ratio = ratio_velocity_estimate<D>(
          seqs, [&](const RegenerationSequence<D>& s) { return by_env ? s.env_id : s.path_id; });
      note(r, "ratio " + lam_tag(lam), ratio);
      r.total_samples += cr.n_paths * cr.n_envs;
      double rp = 0.0, rp2 = 0.0;
      for (std::size_t i = 0; i < D; ++i) {
        rt.add({lam, std::int64_t(i + 1), ratio[i] / lam, ratio.se(i) / lam, std::int64_t(ratio.n_samples)});
        rp += ratio[i] / lam * e1[i];
        rp2 += std::pow(ratio.se(i) / lam * e1[i], 2);
      }
      ratio_series.x.push_back(lam), ratio_series.y.push_back(rp), ratio_series.err.push_back(std::sqrt(rp2));
    }
  }
  r.tables.push_back(vt);
  r.tables.push_back(gt);
  if (cfg.suite.regeneration_in_scan) r.tables.push_back(rt);

  if (constant && oracle) {
    sigma_checks(r, sigma, *oracle, true, cfg.tolerance("sigma_se", 3.0), 0.0);
  } else if (periodic && oracle) {
    sigma_checks(r, sigma, *oracle, false, 0.0, cfg.tolerance("sigma_rel", 0.03));
    const double rel = cfg.tolerance("velocity_rel", 0.05);
    r.checks.push_back(check("velocity_" + lam_tag(lambdas.back()) + "_relative", gaps.back() <= rel, gaps.back(), rel,
                             "relative deviation from the oracle, se " + fmt(gap_ses.back())));
  } else {
    bool monotone = true;
    double worst = -INFINITY;
    for (std::size_t k = 1; k < gaps.size(); ++k) {
      const double slack = 1.959963984540054 * std::hypot(gap_ses[k - 1], gap_ses[k]);
      worst = std::max(worst, gaps[k] - gaps[k - 1] - slack);
      monotone = monotone && gaps[k] <= gaps[k - 1] + slack;
    }
    r.checks.push_back(check("gap_non_increasing", monotone, gaps.size() > 1 ? worst : 0.0, 0.0,
                             "largest increase beyond the 95% band"));
    const double gmax = cfg.tolerance("gap_max", 0.15);
    r.checks.push_back(check("gap_" + lam_tag(lambdas.back()), gaps.back() <= gmax, gaps.back(), gmax,
                             "se " + fmt(gap_ses.back())));
    r.checks.push_back(check("sigma_positive_definite", !sigma.has_flag("not_positive_definite"), 0, 0));
  }

  Plot p{"einstein", "Einstein relation scan", "lambda", "e1 . ell / lambda", false, {scan}, {}};
  if (cfg.suite.regeneration_in_scan) p.series.push_back(ratio_series);
  double ref_proj = 0.0;
  for (std::size_t i = 0; i < D; ++i) ref_proj += ref[i] * e1[i];
  p.hlines.emplace_back(oracle ? "e1 . Sigma e1 (oracle)" : "e1 . Sigma-hat e1", ref_proj);
  r.plots.push_back(p);
  Plot gp{"gap", "relative Einstein gap", "lambda", "|ell/lambda - Sigma e1| / |Sigma e1|", false,
          {{"gap", lambdas, gaps, gap_ses}}, {}};
  if (!constant && !periodic) gp.hlines.emplace_back("tolerance", cfg.tolerance("gap_max", 0.15));
  r.plots.push_back(gp);
  return r;
}

/// Girsanov reweighting against direct simulation at t = alpha / lambda^2.
template <std::size_t D>
SuiteResult run_girsanov(const ExperimentConfig& cfg) {
  using namespace detail;
  SuiteResult r;
  r.suite = "girsanov";
  const EnvironmentFamily<D> family(cfg.env);
  Table t{"girsanov",
          {"lambda", "alpha", "t", "mean_weight", "mean_weight_se", "second_moment", "second_moment_se", "bound",
           "effective_samples", "reweighted", "reweighted_se", "direct", "direct_se", "n"},
          {}};
  std::vector<Series> series;
  const double kse = cfg.tolerance("weight_se", 3.0);
  std::uint64_t k = 0;
  for (double lam : cfg.lambdas) {
    if (lam <= 0.0) continue;
    for (double alpha : cfg.alphas) {
      const double horizon = horizon_on_grid(alpha / (lam * lam), cfg.sim.dt);
      const SimulationConfig c = plain(cfg.sim, lam, horizon, sub_seed(cfg.sim.base_seed, kSeedGirsanov, k++));
      const GirsanovReport g = girsanov_experiment(family, c);
      const std::string tag = lam_tag(lam) + "_alpha=" + fmt(g.alpha);
      note(r, "weights " + tag, g.mean_weight);
      note(r, "reweighted " + tag, g.reweighted);
      note(r, "direct " + tag, g.direct);
      r.total_samples += 2 * g.mean_weight.n_samples;
      t.add({lam, g.alpha, horizon, g.mean_weight[0], g.mean_weight.se(0), g.weight_second_moment[0],
             g.weight_second_moment.se(0), g.second_moment_bound, g.effective_samples, g.reweighted[0],
             g.reweighted.se(0), g.direct[0], g.direct.se(0), std::int64_t(g.mean_weight.n_samples)});
      const double mw = g.mean_weight[0], mse = g.mean_weight.se(0);
      r.checks.push_back(check("mean_weight_" + tag, within_se(mw, 1.0, mse, kse), std::abs(mw - 1.0) / mse, kse,
                               "mean " + fmt(mw) + " se " + fmt(mse)));
      const double w2 = g.weight_second_moment[0], w2se = g.weight_second_moment.se(0);
      r.checks.push_back(check("second_moment_" + tag, w2 - kse * w2se <= g.second_moment_bound, w2,
                               g.second_moment_bound, "se " + fmt(w2se) + "; passes when within " + fmt(kse) +
                                                          " SE of the bound or below"));
      const bool overlap = intervals_overlap(g.reweighted[0], g.reweighted.se(0), g.direct[0], g.direct.se(0));
      r.checks.push_back(check("reweighted_vs_direct_" + tag, overlap,
                               std::abs(g.reweighted[0] - g.direct[0]) / (g.reweighted.se(0) + g.direct.se(0)),
                               1.959963984540054,
                               "reweighted " + fmt(g.reweighted[0]) + " direct " + fmt(g.direct[0])));
      if (series.size() < 2) series.resize(2);
      series[0].label = "reweighted", series[1].label = "direct";
      series[0].x.push_back(lam), series[0].y.push_back(g.reweighted[0]), series[0].err.push_back(g.reweighted.se(0));
      series[1].x.push_back(lam), series[1].y.push_back(g.direct[0]), series[1].err.push_back(g.direct.se(0));
    }
  }
  if (t.rows.empty()) throw ConfigError("grid.lambda", "the girsanov suite needs a positive lambda");
  r.tables.push_back(t);
  r.plots.push_back({"girsanov", "reweighted vs direct drift", "lambda", "E[e1 . X(t) / (lambda t)]", false, series, {}});
  return r;
}

/// Time-changed process: KS comparison at t*, clock bounds and Sigma^Y = gamma Sigma.
template <std::size_t D>
SuiteResult run_timechange(const ExperimentConfig& cfg) {
  using namespace detail;
  SuiteResult r;
  r.suite = "timechange";
  const EnvironmentFamily<D> family(cfg.env);
  if (cfg.suite.repetitions > 0) {
    const auto env = family.draw(0);
    const double t_star = cfg.suite.t_star;
    const double horizon = horizon_at_least(t_star * std::exp(2.0 * env.potential_bound()), cfg.sim.dt) + cfg.sim.dt;
    SimulationConfig c = plain(cfg.sim, cfg.sim.lambda, horizon, sub_seed(cfg.sim.base_seed, kSeedTimeChange));
    c.n_envs = 1;
    const auto reps = time_change_equivalence_test(env, c, t_star, static_cast<int>(cfg.suite.repetitions));
    Table t{"ks",
            {"repetition", "statistic", "p_value", "n", "mean_x", "se_x", "mean_y", "se_y", "clock_rate",
             "clock_rate_se", "clock_violations"},
            {}};
    std::uint64_t passes = 0, violations = 0;
    Series ps{"KS p-value", {}, {}, {}};
    for (std::size_t i = 0; i < reps.size(); ++i) {
      const auto& rep = reps[i];
      t.add({std::int64_t(i + 1), rep.ks.statistic, rep.ks.p_value, std::int64_t(rep.n), rep.mean_x, rep.se_x,
             rep.mean_y, rep.se_y, rep.clock_rate, rep.clock_rate_se, std::int64_t(rep.clock_violations)});
      passes += rep.ks.p_value > cfg.tolerance("ks_p", 0.01);
      violations += rep.clock_violations;
      ps.x.push_back(static_cast<double>(i + 1)), ps.y.push_back(rep.ks.p_value);
      r.total_samples += 2 * rep.n;
    }
    r.tables.push_back(t);
    const double need = cfg.tolerance("ks_min_pass", std::ceil(0.8 * static_cast<double>(reps.size())));
    r.checks.push_back(check("ks_repetitions_passing", static_cast<double>(passes) >= need, static_cast<double>(passes),
                             need, "repetitions with p > " + fmt(cfg.tolerance("ks_p", 0.01))));
    r.checks.push_back(check("clock_bounds_ks_paths", violations == 0, static_cast<double>(violations), 0.0,
                             "paths with A(s)/s outside [exp(-2v), exp(2v)]"));
    r.plots.push_back({"ks", "KS p-values at t*", "repetition", "p-value", true, {ps},
                       {{"threshold", cfg.tolerance("ks_p", 0.01)}}});
  }
  if (cfg.suite.identity_check) {
    const SimulationConfig c0 = sigma_run(cfg);
    const SigmaGammaReport rep = sigma_gamma_identity_check(family, c0);
    note(r, "sigma", rep.sigma);
    note(r, "sigma_y", rep.sigma_y);
    r.total_samples += rep.sigma.n_samples + rep.sigma_y.n_samples;
    Table t{"identity",
            {"i", "j", "sigma", "sigma_se", "sigma_y", "sigma_y_se", "gamma", "gamma_se", "relative_deviation",
             "relative_se", "n"},
            {}};
    Series sx{"Sigma^Y", {}, {}, {}}, sg{"gamma Sigma", {}, {}, {}};
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) {
        const std::size_t idx = i * D + j;
        t.add({std::int64_t(i + 1), std::int64_t(j + 1), rep.sigma.at(i, j), rep.sigma.se(i, j), rep.sigma_y.at(i, j),
               rep.sigma_y.se(i, j), rep.gamma[0], rep.gamma.se(0), rep.relative_deviation[idx], rep.relative_se[idx],
               std::int64_t(rep.sigma.n_samples)});
        sx.x.push_back(static_cast<double>(idx)), sx.y.push_back(rep.sigma_y.at(i, j)), sx.err.push_back(rep.sigma_y.se(i, j));
        sg.x.push_back(static_cast<double>(idx)), sg.y.push_back(rep.gamma[0] * rep.sigma.at(i, j));
      }
    r.tables.push_back(t);
    const double tol = cfg.tolerance("identity_rel", 0.10);
    r.checks.push_back(check("sigma_y_equals_gamma_sigma", rep.max_deviation() <= tol, rep.max_deviation(), tol,
                             "largest entry deviation relative to gamma sqrt(Sigma_ii Sigma_jj)"));
    r.checks.push_back(check("clock_bounds_identity_paths", rep.clock_violations == 0,
                             static_cast<double>(rep.clock_violations), 0.0,
                             "paths with A(t)/t outside [exp(-2v), exp(2v)]"));
    r.plots.push_back({"identity", "Sigma^Y against gamma Sigma", "entry (row-major)", "value", false, {sx, sg}, {}});
  }
  if (r.checks.empty())
    throw ConfigError("suite.repetitions", "nothing to run: repetitions = 0 and identity_check = false");
  return r;
}

/// Exit probabilities and tail fits.
template <std::size_t D>
SuiteResult run_exits(const ExperimentConfig& cfg) {
  using namespace detail;
  SuiteResult r;
  r.suite = "exits";
  const EnvironmentFamily<D> family(cfg.env);
  const bool constant = cfg.env.kind == EnvironmentKind::constant;
  ExitTailSpec spec;
  spec.lambdas = cfg.lambdas;
  spec.levels = cfg.levels;
  spec.times = cfg.times;
  const double lmin = *std::min_element(cfg.lambdas.begin(), cfg.lambdas.end());
  if (!(lmin > 0.0)) throw ConfigError("grid.lambda", "the exits suite needs positive lambdas");
  spec.horizon = horizon_on_grid(cfg.suite.exit_horizon > 0.0 ? cfg.suite.exit_horizon : 20.0 / (lmin * lmin),
                                 cfg.sim.dt);
  if (spec.levels.empty()) throw ConfigError("grid.levels", "the exits suite needs levels");
  SimulationConfig base = plain(cfg.sim, 0.0, spec.horizon, sub_seed(cfg.sim.base_seed, kSeedExits));
  const ExitReport rep = exit_tail_experiments(family, base, spec);

  std::size_t left_rows = 0;
  for (const auto& row : rep.rows) left_rows += row.kind == "left" && row.level > 0.0;
  // Family-wise 95% coverage over all compared rows.
  const double z = left_rows ? normal_quantile(1.0 - 0.025 / static_cast<double>(left_rows)) : 1.96;

  Table t{"exits",
          {"kind", "lambda", "level", "time", "hits", "n", "prob", "se", "ci_lo", "ci_hi", "closed_form",
           "closed_form_infinite"},
          {}};
  std::map<double, Series> left_series;
  for (const auto& row : rep.rows) {
    const double se = std::sqrt(row.prob * (1.0 - row.prob) / static_cast<double>(row.n));
    const double inf_form = constant && row.kind == "left" ? std::exp(-2.0 * row.lambda * row.level) : std::nan("");
    t.add({row.kind, row.lambda, row.level, row.time, std::int64_t(row.hits), std::int64_t(row.n), row.prob, se,
           row.ci.lo, row.ci.hi, row.closed_form, inf_form});
    if (row.kind == "left" && row.level > 0.0) {
      auto& s = left_series[row.lambda];
      s.label = lam_tag(row.lambda);
      s.x.push_back(row.lambda * row.level), s.y.push_back(row.prob), s.err.push_back(se);
      if (constant) {
        const Interval ci = wilson_interval(row.hits, row.n, z);
        r.checks.push_back(check("left_exit_" + lam_tag(row.lambda) + "_L=" + fmt(row.level), ci.contains(inf_form),
                                 row.prob, inf_form,
                                 "interval [" + fmt(ci.lo) + ", " + fmt(ci.hi) + "] at z " + fmt(z)));
      }
    }
  }
  r.total_samples = base.n_paths * base.n_envs * spec.lambdas.size();
  r.tables.push_back(t);
  Table ft{"exit_fits", {"kind", "lambda", "level", "slope", "slope_se", "intercept", "points", "negative"}, {}};
  std::size_t left_fits = 0, right_fits = 0, left_neg = 0, right_neg = 0;
  for (const auto& f : rep.fits) {
    ft.add({f.kind, f.lambda, f.level, f.fit.slope, f.fit.slope_se, f.fit.intercept, std::int64_t(f.points),
            std::int64_t(f.negative)});
    (f.kind == "left" ? left_fits : right_fits) += 1;
    (f.kind == "left" ? left_neg : right_neg) += f.negative;
  }
  r.tables.push_back(ft);
  if (!constant) {
    r.checks.push_back(check("left_decay_negative", left_fits > 0 && left_neg == left_fits,
                             static_cast<double>(left_neg), static_cast<double>(left_fits),
                             "fits of log P[T_-L < horizon] vs lambda L with slope + 1.96 SE < 0"));
    r.checks.push_back(check("right_decay_negative", right_fits > 0 && right_neg == right_fits,
                             static_cast<double>(right_neg), static_cast<double>(right_fits),
                             "fits of log P[T_L >= t] vs lambda^2 t with slope + 1.96 SE < 0"));
  }
  Plot p{"exits_left", "left exit probability", "lambda L", "P[T_-L < horizon]", true, {}, {}};
  for (auto& [lam, s] : left_series) p.series.push_back(s);
  if (constant) {
    Series cf{"exp(-2 lambda L)", {}, {}, {}};
    std::vector<double> xs;
    for (const auto& [lam, s] : left_series) xs.insert(xs.end(), s.x.begin(), s.x.end());
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    for (double x : xs) cf.x.push_back(x), cf.y.push_back(std::exp(-2.0 * x));
    p.series.push_back(cf);
  }
  r.plots.push_back(p);
  return r;
}

/// Running-maximum moments on the critical scale.
template <std::size_t D>
SuiteResult run_moments(const ExperimentConfig& cfg) {
  using namespace detail;
  SuiteResult r;
  r.suite = "moments";
  const EnvironmentFamily<D> family(cfg.env);
  const SimulationConfig base = plain(cfg.sim, 0.0, cfg.sim.horizon, sub_seed(cfg.sim.base_seed, kSeedMoments));
  const MomentReport rep = moment_bound_experiment(family, base, cfg.lambdas, cfg.alphas, cfg.powers);
  Table t{"moments", {"lambda", "alpha", "power", "statistic", "se", "n"}, {}};
  std::map<double, Series> by_lambda;
  for (const auto& row : rep.rows) {
    note(r, "moment " + lam_tag(row.lambda), row.statistic);
    t.add({row.lambda, row.alpha, std::int64_t(row.power), row.statistic[0], row.statistic.se(0),
           std::int64_t(row.statistic.n_samples)});
    if (row.power == cfg.powers.front()) {
      auto& s = by_lambda[row.lambda];
      s.label = lam_tag(row.lambda);
      s.x.push_back(row.alpha), s.y.push_back(row.statistic[0]), s.err.push_back(row.statistic.se(0));
    }
  }
  r.tables.push_back(t);
  Table st{"moment_spread", {"power", "max_over_min", "n"}, {}};
  const double lim = cfg.tolerance("moment_spread", 10.0);
  for (const auto& [p, spread] : rep.spread) {
    st.add({std::int64_t(p), spread, std::int64_t(rep.rows.front().statistic.n_samples)});
    r.checks.push_back(check("moment_spread_p=" + std::to_string(p), spread < lim, spread, lim,
                             "max/min over the lambda x alpha grid"));
  }
  r.tables.push_back(st);
  r.total_samples = rep.rows.front().statistic.n_samples * cfg.lambdas.size();
  Plot p{"moments", "critical-scale running maximum", "alpha",
         "E[max|X|^" + std::to_string(cfg.powers.front()) + "] / (lambda t)^" + std::to_string(cfg.powers.front()),
         false, {}, {}};
  for (auto& [lam, s] : by_lambda) p.series.push_back(s);
  r.plots.push_back(p);
  return r;
}

/// Regeneration structure and the ratio velocity estimator.
template <std::size_t D>
SuiteResult run_regen(const ExperimentConfig& cfg) {
  using namespace detail;
  SuiteResult r;
  r.suite = "regen";
  const EnvironmentFamily<D> family(cfg.env);
  Table st{"regen_summary",
           {"lambda", "paths", "censored_paths", "short_paths", "increments_per_path", "increments", "mean_increment", "mean_increment_se",
            "second_increment", "second_increment_se", "displacement_sq", "displacement_sq_se", "lag1", "lag1_se",
            "tail_slope", "tail_slope_se", "first_success", "late_backtracks", "confinement_violations", "n"},
           {}};
  Table kt{"regen_k_tail", {"lambda", "k", "count", "n", "prob", "ci_lo", "ci_hi", "bound"}, {}};
  Table tt{"regen_tail", {"lambda", "t", "count", "n", "prob", "ci_lo", "ci_hi"}, {}};
  Table vt{"regen_velocity", {"lambda", "component", "ratio", "ratio_se", "n_ratio", "direct", "direct_se", "n_direct"}, {}};
  std::vector<double> means;
  Plot kp{"regen_k_tail", "attempts per regeneration", "k", "P[K >= k]", true, {}, {}};
  Series bound{"2^(1-k)", {}, {}, {}};
  for (std::uint64_t k = 1; k <= 6; ++k) bound.x.push_back(double(k)), bound.y.push_back(std::pow(2.0, 1.0 - double(k)));
  const double kse = cfg.tolerance("lag1_se", 3.0);
  std::uint64_t idx = 0;
  for (double lam : cfg.lambdas) {
    if (lam <= 0.0) continue;
    const std::string tag = lam_tag(lam);
    const SimulationConfig c = plain(cfg.sim, lam, horizon_on_grid(cfg.suite.regen_blocks / (lam * lam), cfg.sim.dt),
                                     sub_seed(cfg.sim.base_seed, kSeedRegen, idx));
    const auto seqs = simulate_regenerations(family, c, cfg.regen);
    const RegenerationSummary s = regeneration_statistics<D>(seqs, lam);
    for (const auto& f : s.flags) r.warnings.push_back("regeneration " + tag + ": " + f);
    const bool by_env = family.is_random() && c.n_envs >= 2;
    const Estimate ratio =
        ratio_velocity_estimate<D>(seqs, [&](const RegenerationSequence<D>& q) { return by_env ? q.env_id : q.path_id; });
    note(r, "ratio " + tag, ratio);
    const SimulationConfig cd = plain(cfg.sim, lam, horizon_on_grid(cfg.suite.direct_blocks / (lam * lam), cfg.sim.dt),
                                      sub_seed(cfg.sim.base_seed, kSeedDirect, idx));
    const Estimate direct = estimate_velocity(family, cd);
    note(r, "direct " + tag, direct);
    ++idx;
    r.total_samples += c.n_paths * c.n_envs + cd.n_paths * cd.n_envs;

    st.add({lam, std::int64_t(s.paths), std::int64_t(s.censored_paths), std::int64_t(s.short_paths),
            std::int64_t(s.increments_per_path), std::int64_t(s.increments), s.mean_increment[0],
            s.mean_increment.se(0), s.second_increment[0], s.second_increment.se(0), s.displacement_sq[0],
            s.displacement_sq.se(0), s.lag1.value, s.lag1.std_error, s.tail_fit.slope, s.tail_fit.slope_se,
            s.first_success, std::int64_t(s.late_backtracks), std::int64_t(s.confinement_violations),
            std::int64_t(s.increments)});
    means.push_back(s.mean_increment[0]);
    Series ks{tag, {}, {}, {}};
    bool k_ok = !s.k_tail.empty();
    for (const auto& p : s.k_tail) {
      const double prob = p.n ? double(p.count) / double(p.n) : std::nan("");
      kt.add({lam, std::int64_t(p.k), std::int64_t(p.count), std::int64_t(p.n), prob, p.ci.lo, p.ci.hi, p.bound});
      k_ok = k_ok && p.ci.lo <= p.bound;
      if (p.count > 0) ks.x.push_back(double(p.k)), ks.y.push_back(prob);
    }
    kp.series.push_back(ks);
    r.checks.push_back(check("k_tail_" + tag, k_ok, s.k_tail.empty() ? 0.0 : double(s.k_tail.size()), 6.0,
                             "P[K >= k] Wilson lower bound (z = 3) at or below 2^(1-k) for every k"));
    for (const auto& p : s.tail)
      tt.add({lam, p.t, std::int64_t(p.count), std::int64_t(p.n), p.n ? double(p.count) / double(p.n) : std::nan(""),
              p.ci.lo, p.ci.hi});
    const bool lag_ok = s.lag1.n > 2 && std::abs(s.lag1.value) <= kse * s.lag1.std_error;
    r.checks.push_back(check("lag1_" + tag, lag_ok, s.lag1.std_error > 0 ? std::abs(s.lag1.value) / s.lag1.std_error : 0.0,
                             kse, "lag-1 autocorrelation " + fmt(s.lag1.value) + " from " + std::to_string(s.lag1.n) + " pairs"));
    for (std::size_t i = 0; i < D; ++i) {
      vt.add({lam, std::int64_t(i + 1), ratio[i], ratio.se(i), std::int64_t(ratio.n_samples), direct[i], direct.se(i),
              std::int64_t(direct.n_samples)});
      const bool overlap = intervals_overlap(ratio[i], ratio.se(i), direct[i], direct.se(i));
      r.checks.push_back(check("ratio_vs_direct_" + tag + "_component_" + std::to_string(i + 1), overlap,
                               std::abs(ratio[i] - direct[i]) / (ratio.se(i) + direct.se(i)), 1.959963984540054,
                               "ratio " + fmt(ratio[i]) + " direct " + fmt(direct[i])));
    }
  }
  if (means.empty()) throw ConfigError("grid.lambda", "the regen suite needs a positive lambda");
  if (means.size() > 1) {
    const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
    const double variation = *hi / *lo - 1.0;
    const double lim = cfg.tolerance("regen_variation", 0.25);
    r.checks.push_back(check("mean_increment_variation", variation < lim, variation, lim,
                             "max/min - 1 of lambda^2 E[tau_2 - tau_1] over the grid"));
  }
  kp.series.push_back(bound);
  r.tables.push_back(st);
  r.tables.push_back(kt);
  r.tables.push_back(tt);
  r.tables.push_back(vt);
  r.plots.push_back(kp);
  return r;
}

template <std::size_t D>
SuiteResult run_suite_in(const std::string& suite, const ExperimentConfig& cfg) {
  validate(cfg);
  if (static_cast<std::size_t>(cfg.env.dimension) != D) throw ConfigError("env.dimension", "dimension mismatch");
  SuiteResult r;
  if (suite == "sigma") r = run_sigma<D>(cfg);
  else if (suite == "einstein") r = run_einstein<D>(cfg);
  else if (suite == "girsanov") r = run_girsanov<D>(cfg);
  else if (suite == "timechange") r = run_timechange<D>(cfg);
  else if (suite == "exits") r = run_exits<D>(cfg);
  else if (suite == "moments") r = run_moments<D>(cfg);
  else if (suite == "regen") r = run_regen<D>(cfg);
  else throw ConfigError("suite", "unknown suite '" + suite + "'");
  r.config_hash = config_hash(cfg);
  std::sort(r.warnings.begin(), r.warnings.end());
  r.warnings.erase(std::unique(r.warnings.begin(), r.warnings.end()), r.warnings.end());
  return r;
}

/// Runs a suite in the configured dimension (1 to 3).
inline SuiteResult run_suite(const std::string& suite, const ExperimentConfig& cfg) {
  switch (cfg.env.dimension) {
    case 1: return run_suite_in<1>(suite, cfg);
    case 2: return run_suite_in<2>(suite, cfg);
    case 3: return run_suite_in<3>(suite, cfg);
    default: throw ConfigError("env.dimension", "supported dimensions are 1 to 3");
  }
}

struct WeakOrderResult {
  double dt = 0.0;            // coarsest step; the others are dt/2 and dt/4
  std::uint64_t n = 0;
  MeanAccumulator levels;     // f at dt, dt/2, dt/4 on coupled paths
  // f(dt) - f(dt/2), f(dt/2) - f(dt/4), f(dt) - 3 f(dt/2) + 2 f(dt/4), 2 f(dt/2) - f(dt)
  MeanAccumulator differences;
};

/// Runs unperturbed paths in one environment at dt, dt/2 and dt/4 driven by
/// the same Brownian path and records f(X(horizon)).
template <std::size_t D, typename Fn>
WeakOrderResult weak_order_study(const Environment<D>& env, SimulationConfig cfg, double dt, Fn f) {
  WeakOrderResult out;
  out.dt = dt;
  out.n = cfg.n_paths;
  std::vector<std::vector<double>> vals(3);
  for (int k = 0; k < 3; ++k) {
    SimulationConfig c = cfg;
    c.dt = dt / double(1 << k);
    c.brownian_refinement = 1u << (2 - k);
    c.lambda = 0.0;
    c.alpha.reset();
    validate(c, static_cast<int>(D));
    vals[k] = parallel_map(cfg.n_paths, [&](std::size_t p) { return f(simulate_path(env, c, p, 0, false).endpoint); });
  }
  out.levels = MeanAccumulator(3);
  out.differences = MeanAccumulator(4);
  for (std::size_t p = 0; p < cfg.n_paths; ++p) {
    const double a = vals[0][p], b = vals[1][p], c = vals[2][p];
    const double lv[3] = {a, b, c};
    const double df[4] = {a - b, b - c, a - 3.0 * b + 2.0 * c, 2.0 * b - a};
    out.levels.add(lv);
    out.differences.add(df);
  }
  return out;
}

}  // namespace einrel
