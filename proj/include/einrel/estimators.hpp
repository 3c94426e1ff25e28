#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "einrel/environment.hpp"
#include "einrel/estimate.hpp"
#include "einrel/sde.hpp"
#include "einrel/stats.hpp"

namespace einrel {

namespace detail {

inline std::uint64_t group_of(bool random_env, const SimulationConfig& cfg, std::uint64_t env_id,
                              std::uint64_t path_id) {
  return GroupedSamples::group_key(random_env, cfg.n_envs, env_id, cfg.n_paths, path_id);
}

struct Tagged {
  std::uint64_t group = 0;
  bool ok = true;
  std::vector<double> values;
};

inline void flag_common(Estimate& e, bool random_env, const SimulationConfig& cfg, std::size_t failures) {
  if (random_env && cfg.n_envs < 10) e.flag("few_envs");
  if (failures) e.flag("path_failures");
}

}  // namespace detail

/// Cholesky test for a symmetric row-major n x n matrix.
inline bool positive_definite(std::span<const double> m, std::size_t n) {
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0)) return false;
    l[j * n + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / l[j * n + j];
    }
  }
  return true;
}

template <std::size_t D>
std::vector<double> endpoint_products(const Vec<D>& x, double t) {
  std::vector<double> v;
  v.reserve(D * (D + 1) / 2);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = i; j < D; ++j) v.push_back(x[i] * x[j] / t);
  return v;
}

/// Sigma-hat_ij = annealed mean of X_i(t) X_j(t) / t from sampled endpoints.
inline Estimate sigma_from_samples(const GroupedSamples& g, std::size_t d, bool random_env,
                                   const SimulationConfig& cfg, std::size_t failures) {
  Estimate e = g.apply([d](std::span<const double> m) {
    std::vector<double> out(d * d);
    std::size_t k = 0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j, ++k) out[i * d + j] = out[j * d + i] = m[k];
    return out;
  });
  e.rows = e.cols = d;
  detail::flag_common(e, random_env, cfg, failures);
  if (cfg.horizon < 100.0) e.flag("short_time");
  if (!positive_definite(e.value, d)) e.flag("not_positive_definite");
  return e;
}

/// Effective diffusivity from unperturbed endpoints at t = cfg.horizon.
template <std::size_t D>
Estimate estimate_sigma(const EnvironmentFamily<D>& family, const SimulationConfig& cfg, bool time_changed = false) {
  if (cfg.lambda != 0.0) throw ConfigError("sim.lambda", "estimate_sigma requires lambda = 0");
  const bool rnd = family.is_random();
  const auto samples = simulate_ensemble(family, cfg, false, time_changed, [&](const PathRecord<D>& r) {
    return detail::Tagged{detail::group_of(rnd, cfg, r.env_id, r.path_id), r.ok(), endpoint_products(r.endpoint, r.time)};
  });
  GroupedSamples g(D * (D + 1) / 2);
  std::size_t failures = 0;
  for (const auto& s : samples) s.ok ? g.add(s.group, s.values) : void(++failures);
  return sigma_from_samples(g, D, rnd, cfg, failures);
}

/// (int_0^P e^{2V}/a * int_0^P e^{-2V})^{-1} with both integrals normalized by
/// the period P; the homogenized coefficient of a 1D periodic medium.
inline double sigma_oracle_1d(const std::function<double(double)>& V, const std::function<double(double)>& a,
                              double period) {
  using boost::math::quadrature::gauss_kronrod;
  const double tol = 1e-12;
  const double i1 = gauss_kronrod<double, 61>::integrate([&](double x) { return std::exp(2.0 * V(x)) / a(x); }, 0.0,
                                                         period, 15, tol) / period;
  const double i2 =
      gauss_kronrod<double, 61>::integrate([&](double x) { return std::exp(-2.0 * V(x)); }, 0.0, period, 15, tol) /
      period;
  return 1.0 / (i1 * i2);
}

inline double sigma_oracle_1d(const EnvironmentSpec& spec) {
  if (spec.dimension != 1) throw ConfigError("env.dimension", "the 1D oracle needs dimension 1");
  if (spec.kind == EnvironmentKind::random_bumps) throw ConfigError("env.kind", "the 1D oracle needs a periodic medium");
  const Environment<1> env(spec);
  return sigma_oracle_1d([&](double x) { return env.potential({x}); }, [&](double x) { return env.diffusion({x}); },
                         spec.cell_size);
}

/// Period average of e^{-2V}.
inline double gamma_oracle_1d(const EnvironmentSpec& spec) {
  if (spec.dimension != 1 || spec.kind == EnvironmentKind::random_bumps)
    throw ConfigError("env.kind", "the 1D oracle needs a periodic 1D medium");
  const Environment<1> env(spec);
  using boost::math::quadrature::gauss_kronrod;
  return gauss_kronrod<double, 61>::integrate([&](double x) { return std::exp(-2.0 * env.potential({x})); }, 0.0,
                                              spec.cell_size, 15, 1e-12) /
         spec.cell_size;
}

/// Effective drift: annealed mean of X(t)/t on perturbed paths.
template <std::size_t D>
Estimate estimate_velocity(const EnvironmentFamily<D>& family, const SimulationConfig& cfg) {
  if (!(cfg.lambda > 0.0)) throw ConfigError("sim.lambda", "estimate_velocity requires lambda > 0");
  const bool rnd = family.is_random();
  const auto samples = simulate_ensemble(family, cfg, true, false, [&](const PathRecord<D>& r) {
    std::vector<double> v(D);
    for (std::size_t i = 0; i < D; ++i) v[i] = r.endpoint[i] / r.time;
    return detail::Tagged{detail::group_of(rnd, cfg, r.env_id, r.path_id), r.ok(), v};
  });
  GroupedSamples g(D);
  std::size_t failures = 0;
  for (const auto& s : samples) s.ok ? g.add(s.group, s.values) : void(++failures);
  Estimate e = g.mean();
  detail::flag_common(e, rnd, cfg, failures);
  if (cfg.horizon * cfg.lambda * cfg.lambda < 20.0 * (1.0 - 1e-12)) e.flag("short_time");
  return e;
}

struct CriticalScaleResult {
  double alpha = 0.0;
  double lambda = 0.0;
  Estimate mean;           // E[X(t) / (lambda t)]
  Estimate second_moment;  // E[max_{s<=t} |X(s)|^2] / (lambda t)^2
};

/// Critical-scale statistics at t = alpha / lambda^2 for every alpha, read
/// from checkpoints of one perturbed run (horizon >= max alpha / lambda^2).
template <std::size_t D>
std::vector<CriticalScaleResult> critical_scale_means(const EnvironmentFamily<D>& family, const SimulationConfig& cfg,
                                                      std::span<const double> alphas) {
  const double lam = cfg.lambda;
  if (!(lam > 0.0)) throw ConfigError("sim.lambda", "critical-scale statistics need lambda > 0");
  SimulationConfig c = cfg;
  c.observation_times.clear();
  for (double a : alphas) {
    if (!(a >= 1.0)) throw ConfigError("grid.alpha", "alpha must be >= 1");
    c.observation_times.push_back(a / (lam * lam));
  }
  const bool rnd = family.is_random();
  const auto samples = simulate_ensemble(family, c, true, false, [&](const PathRecord<D>& r) {
    std::vector<double> v;
    for (const auto& cp : r.checkpoints) {
      const double scale = lam * cp.time;
      for (std::size_t i = 0; i < D; ++i) v.push_back(cp.x[i] / scale);
      v.push_back(cp.max_abs * cp.max_abs / (scale * scale));
    }
    return detail::Tagged{detail::group_of(rnd, c, r.env_id, r.path_id), r.ok(), v};
  });
  const std::size_t width = alphas.size() * (D + 1);
  GroupedSamples g(width);
  std::size_t failures = 0;
  for (const auto& s : samples) s.ok ? g.add(s.group, s.values) : void(++failures);
  const Estimate all = g.mean();
  std::vector<CriticalScaleResult> out;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    CriticalScaleResult r;
    r.alpha = alphas[k];
    r.lambda = lam;
    r.mean.rows = D;
    r.mean.n_samples = r.second_moment.n_samples = all.n_samples;
    for (std::size_t i = 0; i < D; ++i) {
      r.mean.value.push_back(all.value[k * (D + 1) + i]);
      r.mean.std_error.push_back(all.std_error[k * (D + 1) + i]);
    }
    r.second_moment.value = {all.value[k * (D + 1) + D]};
    r.second_moment.std_error = {all.std_error[k * (D + 1) + D]};
    detail::flag_common(r.mean, rnd, c, failures);
    detail::flag_common(r.second_moment, rnd, c, failures);
    out.push_back(std::move(r));
  }
  return out;
}

template <std::size_t D>
CriticalScaleResult critical_scale_mean(const EnvironmentFamily<D>& family, const SimulationConfig& cfg, double alpha) {
  SimulationConfig c = cfg;
  c.horizon = alpha / (cfg.lambda * cfg.lambda);
  c.alpha = alpha;
  const double a[] = {alpha};
  return critical_scale_means(family, c, a).front();
}

/// Closed forms for Brownian motion with unit variance and drift mu.
inline double bm_hit_below_by(double L, double mu, double t) {  // P[min_{s<=t} W_s + mu s <= -L]
  if (L <= 0.0) return 1.0;
  const double st = std::sqrt(t);
  return normal_cdf((-L - mu * t) / st) + std::exp(-2.0 * mu * L) * normal_cdf((-L + mu * t) / st);
}

inline double bm_not_hit_above_by(double L, double mu, double t) {  // P[T_L >= t] = P[max_{s<=t} W_s + mu s < L]
  if (L <= 0.0) return 0.0;
  const double st = std::sqrt(t);
  return normal_cdf((L - mu * t) / st) - std::exp(2.0 * mu * L) * normal_cdf((-L - mu * t) / st);
}

/// P[max_{s<=t} (W_s + mu s) >= m].
inline double bm_running_max_survival(double m, double mu, double t) {
  if (m <= 0.0) return 1.0;
  const double st = std::sqrt(t);
  return normal_cdf((-m + mu * t) / st) + std::exp(2.0 * mu * m) * normal_cdf((-m - mu * t) / st);
}

struct ExitTailSpec {
  std::vector<double> lambdas;
  std::vector<double> levels;  // L > 0: left exits at -L, right exits at +L
  std::vector<double> times;   // right-tail evaluation times, each <= horizon
  double horizon = 0.0;        // stands in for "T < infinity"
};

struct ExitRow {
  std::string kind;  // "left": P[T_{-L} <= horizon]; "right": P[T_L >= t]
  double lambda = 0.0;
  double level = 0.0;
  double time = 0.0;
  std::uint64_t hits = 0;
  std::uint64_t n = 0;
  double prob = 0.0;
  Interval ci;
  double closed_form = std::nan("");  // Brownian value when the medium is constant
};

struct ExitFit {
  std::string kind;  // "left": log P vs lambda L; "right": log P vs lambda^2 t
  double lambda = 0.0;
  double level = 0.0;
  LinearFit fit;
  std::size_t points = 0;
  bool negative = false;  // slope + 1.96 SE < 0
};

struct ExitReport {
  std::vector<ExitRow> rows;
  std::vector<ExitFit> fits;
};

namespace detail {

inline std::optional<ExitFit> fit_log_probability(const std::vector<const ExitRow*>& rows, bool left) {
  std::vector<double> x, y, w;
  for (const ExitRow* r : rows) {
    if (r->hits == 0 || r->hits == r->n) continue;
    const double p = r->prob;
    x.push_back(left ? r->lambda * r->level : r->lambda * r->lambda * r->time);
    y.push_back(std::log(p));
    w.push_back(static_cast<double>(r->n) * p / (1.0 - p));
  }
  if (x.size() < 2) return std::nullopt;
  ExitFit f;
  f.kind = left ? "left" : "right";
  f.lambda = rows.front()->lambda;
  f.level = left ? 0.0 : rows.front()->level;
  f.fit = linear_fit(x, y, w);
  f.points = x.size();
  f.negative = f.fit.slope + 1.959963984540054 * f.fit.slope_se < 0.0;
  return f;
}

}  // namespace detail

/// Empirical left-exit and right-tail probabilities with Wilson intervals and
/// weighted log-linear decay fits. Zero or full counts are reported as rows
/// (their interval is one-sided) and left out of the fits.
template <std::size_t D>
ExitReport exit_tail_experiments(const EnvironmentFamily<D>& family, const SimulationConfig& base,
                                 const ExitTailSpec& spec) {
  if (spec.lambdas.empty() || spec.levels.empty()) throw ConfigError("grid", "exit grids must be non-empty");
  for (double t : spec.times)
    if (!(t > 0.0 && t <= spec.horizon)) throw ConfigError("grid.times", "exit times must lie in (0, horizon]");
  ExitReport rep;
  for (double lam : spec.lambdas) {
    for (double L : spec.levels) {
      if (L < 0.0) throw ConfigError("grid.levels", "exit levels must be >= 0");
      if (L > 0.0 && (lam * L < 0.5 - 1e-12 || lam * L > 6.0 + 1e-12))
        throw ConfigError("grid.levels", "lambda * L must lie in [0.5, 6]");
    }
    SimulationConfig c = base;
    c.lambda = lam;
    c.horizon = spec.horizon;
    c.alpha.reset();
    c.levels.clear();
    for (double L : spec.levels) {
      c.levels.push_back(-L);
      c.levels.push_back(L);
    }
    const auto times = simulate_ensemble(family, c, true, false, [&](const PathRecord<D>& r) {
      return std::make_pair(r.ok(), r.hitting_times);
    });
    const bool constant = family.spec().kind == EnvironmentKind::constant;
    for (std::size_t li = 0; li < spec.levels.size(); ++li) {
      const double L = spec.levels[li];
      ExitRow left{"left", lam, L, spec.horizon, 0, 0, 0.0, {}, std::nan("")};
      for (const auto& [ok, ht] : times) {
        if (!ok) continue;
        ++left.n;
        left.hits += ht[2 * li] <= spec.horizon;
      }
      left.prob = static_cast<double>(left.hits) / static_cast<double>(left.n);
      left.ci = wilson_interval(left.hits, left.n);
      if (constant) left.closed_form = bm_hit_below_by(L, lam, spec.horizon);
      rep.rows.push_back(left);
      for (double t : spec.times) {
        ExitRow right{"right", lam, L, t, 0, 0, 0.0, {}, std::nan("")};
        for (const auto& [ok, ht] : times) {
          if (!ok) continue;
          ++right.n;
          right.hits += ht[2 * li + 1] >= t;
        }
        right.prob = static_cast<double>(right.hits) / static_cast<double>(right.n);
        right.ci = wilson_interval(right.hits, right.n);
        if (constant) right.closed_form = bm_not_hit_above_by(L, lam, t);
        rep.rows.push_back(right);
      }
    }
  }
  for (double lam : spec.lambdas) {
    std::vector<const ExitRow*> left;
    for (const auto& r : rep.rows)
      if (r.kind == "left" && r.lambda == lam && r.level > 0.0) left.push_back(&r);
    if (auto f = detail::fit_log_probability(left, true)) rep.fits.push_back(*f);
    for (double L : spec.levels) {
      if (L <= 0.0) continue;
      std::vector<const ExitRow*> right;
      for (const auto& r : rep.rows)
        if (r.kind == "right" && r.lambda == lam && r.level == L) right.push_back(&r);
      if (auto f = detail::fit_log_probability(right, false)) rep.fits.push_back(*f);
    }
  }
  return rep;
}

struct MomentRow {
  double lambda = 0.0;
  double alpha = 0.0;
  int power = 2;
  Estimate statistic;  // E[max_{s<=t} |X(s)|^p] / (lambda t)^p
};

struct MomentReport {
  std::vector<MomentRow> rows;
  std::vector<std::pair<int, double>> spread;  // power -> max/min of the statistic over the grid
};

/// One perturbed run per lambda up to the largest alpha, read at every
/// alpha through checkpoints.
template <std::size_t D>
MomentReport moment_bound_experiment(const EnvironmentFamily<D>& family, const SimulationConfig& base,
                                     std::span<const double> lambdas, std::span<const double> alphas,
                                     std::span<const int> powers) {
  if (lambdas.empty() || alphas.empty() || powers.empty()) throw ConfigError("grid", "moment grids must be non-empty");
  const double amax = *std::max_element(alphas.begin(), alphas.end());
  MomentReport rep;
  const bool rnd = family.is_random();
  for (double lam : lambdas) {
    SimulationConfig c = base;
    c.lambda = lam;
    c.horizon = amax / (lam * lam);
    c.alpha = amax;
    c.observation_times.clear();
    for (double a : alphas) {
      if (!(a >= 1.0)) throw ConfigError("grid.alpha", "alpha must be >= 1");
      c.observation_times.push_back(a / (lam * lam));
    }
    const auto samples = simulate_ensemble(family, c, true, false, [&](const PathRecord<D>& r) {
      std::vector<double> v;
      for (const auto& cp : r.checkpoints)
        for (int p : powers) v.push_back(std::pow(cp.max_abs / (lam * cp.time), p));
      return detail::Tagged{detail::group_of(rnd, c, r.env_id, r.path_id), r.ok(), v};
    });
    GroupedSamples g(alphas.size() * powers.size());
    std::size_t failures = 0;
    for (const auto& s : samples) s.ok ? g.add(s.group, s.values) : void(++failures);
    const Estimate all = g.mean();
    for (std::size_t k = 0; k < alphas.size(); ++k)
      for (std::size_t j = 0; j < powers.size(); ++j) {
        MomentRow row{lam, alphas[k], powers[j], {}};
        const std::size_t idx = k * powers.size() + j;
        row.statistic = scalar_estimate(all.value[idx], all.std_error[idx], all.n_samples);
        detail::flag_common(row.statistic, rnd, c, failures);
        rep.rows.push_back(row);
      }
  }
  for (int p : powers) {
    double lo = INFINITY, hi = 0.0;
    for (const auto& r : rep.rows)
      if (r.power == p) {
        lo = std::min(lo, r.statistic.value[0]);
        hi = std::max(hi, r.statistic.value[0]);
      }
    rep.spread.emplace_back(p, hi / lo);
  }
  return rep;
}

struct GammaReport {
  Estimate spatial;  // mean of e^{-2V} over environment draws and sample points
  Estimate clock;    // mean of A(t)/t over time-changed paths
};

/// gamma by spatial averaging over `points_per_env` uniform points in each of
/// cfg.n_envs environments (window of `window_cells` cells per axis).
template <std::size_t D>
Estimate estimate_gamma_spatial(const EnvironmentFamily<D>& family, std::uint64_t n_envs,
                                std::uint64_t points_per_env, std::uint64_t seed, double window_cells = 8.0) {
  const bool rnd = family.is_random();
  const double width = window_cells * family.spec().cell_size;
  const auto per_env = parallel_map(n_envs, [&](std::size_t e) {
    const auto env = family.draw(e);
    std::vector<double> vals;
    const PhiloxKey key = split_key(hash_words({seed, e, static_cast<std::uint64_t>(StreamTag::spatial_sample)}));
    for (std::uint64_t k = 0; k < points_per_env; ++k) {
      Vec<D> x;
      for (std::size_t i = 0; i < D; ++i) {
        const auto b = philox4x32({static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32),
                                   static_cast<std::uint32_t>(i), 0u},
                                  key);
        x[i] = width * uniform53(b[0], b[1]);
      }
      vals.push_back(std::exp(-2.0 * env.potential(x)));
    }
    return vals;
  });
  GroupedSamples g(1);
  for (std::size_t e = 0; e < n_envs; ++e)
    for (std::size_t k = 0; k < per_env[e].size(); ++k) {
      const double v = per_env[e][k];
      g.add(rnd && n_envs >= 2 ? e : (e * points_per_env + k) % GroupedSamples::kBatches, std::span<const double>(&v, 1));
    }
  Estimate est = g.mean();
  if (rnd && n_envs < 10) est.flag("few_envs");
  return est;
}

/// gamma from the clock of unperturbed time-changed paths, A(t)/t.
template <std::size_t D>
Estimate estimate_gamma_clock(const EnvironmentFamily<D>& family, const SimulationConfig& cfg) {
  const bool rnd = family.is_random();
  SimulationConfig c = cfg;
  c.lambda = 0.0;
  c.alpha.reset();
  const auto samples = simulate_ensemble(family, c, false, true, [&](const PathRecord<D>& r) {
    return detail::Tagged{detail::group_of(rnd, c, r.env_id, r.path_id), r.ok(), {r.clock / r.time}};
  });
  GroupedSamples g(1);
  std::size_t failures = 0;
  for (const auto& s : samples) s.ok ? g.add(s.group, s.values) : void(++failures);
  Estimate e = g.mean();
  detail::flag_common(e, rnd, c, failures);
  return e;
}

template <std::size_t D>
GammaReport estimate_gamma(const EnvironmentFamily<D>& family, const SimulationConfig& cfg,
                           std::uint64_t points_per_env = 1000) {
  return {estimate_gamma_spatial(family, cfg.n_envs, points_per_env, cfg.base_seed),
          estimate_gamma_clock(family, cfg)};
}

}  // namespace einrel
