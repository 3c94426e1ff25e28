#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "einrel/estimators.hpp"
#include "einrel/sde.hpp"
#include "einrel/stats.hpp"

namespace einrel {

struct GirsanovWeight {
  double log_weight = 0.0;  // lambda B(t) - lambda^2/2 <B>(t)
  double lambda = 0.0;
  double time = 0.0;

  double weight() const { return std::exp(log_weight); }
};

/// Exponential martingale turning unperturbed path expectations into
/// expectations under the lambda-perturbed dynamics.
template <std::size_t D>
GirsanovWeight weight_of(const PathRecord<D>& rec, double lambda) {
  if (rec.perturbed) throw std::invalid_argument("weight_of: record comes from a perturbed simulation");
  if (lambda == 0.0) return {0.0, 0.0, rec.time};
  return {lambda * rec.girsanov_b - 0.5 * lambda * lambda * rec.girsanov_bracket, lambda, rec.time};
}

inline constexpr double kMinEffectiveSamples = 30.0;

/// Sum w_i f(path_i) / n over unperturbed records. The result is flagged
/// "low_ess" when (sum w)^2 / sum w^2 falls below `min_ess`.
template <std::size_t D, typename Fn>
Estimate reweighted_estimate(std::span<const PathRecord<D>> records, const SimulationConfig& cfg, bool random_env,
                             double lambda, Fn functional, double min_ess = kMinEffectiveSamples) {
  if (records.empty()) throw std::invalid_argument("reweighted_estimate: no records");
  GroupedSamples g;
  double sw = 0.0, sw2 = 0.0;
  std::size_t failures = 0;
  for (const auto& r : records) {
    if (r.lambda != 0.0) throw std::invalid_argument("reweighted_estimate: records must be unperturbed");
    if (!r.ok()) {
      ++failures;
      continue;
    }
    const double w = weight_of(r, lambda).weight();
    std::vector<double> f = functional(r);
    for (double& v : f) v *= w;
    g.add(detail::group_of(random_env, cfg, r.env_id, r.path_id), f);
    sw += w;
    sw2 += w * w;
  }
  Estimate e = g.mean();
  detail::flag_common(e, random_env, cfg, failures);
  if (sw * sw / sw2 < min_ess) e.flag("low_ess");
  return e;
}

struct GirsanovReport {
  double lambda = 0.0;
  double alpha = 0.0;
  Estimate mean_weight;
  Estimate weight_second_moment;
  double second_moment_bound = 0.0;  // e^{alpha / kappa}
  double effective_samples = 0.0;
  Estimate reweighted;  // E[w e1.X(t) / (lambda t)] from unperturbed paths
  Estimate direct;      // E[e1.X(t) / (lambda t)] from perturbed paths
};

/// Weight normalization, second moment and reweighted-versus-direct drift at
/// t = cfg.horizon for one lambda.
template <std::size_t D>
GirsanovReport girsanov_experiment(const EnvironmentFamily<D>& family, const SimulationConfig& cfg) {
  const double lam = cfg.lambda;
  if (!(lam > 0.0)) throw ConfigError("sim.lambda", "the Girsanov comparison needs lambda > 0");
  const bool rnd = family.is_random();
  const Vec<D> e1 = to_vec<D>(cfg.direction);
  SimulationConfig c0 = cfg;
  const auto base = simulate_ensemble(family, c0, false, false, [&](const PathRecord<D>& r) {
    const double w = weight_of(r, lam).weight();
    const double scaled = dot(e1, r.endpoint) / (lam * r.time);
    return detail::Tagged{detail::group_of(rnd, c0, r.env_id, r.path_id), r.ok(), {w, w * w, w * scaled}};
  });
  GroupedSamples g(3);
  double sw = 0.0, sw2 = 0.0;
  std::size_t failures = 0;
  for (const auto& s : base) {
    if (!s.ok) {
      ++failures;
      continue;
    }
    g.add(s.group, s.values);
    sw += s.values[0];
    sw2 += s.values[1];
  }
  const Estimate all = g.mean();
  GirsanovReport rep;
  rep.lambda = lam;
  rep.alpha = lam * lam * cfg.horizon;
  rep.mean_weight = scalar_estimate(all.value[0], all.std_error[0], all.n_samples);
  rep.weight_second_moment = scalar_estimate(all.value[1], all.std_error[1], all.n_samples);
  rep.reweighted = scalar_estimate(all.value[2], all.std_error[2], all.n_samples);
  rep.effective_samples = sw * sw / sw2;
  rep.second_moment_bound = std::exp(rep.alpha / family.spec().kappa);
  for (Estimate* e : {&rep.mean_weight, &rep.weight_second_moment, &rep.reweighted})
    detail::flag_common(*e, rnd, c0, failures);
  if (rep.effective_samples < kMinEffectiveSamples) rep.reweighted.flag("low_ess");

  const auto pert = simulate_ensemble(family, cfg, true, false, [&](const PathRecord<D>& r) {
    return detail::Tagged{detail::group_of(rnd, cfg, r.env_id, r.path_id), r.ok(),
                          {dot(e1, r.endpoint) / (lam * r.time)}};
  });
  GroupedSamples gd(1);
  std::size_t pfail = 0;
  for (const auto& s : pert) s.ok ? gd.add(s.group, s.values) : void(++pfail);
  rep.direct = gd.mean();
  detail::flag_common(rep.direct, rnd, cfg, pfail);
  return rep;
}

struct TimeChangeRepetition {
  KsResult ks;
  std::uint64_t n = 0;
  double mean_x = 0.0, se_x = 0.0, var_x = 0.0;
  double mean_y = 0.0, se_y = 0.0, var_y = 0.0;
  double clock_rate = 0.0;  // mean of A(s)/s at the moment A reaches t*
  double clock_rate_se = 0.0;
  std::uint64_t clock_violations = 0;  // paths whose A(s)/s left [e^{-2v}, e^{2v}] at some sample
};

/// True when A(s)/s lies in [e^{-2v}, e^{2v}] up to rounding.
inline bool clock_rate_in_bounds(double clock, double time, double v) {
  if (time <= 0.0) return true;
  const double r = clock / time, slack = 1e-12;
  return r >= std::exp(-2.0 * v) * (1.0 - slack) && r <= std::exp(2.0 * v) * (1.0 + slack);
}

/// Compares e1.X(t*) of the perturbed diffusion with e1.Y(A^{-1}(t*)) of the
/// time-changed process in one environment. cfg.horizon bounds the Y time;
/// t* must satisfy t* <= horizon e^{-2 sup|V|} so the clock surely reaches it.
template <std::size_t D>
std::vector<TimeChangeRepetition> time_change_equivalence_test(const Environment<D>& env, const SimulationConfig& cfg,
                                                               double t_star, int repetitions) {
  const double reach = cfg.horizon * std::exp(-2.0 * env.potential_bound());
  if (!(t_star > 0.0) || t_star > reach * (1.0 + 1e-12))
    throw ConfigError("sim.t_star", "must lie in (0, horizon * exp(-2 sup|V|)] = (0, " + std::to_string(reach) + "]");
  const Vec<D> e1 = to_vec<D>(cfg.direction);
  const double vmax = env.potential_bound();
  std::vector<TimeChangeRepetition> out;
  for (int rep = 0; rep < repetitions; ++rep) {
    SimulationConfig cx = cfg;
    cx.base_seed = hash_words({cfg.base_seed, static_cast<std::uint64_t>(rep), 0x7C0ull});
    cx.horizon = static_cast<double>(step_index(t_star, cfg.dt)) * cfg.dt;
    cx.alpha.reset();
    cx.keep_stride = 0;
    cx.stop_at_clock.reset();
    SimulationConfig cy = cx;
    cy.horizon = cfg.horizon;
    cy.keep_stride = 1;
    cy.stop_at_clock = t_star;
    validate(cx, static_cast<int>(D));
    validate(cy, static_cast<int>(D));
    const std::uint64_t n = cfg.n_paths;
    const auto xs = parallel_map(n, [&](std::size_t p) { return dot(e1, simulate_path(env, cx, p, 0, cfg.lambda > 0).endpoint); });
    const auto ys = parallel_map(n, [&](std::size_t p) {
      const auto r = simulate_time_changed_path(env, cy, p, 0, cfg.lambda > 0);
      const auto hit = inverse_clock(r.trajectory, t_star);
      if (!hit) throw SimulationError("time-changed path did not reach the clock target");
      bool inside = true;
      for (const auto& smp : r.trajectory) inside = inside && clock_rate_in_bounds(smp.clock, smp.time, vmax);
      return std::array<double, 3>{dot(e1, hit->x), t_star / hit->time, inside ? 0.0 : 1.0};
    });
    TimeChangeRepetition r;
    r.n = n;
    MeanAccumulator ax, ay, ac;
    std::vector<double> yv;
    for (double x : xs) ax.add(x);
    for (const auto& y : ys) {
      ay.add(y[0]);
      ac.add(y[1]);
      yv.push_back(y[0]);
      r.clock_violations += y[2] > 0.0;
    }
    r.ks = ks_two_sample(xs, yv);
    r.mean_x = ax.mean(), r.se_x = ax.std_error(), r.var_x = ax.variance();
    r.mean_y = ay.mean(), r.se_y = ay.std_error(), r.var_y = ay.variance();
    r.clock_rate = ac.mean(), r.clock_rate_se = ac.std_error();
    out.push_back(r);
  }
  return out;
}

struct SigmaGammaReport {
  std::size_t dimension = 1;
  Estimate sigma;    // from X endpoints
  Estimate sigma_y;  // from Y endpoints
  Estimate gamma;    // A(t)/t on the Y paths
  std::uint64_t clock_violations = 0;  // Y paths with A(t)/t outside [e^{-2v}, e^{2v}]
  std::vector<double> relative_deviation;  // |Sigma^Y - gamma Sigma|_ij / sqrt((gamma Sigma)_ii (gamma Sigma)_jj)
  std::vector<double> relative_se;

  double max_deviation() const {
    double m = 0.0;
    for (double v : relative_deviation) m = std::max(m, v);
    return m;
  }
};

/// Estimates Sigma, Sigma^Y and gamma from unperturbed paths at time
/// cfg.horizon and compares Sigma^Y with gamma Sigma entry by entry.
template <std::size_t D>
SigmaGammaReport sigma_gamma_identity_check(const EnvironmentFamily<D>& family, const SimulationConfig& cfg) {
  if (cfg.lambda != 0.0) throw ConfigError("sim.lambda", "the identity check requires lambda = 0");
  SigmaGammaReport rep;
  rep.dimension = D;
  rep.sigma = estimate_sigma(family, cfg, false);
  const bool rnd = family.is_random();
  const double vmax = family.draw(0).potential_bound();
  const auto ys = simulate_ensemble(family, cfg, false, true, [&](const PathRecord<D>& r) {
    auto v = endpoint_products(r.endpoint, r.time);
    v.push_back(r.clock / r.time);
    v.push_back(clock_rate_in_bounds(r.clock, r.time, vmax) ? 0.0 : 1.0);
    return detail::Tagged{detail::group_of(rnd, cfg, r.env_id, r.path_id), r.ok(), v};
  });
  constexpr std::size_t kUpper = D * (D + 1) / 2;
  GroupedSamples gy(kUpper), gg(1);
  std::size_t failures = 0;
  for (const auto& s : ys) {
    if (!s.ok) {
      ++failures;
      continue;
    }
    gy.add(s.group, std::span<const double>(s.values.data(), kUpper));
    gg.add(s.group, std::span<const double>(s.values.data() + kUpper, 1));
    rep.clock_violations += s.values[kUpper + 1] > 0.0;
  }
  rep.sigma_y = sigma_from_samples(gy, D, rnd, cfg, failures);
  rep.gamma = gg.mean();
  const double g = rep.gamma.value[0], sg = rep.gamma.std_error[0];
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) {
      const double s = rep.sigma.at(i, j), ss = rep.sigma.se(i, j);
      const double scale = g * std::sqrt(rep.sigma.at(i, i) * rep.sigma.at(j, j));
      const double diff = rep.sigma_y.at(i, j) - g * s;
      const double se = std::sqrt(rep.sigma_y.se(i, j) * rep.sigma_y.se(i, j) + s * s * sg * sg + g * g * ss * ss);
      rep.relative_deviation.push_back(std::abs(diff) / scale);
      rep.relative_se.push_back(se / scale);
    }
  return rep;
}

}  // namespace einrel
