#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "einrel/environment.hpp"
#include "einrel/errors.hpp"
#include "einrel/parallel.hpp"
#include "einrel/rng.hpp"
#include "einrel/vec.hpp"

namespace einrel {

inline constexpr double kDtBase = 1e-2;
inline constexpr double kNeverHit = std::numeric_limits<double>::infinity();

/// Step-size rule: dt <= min(dt_base, 0.01 / max(lambda, 1)^2).
inline double max_time_step(double lambda) {
  const double lam_eff = std::max(lambda, 1.0);
  return std::min(kDtBase, 0.01 / (lam_eff * lam_eff));
}

struct SimulationConfig {
  double dt = kDtBase;
  double horizon = 1.0;
  double lambda = 0.0;
  std::vector<double> direction{1.0};
  std::optional<double> alpha;  // lambda^2 * horizon, when the critical-scale protocol is in use
  std::uint64_t n_paths = 1;
  std::uint64_t n_envs = 1;
  std::uint64_t base_seed = 0;
  std::vector<double> levels;             // hitting levels L of e1 . X
  std::vector<double> observation_times;  // checkpoints of position and running maxima
  std::uint64_t keep_stride = 0;          // retain every k-th step; 0 keeps none
  std::optional<double> stop_at_clock;    // time-changed paths stop once A reaches this
  // Each increment is the scaled sum of this many consecutive unit normals,
  // so runs at dt and dt/2 with refinements 2r and r share one Brownian path.
  std::uint32_t brownian_refinement = 1;

  friend bool operator==(const SimulationConfig&, const SimulationConfig&) = default;
};

inline std::uint64_t step_count(const SimulationConfig& c) {
  return static_cast<std::uint64_t>(std::llround(c.horizon / c.dt));
}

inline std::uint64_t step_index(double t, double dt) { return static_cast<std::uint64_t>(std::llround(t / dt)); }

inline void validate(const SimulationConfig& c, int dimension) {
  if (!(c.dt > 0.0)) throw ConfigError("sim.dt", "must be positive");
  if (c.dt > max_time_step(c.lambda) * (1.0 + 1e-12))
    throw ConfigError("sim.dt", "exceeds the step-size rule dt <= " + std::to_string(max_time_step(c.lambda)));
  if (!(c.horizon > 0.0) || !std::isfinite(c.horizon)) throw ConfigError("sim.horizon", "must be positive and finite");
  if (std::abs(static_cast<double>(step_count(c)) * c.dt - c.horizon) > 1e-9 * c.horizon)
    throw ConfigError("sim.horizon", "must be an integer multiple of sim.dt");
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw ConfigError("sim.lambda", "must lie in [0, 1]");
  if (static_cast<int>(c.direction.size()) != dimension)
    throw ConfigError("sim.direction", "needs " + std::to_string(dimension) + " components");
  double n2 = 0.0;
  for (double v : c.direction) n2 += v * v;
  if (std::abs(n2 - 1.0) > 1e-12) throw ConfigError("sim.direction", "must be a unit vector");
  if (c.n_paths < 1) throw ConfigError("sim.n_paths", "must be >= 1");
  if (c.n_envs < 1) throw ConfigError("sim.n_envs", "must be >= 1");
  if (c.alpha) {
    if (!(*c.alpha > 0.0)) throw ConfigError("sim.alpha", "must be positive");
    if (std::abs(c.lambda * c.lambda * c.horizon - *c.alpha) > 1e-9 * *c.alpha)
      throw ConfigError("sim.alpha", "must equal lambda^2 * horizon");
  }
  for (double t : c.observation_times)
    if (!(t > 0.0 && t <= c.horizon * (1.0 + 1e-12)))
      throw ConfigError("sim.observation_times", "must lie in (0, horizon]");
  for (double L : c.levels)
    if (!std::isfinite(L)) throw ConfigError("sim.levels", "must be finite");
  if (c.stop_at_clock && !(*c.stop_at_clock > 0.0)) throw ConfigError("sim.stop_at_clock", "must be positive");
  if (c.brownian_refinement < 1) throw ConfigError("sim.brownian_refinement", "must be >= 1");
}

enum class PathStatus { ok, non_finite };

template <std::size_t D>
struct TrajectorySample {
  double time = 0.0;
  Vec<D> x{};
  double girsanov_b = 0.0;
  double girsanov_bracket = 0.0;
  double clock = 0.0;
};

template <std::size_t D>
struct Checkpoint {
  double time = 0.0;
  Vec<D> x{};
  double max_abs = 0.0;      // max_{s<=t} |X(s)|
  double running_max = 0.0;  // M(t)
};

template <std::size_t D>
struct PathRecord {
  std::uint64_t env_id = 0;
  std::uint64_t path_id = 0;
  bool perturbed = false;
  bool time_changed = false;
  double lambda = 0.0;  // drift strength the path was simulated with
  Vec<D> direction{};
  double time = 0.0;  // final time reached
  std::uint64_t steps = 0;
  Vec<D> endpoint{};
  double max_abs_displacement = 0.0;
  double running_max = 0.0;  // M(t) = sup e1 . (X(s) - X(0))
  double running_min = 0.0;
  std::vector<double> levels;
  std::vector<double> hitting_times;  // kNeverHit when not reached within the horizon
  // Martingale B = int sigma e1 . dW and its bracket; only accumulated on
  // unperturbed paths (they are the Girsanov reference measure).
  double girsanov_b = 0.0;
  double girsanov_bracket = 0.0;
  double clock = 0.0;  // A(t) = int exp(-2V(Y)) ds for time-changed paths, t otherwise
  std::vector<Checkpoint<D>> checkpoints;
  std::vector<TrajectorySample<D>> trajectory;
  PathStatus status = PathStatus::ok;
  std::string diagnostic;

  bool ok() const { return status == PathStatus::ok; }
};

namespace detail {

struct LevelSlot {
  double level;
  std::size_t index;
};

template <std::size_t D, bool TimeChanged>
PathRecord<D> integrate(const Environment<D>& env, const SimulationConfig& cfg, std::uint64_t path_id,
                        std::uint64_t env_id, bool perturbed) {
  PathRecord<D> rec;
  rec.env_id = env_id;
  rec.path_id = path_id;
  rec.perturbed = perturbed;
  rec.time_changed = TimeChanged;
  rec.lambda = perturbed ? cfg.lambda : 0.0;
  const Vec<D> e1 = to_vec<D>(cfg.direction);
  rec.direction = e1;
  rec.levels = cfg.levels;
  rec.hitting_times.assign(cfg.levels.size(), kNeverHit);

  std::vector<LevelSlot> up, down;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
    const double L = cfg.levels[i];
    if (L > 0.0) up.push_back({L, i});
    else if (L < 0.0) down.push_back({L, i});
    else rec.hitting_times[i] = 0.0;
  }
  std::sort(up.begin(), up.end(), [](auto& a, auto& b) { return a.level < b.level; });
  std::sort(down.begin(), down.end(), [](auto& a, auto& b) { return a.level > b.level; });
  std::size_t next_up = 0, next_down = 0;

  std::vector<std::uint64_t> obs_steps;
  for (double t : cfg.observation_times) obs_steps.push_back(step_index(t, cfg.dt));
  std::vector<std::size_t> obs_order(obs_steps.size());
  for (std::size_t i = 0; i < obs_order.size(); ++i) obs_order[i] = i;
  std::sort(obs_order.begin(), obs_order.end(), [&](auto a, auto b) { return obs_steps[a] < obs_steps[b]; });
  rec.checkpoints.resize(obs_steps.size());
  std::size_t next_obs = 0;

  const double lam = rec.lambda;
  const double dt = cfg.dt;
  const double sqdt = std::sqrt(dt);
  const std::uint64_t n_steps = step_count(cfg);
  const bool girsanov = !perturbed;
  const std::uint32_t refine = cfg.brownian_refinement;
  const double refine_scale = 1.0 / std::sqrt(static_cast<double>(refine));
  NormalStream noise(cfg.base_seed, env_id, path_id, TimeChanged ? StreamTag::time_changed : StreamTag::diffusion);
  BumpCursor<D> cursor;

  Vec<D> x = zero_vec<D>();
  double z_prev = 0.0;
  double max_abs2 = 0.0;
  // Clock and bracket are kept as sums of integrand values and scaled by dt
  // on output, so a unit integrand reproduces t = n * dt exactly.
  double clock_sum = 0.0;
  double bracket_sum = 0.0;
  const std::uint64_t stride = cfg.keep_stride;
  if (stride) {
    rec.trajectory.reserve(n_steps / stride + 2);
    rec.trajectory.push_back({0.0, x, 0.0, 0.0, 0.0});
  }

  std::uint64_t n = 0;
  while (n < n_steps) {
    const LocalCoefficients<D> c = env.evaluate(x, cursor);
    double drift_scale = 1.0;
    double noise_coef = c.sigma;
    if constexpr (TimeChanged) {
      const double w = std::exp(-2.0 * c.potential);
      drift_scale = w;
      noise_coef = c.sigma * std::exp(-c.potential);
      clock_sum += w;
    }
    const double push = lam * c.a();
    Vec<D> xi;
    if (refine == 1) {
      for (std::size_t i = 0; i < D; ++i) xi[i] = noise.next();
    } else {
      xi.fill(0.0);
      for (std::uint32_t k = 0; k < refine; ++k)
        for (std::size_t i = 0; i < D; ++i) xi[i] += noise.next();
      for (std::size_t i = 0; i < D; ++i) xi[i] *= refine_scale;
    }
    double e1_xi = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      e1_xi += e1[i] * xi[i];
      x[i] += drift_scale * (c.drift[i] + push * e1[i]) * dt + noise_coef * sqdt * xi[i];
    }
    if (girsanov) {
      rec.girsanov_b += noise_coef * sqdt * e1_xi;
      bracket_sum += noise_coef * noise_coef;
    }
    ++n;
    const double t = static_cast<double>(n) * dt;

    bool finite = true;
    for (std::size_t i = 0; i < D; ++i) finite = finite && std::isfinite(x[i]);
    if (!finite) {
      rec.status = PathStatus::non_finite;
      rec.diagnostic = "non-finite state at step " + std::to_string(n) + " (t=" + std::to_string(t) + ")";
      break;
    }

    const double z = dot(e1, x);
    if (z > rec.running_max) {
      rec.running_max = z;
      while (next_up < up.size() && z >= up[next_up].level) {
        const double L = up[next_up].level;
        rec.hitting_times[up[next_up].index] = t - dt + dt * (L - z_prev) / (z - z_prev);
        ++next_up;
      }
    }
    if (z < rec.running_min) {
      rec.running_min = z;
      while (next_down < down.size() && z <= down[next_down].level) {
        const double L = down[next_down].level;
        rec.hitting_times[down[next_down].index] = t - dt + dt * (z_prev - L) / (z_prev - z);
        ++next_down;
      }
    }
    z_prev = z;
    max_abs2 = std::max(max_abs2, norm2(x));

    while (next_obs < obs_order.size() && obs_steps[obs_order[next_obs]] == n) {
      rec.checkpoints[obs_order[next_obs]] = {t, x, std::sqrt(max_abs2), rec.running_max};
      ++next_obs;
    }
    const double clock = TimeChanged ? clock_sum * dt : t;
    const bool stop = TimeChanged && cfg.stop_at_clock && clock >= *cfg.stop_at_clock;
    if (stride && (n % stride == 0 || stop))
      rec.trajectory.push_back({t, x, rec.girsanov_b, bracket_sum * dt, clock});
    if (stop) break;
  }

  rec.steps = n;
  rec.time = static_cast<double>(n) * dt;
  rec.endpoint = x;
  rec.max_abs_displacement = std::sqrt(max_abs2);
  rec.clock = TimeChanged ? clock_sum * dt : rec.time;
  rec.girsanov_bracket = bracket_sum * dt;
  return rec;
}

}  // namespace detail

/// Euler-Maruyama path of dX = [b + perturbed * a lambda e1] dt + sigma dW from the
/// origin. The Gaussian increments come from the counter-based stream keyed
/// on (base_seed, env_id, path_id), so a record is reproducible bit for bit.
/// Failures (non-finite state) are reported through `status`/`diagnostic`.
template <std::size_t D>
PathRecord<D> simulate_path(const Environment<D>& env, const SimulationConfig& cfg, std::uint64_t path_id,
                            std::uint64_t env_id, bool perturbed) {
  return detail::integrate<D, false>(env, cfg, path_id, env_id, perturbed);
}

/// Time-changed process Y: drift exp(-2V)(b + perturbed * a lambda e1), noise
/// exp(-V) sigma, and the clock A(t) = int exp(-2V(Y)) ds.
template <std::size_t D>
PathRecord<D> simulate_time_changed_path(const Environment<D>& env, const SimulationConfig& cfg,
                                         std::uint64_t path_id, std::uint64_t env_id, bool perturbed) {
  return detail::integrate<D, true>(env, cfg, path_id, env_id, perturbed);
}

/// First time e1 . X reaches L (linear interpolation between steps), or
/// kNeverHit if it did not happen within the horizon.
template <std::size_t D>
double first_hitting_time(const PathRecord<D>& rec, double level) {
  for (std::size_t i = 0; i < rec.levels.size(); ++i)
    if (std::abs(rec.levels[i] - level) <= 1e-12 * std::max(1.0, std::abs(level))) return rec.hitting_times[i];
  throw std::invalid_argument("hitting level " + std::to_string(level) + " was not registered before simulation");
}

/// Position and time of a retained trajectory at the moment its clock first
/// reaches `target`: binary search on the monotone clock, then linear
/// interpolation between the bracketing samples.
template <std::size_t D>
std::optional<TrajectorySample<D>> inverse_clock(const std::vector<TrajectorySample<D>>& traj, double target) {
  if (traj.empty() || traj.back().clock < target) return std::nullopt;
  if (target <= traj.front().clock) return traj.front();
  auto it = std::lower_bound(traj.begin(), traj.end(), target,
                             [](const TrajectorySample<D>& s, double v) { return s.clock < v; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double f = (target - lo.clock) / (hi.clock - lo.clock);
  TrajectorySample<D> out;
  out.time = lo.time + f * (hi.time - lo.time);
  for (std::size_t i = 0; i < D; ++i) out.x[i] = lo.x[i] + f * (hi.x[i] - lo.x[i]);
  out.girsanov_b = lo.girsanov_b + f * (hi.girsanov_b - lo.girsanov_b);
  out.girsanov_bracket = lo.girsanov_bracket + f * (hi.girsanov_bracket - lo.girsanov_bracket);
  out.clock = target;
  return out;
}

/// Simulates n_envs x n_paths paths and maps each record through `fn` on the
/// worker pool. Result i belongs to env i / n_paths, path i % n_paths.
template <std::size_t D, typename Fn>
auto simulate_ensemble(const EnvironmentFamily<D>& family, const SimulationConfig& cfg, bool perturbed,
                       bool time_changed, Fn fn) {
  validate(cfg, static_cast<int>(D));
  std::vector<Environment<D>> envs;
  envs.reserve(cfg.n_envs);
  for (std::uint64_t e = 0; e < cfg.n_envs; ++e) envs.push_back(family.draw(e));
  return parallel_map(cfg.n_envs * cfg.n_paths, [&](std::size_t i) {
    const std::uint64_t e = i / cfg.n_paths;
    const std::uint64_t p = i % cfg.n_paths;
    return fn(time_changed ? simulate_time_changed_path(envs[e], cfg, p, e, perturbed)
                           : simulate_path(envs[e], cfg, p, e, perturbed));
  });
}

}  // namespace einrel
