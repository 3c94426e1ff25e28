#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "einrel/errors.hpp"
#include "einrel/estimate.hpp"
#include "einrel/sde.hpp"
#include "einrel/stats.hpp"
#include "einrel/vec.hpp"

namespace einrel {

struct RegenerationParams {
  double ladder_scale = 2.0;      // l; R(lambda) = l / lambda
  double horizon_blocks = 10.0;   // no-backtrack horizon H in units of lambda^-2
  std::uint64_t max_levels = 100000;

  double radius(double lambda) const { return ladder_scale / lambda; }
  double block(double lambda) const { return 1.0 / (lambda * lambda); }
  double horizon(double lambda) const { return horizon_blocks * block(lambda); }

  friend bool operator==(const RegenerationParams&, const RegenerationParams&) = default;
};

inline void validate(const RegenerationParams& p) {
  if (!(p.ladder_scale >= 1.0)) throw ConfigError("regen.ladder_scale", "must be >= 1");
  if (!(p.horizon_blocks >= 10.0)) throw ConfigError("regen.horizon_blocks", "must be >= 10");
  if (p.max_levels < 1) throw ConfigError("regen.max_levels", "must be >= 1");
}

enum class LadderStatus { found, censored, max_levels };

/// Ladder search on a sampled projection z[0..n). Times are sample indices;
/// the block grid has `grid` samples per block of length lambda^-2.
struct LadderResult {
  LadderStatus status = LadderStatus::censored;
  std::size_t tau = 0;         // index of S_K
  std::uint64_t attempts = 0;  // K when found
  std::uint64_t backtracks = 0;
  std::uint64_t levels = 0;
};

namespace detail {

inline std::size_t ceil_grid(std::size_t i, std::size_t grid) { return grid * ((i + grid - 1) / grid); }

}  // namespace detail

/// First regeneration of the path shifted to sample `origin` (a grid point).
/// V_0 = T_{3R}; V_{k+1} = T_{M(ceil V_k) + R}; a ladder time ceil V_k is
/// accepted when z stays within R/2 of z(V_k) on [V_k, ceil V_k]. Then
/// S = N + lambda^-2, and S is a regeneration if z stays above z(S) - R for
/// `horizon` samples. After a backtrack at J the search restarts at
/// ceil J from level M(ceil J) + R. Levels are relative to z(origin).
inline LadderResult find_regeneration(std::span<const double> z, std::size_t origin, std::size_t grid,
                                      std::size_t horizon, double R, std::uint64_t max_levels) {
  LadderResult res;
  const std::size_t n = z.size();
  std::size_t scan = origin;     // next index to test for a level crossing
  std::size_t max_upto = origin;  // running max covers [origin, max_upto]
  double run_max = z[origin];
  auto extend_max = [&](std::size_t upto) {
    for (; max_upto < upto; ++max_upto) run_max = std::max(run_max, z[max_upto + 1]);
  };
  double level = z[origin] + 3.0 * R;
  for (;;) {
    std::size_t N = 0;
    for (;;) {
      if (++res.levels > max_levels) {
        res.status = LadderStatus::max_levels;
        return res;
      }
      std::size_t j = scan;
      while (j < n && z[j] < level) ++j;
      if (j >= n) return res;
      const std::size_t c = detail::ceil_grid(j, grid);
      if (c >= n) return res;
      double osc = 0.0;
      for (std::size_t i = j; i <= c; ++i) osc = std::max(osc, std::abs(z[i] - z[j]));
      extend_max(c);
      if (osc <= 0.5 * R) {
        N = c;
        break;
      }
      level = run_max + R;
      scan = c + 1;
    }
    const std::size_t S = N + grid;
    if (S >= n) return res;
    ++res.attempts;
    const double floor = z[S] - R;
    const std::size_t end = std::min(n - 1, S + horizon);
    std::size_t b = S + 1;
    while (b <= end && z[b] > floor) ++b;
    if (b > end) {
      if (S + horizon > n - 1) return res;
      res.status = LadderStatus::found;
      res.tau = S;
      return res;
    }
    ++res.backtracks;
    const std::size_t rk = detail::ceil_grid(b, grid);
    if (rk >= n) return res;
    extend_max(rk);
    level = run_max + R;
    scan = rk + 1;
  }
}

template <std::size_t D>
struct RegenerationSequence {
  std::uint64_t env_id = 0;
  std::uint64_t path_id = 0;
  double lambda = 0.0;
  double radius = 0.0;   // R(lambda)
  double horizon = 0.0;  // H
  std::vector<double> times;
  std::vector<Vec<D>> positions;
  std::vector<std::uint64_t> K;
  bool censored = false;  // no regeneration could be certified
  bool max_levels_hit = false;
  std::uint64_t ladder_attempts = 0;
  std::uint64_t backtracks = 0;
  std::uint64_t late_backtracks = 0;         // drops below z(tau) - R after the horizon H
  std::uint64_t confinement_violations = 0;  // left the 6R ball on [tau - lambda^-2, tau]
  double observed_until = 0.0;
};

/// Sample spacing (in steps) that puts 100 samples in each block.
inline std::uint64_t regeneration_stride(double lambda, double dt) {
  return static_cast<std::uint64_t>(std::llround(1.0 / (lambda * lambda) / dt / 100.0));
}

/// Regeneration times of a retained trajectory. Requires a uniform sample
/// spacing h with lambda^-2 / h integral and h <= lambda^-2 / 100.
template <std::size_t D>
RegenerationSequence<D> detect_regenerations(std::span<const TrajectorySample<D>> traj, const Vec<D>& e1,
                                             double lambda, const RegenerationParams& params) {
  validate(params);
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("sim.lambda", "regeneration needs lambda in (0, 1]");
  if (traj.size() < 2) throw ConfigError("sim.keep_stride", "trajectory has fewer than two samples");
  const double h = traj[1].time - traj[0].time;
  const double block = params.block(lambda);
  const double ratio = block / h;
  const auto grid = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(grid)) > 1e-6 * ratio || grid < 100)
    throw ConfigError("sim.keep_stride", "sample spacing must divide lambda^-2 into at least 100 parts");
  const auto horizon = static_cast<std::size_t>(std::llround(params.horizon_blocks * static_cast<double>(grid)));
  const double R = params.radius(lambda);

  std::vector<double> z(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) z[i] = dot(e1, traj[i].x);

  RegenerationSequence<D> seq;
  seq.lambda = lambda;
  seq.radius = R;
  seq.horizon = params.horizon(lambda);
  seq.observed_until = traj.back().time;
  std::size_t origin = 0;
  for (;;) {
    const LadderResult r = find_regeneration(z, origin, grid, horizon, R, params.max_levels);
    seq.ladder_attempts += r.attempts;
    seq.backtracks += r.backtracks;
    if (r.status == LadderStatus::max_levels) seq.max_levels_hit = true;
    if (r.status != LadderStatus::found) break;
    const std::size_t t = r.tau;
    seq.times.push_back(traj[t].time);
    seq.positions.push_back(traj[t].x);
    seq.K.push_back(r.attempts);
    const double floor = z[t] - R;
    for (std::size_t i = t + horizon + 1; i < z.size(); ++i)
      if (z[i] <= floor) {
        ++seq.late_backtracks;
        break;
      }
    const Vec<D>& anchor = traj[t - grid].x;
    for (std::size_t i = t - grid; i <= t; ++i) {
      Vec<D> d;
      for (std::size_t k = 0; k < D; ++k) d[k] = traj[i].x[k] - anchor[k];
      if (norm(d) > 6.0 * R) {
        ++seq.confinement_violations;
        break;
      }
    }
    origin = t;
  }
  seq.censored = seq.times.empty();
  return seq;
}

/// Row of the tail table P[tau_{k+1} - tau_k >= lambda^-2 t].
struct TailPoint {
  double t = 0.0;
  std::uint64_t count = 0;
  std::uint64_t n = 0;
  Interval ci;
};

struct KTailPoint {
  std::uint64_t k = 1;
  std::uint64_t count = 0;
  std::uint64_t n = 0;
  double bound = 1.0;  // 2^{-k+1}
  Interval ci;         // Wilson interval at z = 3
};

struct RegenerationSummary {
  double lambda = 0.0;
  std::uint64_t paths = 0;
  std::uint64_t censored_paths = 0;
  double censored_fraction = 0.0;
  std::uint64_t increments = 0;
  std::uint64_t increments_per_path = 0;
  std::uint64_t short_paths = 0;  // paths with fewer increments, left out
  Estimate mean_increment;     // lambda^2 E[tau_{k+1} - tau_k]
  Estimate second_increment;   // lambda^4 E[(tau_{k+1} - tau_k)^2]
  Estimate displacement_sq;    // lambda^2 E[|X(tau_{k+1}) - X(tau_k)|^2]
  std::vector<TailPoint> tail;
  LinearFit tail_fit;          // log P vs t over points with 0 < count < n
  Autocorrelation lag1;
  std::vector<KTailPoint> k_tail;
  double first_success = 0.0;  // fraction of regenerations with K = 1
  std::uint64_t late_backtracks = 0;
  std::uint64_t confinement_violations = 0;
  std::uint64_t max_levels_hits = 0;
  std::vector<std::string> flags;
};

/// Increments per path used by the renewal statistics: half the median number
/// observed, at least one. Taking the first m increments of every path that
/// has m avoids favouring short increments near the end of the horizon.
template <std::size_t D>
std::uint64_t increments_per_path(std::span<const RegenerationSequence<D>> seqs) {
  std::vector<std::uint64_t> c;
  for (const auto& q : seqs) c.push_back(q.times.size() > 1 ? q.times.size() - 1 : 0);
  if (c.empty()) return 1;
  std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(c.size() / 2), c.end());
  return std::max<std::uint64_t>(1, c[c.size() / 2] / 2);
}

/// Renewal statistics from the first m increments tau_{k+1} - tau_k (k >= 1)
/// of each path holding at least m; m = 0 picks increments_per_path.
template <std::size_t D>
RegenerationSummary regeneration_statistics(std::span<const RegenerationSequence<D>> seqs, double lambda,
                                            std::uint64_t k_max = 6, std::uint64_t m = 0) {
  RegenerationSummary s;
  s.lambda = lambda;
  if (m == 0) m = increments_per_path(seqs);
  s.increments_per_path = m;
  const double l2 = lambda * lambda;
  MeanAccumulator inc(3);
  std::vector<double> all;
  std::vector<std::pair<double, double>> pairs;
  std::vector<std::uint64_t> Ks;
  for (const auto& q : seqs) {
    ++s.paths;
    s.censored_paths += q.censored;
    s.late_backtracks += q.late_backtracks;
    s.confinement_violations += q.confinement_violations;
    s.max_levels_hits += q.max_levels_hit;
    if (q.times.size() < m + 1) {
      ++s.short_paths;
      continue;
    }
    Ks.insert(Ks.end(), q.K.begin(), q.K.begin() + static_cast<std::ptrdiff_t>(m + 1));
    double prev = std::nan("");
    for (std::size_t k = 1; k <= m; ++k) {
      const double d = q.times[k] - q.times[k - 1];
      double dx2 = 0.0;
      for (std::size_t i = 0; i < D; ++i) {
        const double dx = q.positions[k][i] - q.positions[k - 1][i];
        dx2 += dx * dx;
      }
      const double v[3] = {l2 * d, l2 * l2 * d * d, l2 * dx2};
      inc.add(v);
      all.push_back(d);
      if (!std::isnan(prev)) pairs.emplace_back(prev, d);
      prev = d;
    }
  }
  s.censored_fraction = s.paths ? static_cast<double>(s.censored_paths) / static_cast<double>(s.paths) : 1.0;
  s.increments = inc.count();
  const Estimate e = inc.estimate();
  if (s.increments >= 2) {
    s.mean_increment = scalar_estimate(e.value[0], e.std_error[0], s.increments);
    s.second_increment = scalar_estimate(e.value[1], e.std_error[1], s.increments);
    s.displacement_sq = scalar_estimate(e.value[2], e.std_error[2], s.increments);
  }
  if (s.increments < 100) s.flags.push_back("few_increments");
  if (s.censored_fraction > 0.2) s.flags.push_back("censoring");
  if (s.paths && static_cast<double>(s.short_paths) > 0.05 * static_cast<double>(s.paths))
    s.flags.push_back("short_paths");

  if (!all.empty()) {
    std::vector<double> scaled(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) scaled[i] = l2 * all[i];
    std::sort(scaled.begin(), scaled.end());
    const double top = scaled[static_cast<std::size_t>(0.99 * static_cast<double>(scaled.size() - 1))];
    std::vector<double> fx, fy, fw;
    for (int j = 0; j <= 10; ++j) {
      const double t = scaled.front() + (top - scaled.front()) * j / 10.0;
      TailPoint p;
      p.t = t;
      p.n = scaled.size();
      p.count = static_cast<std::uint64_t>(scaled.end() - std::lower_bound(scaled.begin(), scaled.end(), t));
      p.ci = wilson_interval(p.count, p.n);
      s.tail.push_back(p);
      if (p.count > 0 && p.count < p.n) {
        const double pr = static_cast<double>(p.count) / static_cast<double>(p.n);
        fx.push_back(t);
        fy.push_back(std::log(pr));
        fw.push_back(static_cast<double>(p.n) * pr / (1.0 - pr));
      }
    }
    if (fx.size() >= 2) s.tail_fit = linear_fit(fx, fy, fw);
  }

  if (pairs.size() >= 3) {
    double m = 0.0;
    for (double v : all) m += v;
    m /= static_cast<double>(all.size());
    double num = 0.0, den = 0.0;
    for (double v : all) den += (v - m) * (v - m);
    for (const auto& [a, b] : pairs) num += (a - m) * (b - m);
    den *= static_cast<double>(pairs.size()) / static_cast<double>(all.size());
    s.lag1 = {num / den, 1.0 / std::sqrt(static_cast<double>(pairs.size())), pairs.size()};
  } else {
    s.lag1 = {std::nan(""), std::nan(""), pairs.size()};
  }

  for (std::uint64_t k = 1; k <= k_max; ++k) {
    KTailPoint p;
    p.k = k;
    p.n = Ks.size();
    p.count = static_cast<std::uint64_t>(std::count_if(Ks.begin(), Ks.end(), [k](auto v) { return v >= k; }));
    p.bound = std::ldexp(1.0, 1 - static_cast<int>(k));
    p.ci = wilson_interval(p.count, p.n, 3.0);
    s.k_tail.push_back(p);
  }
  s.first_success =
      Ks.empty() ? std::nan("")
                 : static_cast<double>(std::count(Ks.begin(), Ks.end(), std::uint64_t{1})) / static_cast<double>(Ks.size());
  return s;
}

/// E[X(tau_{k+1}) - X(tau_k)] / E[tau_{k+1} - tau_k] over the first m
/// increments of each path (m = 0 picks increments_per_path), with a
/// delta-method standard error clustered by `cluster(seq)`.
template <std::size_t D, typename ClusterFn>
Estimate ratio_velocity_estimate(std::span<const RegenerationSequence<D>> seqs, ClusterFn cluster,
                                 std::uint64_t m = 0) {
  if (m == 0) m = increments_per_path(seqs);
  struct Sums {
    Vec<D> dx{};
    double dt = 0.0;
    std::uint64_t n = 0;
  };
  std::map<std::uint64_t, Sums> groups;
  std::uint64_t short_paths = 0;
  for (const auto& q : seqs) {
    auto& g = groups[cluster(q)];
    if (q.times.size() < m + 1) {
      ++short_paths;
      continue;
    }
    for (std::size_t k = 1; k <= m; ++k) {
      for (std::size_t i = 0; i < D; ++i) g.dx[i] += q.positions[k][i] - q.positions[k - 1][i];
      g.dt += q.times[k] - q.times[k - 1];
      ++g.n;
    }
  }
  Estimate e;
  e.rows = D;
  Vec<D> sx{};
  double st = 0.0;
  std::uint64_t n = 0, used = 0;
  for (const auto& [k, g] : groups) {
    if (!g.n) continue;
    for (std::size_t i = 0; i < D; ++i) sx[i] += g.dx[i];
    st += g.dt;
    n += g.n;
    ++used;
  }
  e.n_samples = n;
  for (std::size_t i = 0; i < D; ++i) {
    const double r = st > 0.0 ? sx[i] / st : std::nan("");
    double ss = 0.0;
    for (const auto& [k, g] : groups) {
      if (!g.n) continue;
      const double res = g.dx[i] - r * g.dt;
      ss += res * res;
    }
    const double m = static_cast<double>(used);
    e.value.push_back(r);
    e.std_error.push_back(used >= 2 ? std::sqrt(ss * m / (m - 1.0)) / st : std::nan(""));
  }
  if (n < 100) e.flag("few_increments");
  if (static_cast<double>(short_paths) > 0.05 * static_cast<double>(seqs.size())) e.flag("short_paths");
  return e;
}

template <std::size_t D>
Estimate ratio_velocity_estimate(std::span<const RegenerationSequence<D>> seqs) {
  return ratio_velocity_estimate(seqs, [](const RegenerationSequence<D>& q) { return q.path_id; });
}

/// Simulates perturbed paths sampled at lambda^-2 / 100 and detects their
/// regenerations. Trajectories are dropped after detection.
template <std::size_t D>
std::vector<RegenerationSequence<D>> simulate_regenerations(const EnvironmentFamily<D>& family,
                                                            const SimulationConfig& cfg,
                                                            const RegenerationParams& params) {
  SimulationConfig c = cfg;
  c.keep_stride = regeneration_stride(cfg.lambda, cfg.dt);
  if (c.keep_stride < 1) throw ConfigError("sim.dt", "dt too coarse to sample lambda^-2 / 100");
  validate(params);
  const Vec<D> e1 = to_vec<D>(cfg.direction);
  return simulate_ensemble(family, c, true, false, [&](const PathRecord<D>& r) {
    if (!r.ok()) throw SimulationError("path " + std::to_string(r.path_id) + ": " + r.diagnostic);
    auto seq = detect_regenerations<D>(r.trajectory, e1, cfg.lambda, params);
    seq.env_id = r.env_id;
    seq.path_id = r.path_id;
    return seq;
  });
}

}  // namespace einrel
