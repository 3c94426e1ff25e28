#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "einrel/regeneration.hpp"

using namespace einrel;

namespace {

// Samples of z = lambda t with spacing h.
std::vector<TrajectorySample<1>> linear_path(double lambda, double h, std::size_t n) {
  std::vector<TrajectorySample<1>> traj(n);
  for (std::size_t i = 0; i < n; ++i) {
    traj[i].time = static_cast<double>(i) * h;
    traj[i].x[0] = lambda * traj[i].time;
  }
  return traj;
}

}  // namespace

// With l = 2.5, R = 2.5 / lambda: 3R is reached at 7.5 blocks, the grid point
// 8 blocks follows after an oscillation of R/5, and S = N + 1 block = 9 blocks.
// A monotone path never backtracks, so tau_k = 9k blocks and K = 1.
TEST(Regeneration, LinearPathHandTrace) {
  const double lam = 0.1, beta = 100.0;
  RegenerationParams p;
  p.ladder_scale = 2.5;
  const auto traj = linear_path(lam, 1.0, 100 * 60 + 1);
  const auto seq = detect_regenerations<1>(traj, Vec<1>{1.0}, lam, p);
  ASSERT_GE(seq.times.size(), 5u);
  for (std::size_t k = 0; k < seq.times.size(); ++k) {
    EXPECT_DOUBLE_EQ(seq.times[k], 9.0 * beta * static_cast<double>(k + 1));
    EXPECT_EQ(seq.K[k], 1u);
  }
  // The last certified tau leaves a full no-backtrack horizon before the end.
  EXPECT_LE(seq.times.back() + 10 * beta, traj.back().time);
  EXPECT_GT(seq.times.back() + 9 * beta + 10 * beta, traj.back().time);
  EXPECT_EQ(seq.backtracks, 0u);
  EXPECT_EQ(seq.late_backtracks, 0u);
  EXPECT_FALSE(seq.censored);
}

// A drop of more than R right after the first candidate forces a restart.
TEST(Regeneration, BacktrackRestartsLadder) {
  const double lam = 0.1;
  RegenerationParams p;
  p.ladder_scale = 2.5;
  auto traj = linear_path(lam, 1.0, 100 * 80 + 1);
  const double R = p.radius(lam);
  // Candidate S at 900: dip to z(900) - 2R on (950, 1050), then resume.
  for (std::size_t i = 951; i < traj.size(); ++i) {
    const double base = lam * traj[i].time;
    traj[i].x[0] = i < 1050 ? lam * 900.0 - 2 * R : base - 3 * R;
  }
  const auto seq = detect_regenerations<1>(traj, Vec<1>{1.0}, lam, p);
  ASSERT_FALSE(seq.times.empty());
  EXPECT_GT(seq.times[0], 1050.0);
  EXPECT_GE(seq.K[0], 2u);
  EXPECT_GE(seq.backtracks, 1u);
}

TEST(Regeneration, ShortPathIsCensored) {
  const auto traj = linear_path(0.1, 1.0, 500);
  const auto seq = detect_regenerations<1>(traj, Vec<1>{1.0}, 0.1, RegenerationParams{});
  EXPECT_TRUE(seq.censored);
  EXPECT_TRUE(seq.times.empty());
}

TEST(Regeneration, SpacingMustDivideBlock) {
  const auto traj = linear_path(0.1, 3.0, 1000);
  EXPECT_THROW(detect_regenerations<1>(traj, Vec<1>{1.0}, 0.1, RegenerationParams{}), ConfigError);
}

TEST(Regeneration, ParameterValidation) {
  RegenerationParams p;
  p.ladder_scale = 0.5;
  EXPECT_THROW(validate(p), ConfigError);
  p = {};
  p.horizon_blocks = 5;
  try {
    validate(p);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "regen.horizon_blocks");
  }
}

TEST(Regeneration, IncrementsPerPathIsHalfTheMedian) {
  std::vector<RegenerationSequence<1>> seqs(3);
  seqs[0].times.assign(11, 0.0);  // 10 increments
  seqs[1].times.assign(7, 0.0);   // 6
  seqs[2].times.assign(2, 0.0);   // 1
  EXPECT_EQ(increments_per_path<1>(seqs), 3u);
  EXPECT_EQ(increments_per_path<1>(std::vector<RegenerationSequence<1>>(2)), 1u);
}

TEST(Regeneration, ConstantMediumProperties) {
  const double lam = 0.2;
  SimulationConfig c;
  c.lambda = lam;
  c.dt = 0.01;
  c.horizon = 200.0 / (lam * lam);
  c.n_paths = 150;
  c.base_seed = 8;
  const auto seqs = simulate_regenerations(EnvironmentFamily<1>(EnvironmentSpec{}), c, RegenerationParams{});
  std::size_t with_tau = 0;
  for (const auto& q : seqs) with_tau += !q.times.empty();
  EXPECT_GE(with_tau, 0.95 * seqs.size());
  const auto s = regeneration_statistics<1>(seqs, lam);
  EXPECT_GE(s.first_success, 0.5);
  EXPECT_LT(s.tail_fit.slope, 0.0);
  EXPECT_EQ(s.short_paths, 0u);
  for (const auto& k : s.k_tail) EXPECT_LE(k.ci.lo, k.bound) << "k=" << k.k;
  const Estimate ratio = ratio_velocity_estimate<1>(seqs);
  EXPECT_GT(ratio[0], 0.0);
  EXPECT_NEAR(ratio[0], lam, 4 * ratio.se(0));
}
