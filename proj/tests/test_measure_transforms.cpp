#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "einrel/measure_transforms.hpp"

using namespace einrel;

namespace {

SimulationConfig sim(double horizon, double lambda, std::uint64_t n) {
  SimulationConfig c;
  c.horizon = horizon;
  c.lambda = lambda;
  c.n_paths = n;
  c.base_seed = 17;
  return c;
}

EnvironmentSpec periodic() {
  EnvironmentSpec s;
  s.kind = EnvironmentKind::periodic_1d;
  s.bump_amplitude = 0.5;
  return s;
}

PathRecord<1> record(double b, double bracket) {
  PathRecord<1> r;
  r.girsanov_b = b;
  r.girsanov_bracket = bracket;
  r.time = 1.0;
  return r;
}

}  // namespace

TEST(Girsanov, ZeroLambdaGivesUnitWeight) {
  const auto r = simulate_path(Environment<1>(periodic()), sim(5.0, 0.0, 1), 3, 0, false);
  ASSERT_NE(r.girsanov_b, 0.0);
  const auto w = weight_of(r, 0.0);
  EXPECT_EQ(w.log_weight, 0.0);
  EXPECT_EQ(w.weight(), 1.0);
}

TEST(Girsanov, WeightFormula) {
  const auto w = weight_of(record(0.7, 2.0), 0.3);
  EXPECT_DOUBLE_EQ(w.log_weight, 0.3 * 0.7 - 0.5 * 0.09 * 2.0);
}

TEST(Girsanov, PerturbedRecordsAreRejected) {
  const auto r = simulate_path(Environment<1>(periodic()), sim(1.0, 0.1, 1), 0, 0, true);
  EXPECT_THROW(weight_of(r, 0.1), std::invalid_argument);
}

TEST(Girsanov, LowEffectiveSampleSizeIsFlagged) {
  std::vector<PathRecord<1>> recs(100, record(0.0, 0.0));
  auto one = [](const PathRecord<1>&) { return std::vector<double>{1.0}; };
  const auto even = reweighted_estimate<1>(recs, sim(1.0, 0.0, 100), false, 1.0, one);
  EXPECT_FALSE(even.has_flag("low_ess"));
  recs[7].girsanov_b = 20.0;  // one weight dominates: ESS close to 1
  const auto skew = reweighted_estimate<1>(recs, sim(1.0, 0.0, 100), false, 1.0, one);
  EXPECT_TRUE(skew.has_flag("low_ess"));
}

// In the constant medium B(t) = W(t) and <B>(t) = t, so E[w] = 1 and
// E[w^2] = exp(lambda^2 t) = exp(alpha) exactly.
TEST(Girsanov, ConstantMediumMoments) {
  const double lam = 0.1;
  SimulationConfig c = sim(100.0, lam, 4000);
  const auto rep = girsanov_experiment(EnvironmentFamily<1>(EnvironmentSpec{}), c);
  EXPECT_NEAR(rep.alpha, 1.0, 1e-12);
  EXPECT_NEAR(rep.mean_weight[0], 1.0, 3 * rep.mean_weight.se(0));
  EXPECT_NEAR(rep.weight_second_moment[0], std::exp(1.0), 3 * rep.weight_second_moment.se(0));
  EXPECT_DOUBLE_EQ(rep.second_moment_bound, std::exp(1.0));
  EXPECT_TRUE(intervals_overlap(rep.reweighted[0], rep.reweighted.se(0), rep.direct[0], rep.direct.se(0)));
  EXPECT_NEAR(rep.direct[0], 1.0, 4 * rep.direct.se(0));
}

TEST(Girsanov, NeedsPositiveLambda) {
  EXPECT_THROW(girsanov_experiment(EnvironmentFamily<1>(EnvironmentSpec{}), sim(1.0, 0.0, 2)), ConfigError);
}

TEST(TimeChange, ClockBoundsPredicate) {
  EXPECT_TRUE(clock_rate_in_bounds(1.0, 1.0, 0.0));
  EXPECT_FALSE(clock_rate_in_bounds(1.1, 1.0, 0.0));
  EXPECT_TRUE(clock_rate_in_bounds(std::exp(-1.0), 1.0, 0.5));
  EXPECT_FALSE(clock_rate_in_bounds(0.99 * std::exp(-1.0), 1.0, 0.5));
  EXPECT_TRUE(clock_rate_in_bounds(5.0, 0.0, 0.0));
}

TEST(TimeChange, PeriodicMediumAgreesInLaw) {
  const Environment<1> env(periodic());
  SimulationConfig c = sim(30.0, 0.1, 2000);
  const auto reps = time_change_equivalence_test(env, c, 10.0, 2);
  ASSERT_EQ(reps.size(), 2u);
  for (const auto& r : reps) {
    EXPECT_EQ(r.n, 2000u);
    EXPECT_GT(r.ks.p_value, 1e-3);
    EXPECT_EQ(r.clock_violations, 0u);
    EXPECT_GE(r.clock_rate, std::exp(-1.0));
    EXPECT_LE(r.clock_rate, std::exp(1.0));
  }
  EXPECT_NE(reps[0].mean_x, reps[1].mean_x);  // repetitions use distinct seeds
}

TEST(TimeChange, TargetMustBeReachable) {
  SimulationConfig c = sim(10.0, 0.1, 10);
  try {
    time_change_equivalence_test(Environment<1>(periodic()), c, 5.0, 1);  // 10 e^{-1} < 5
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "sim.t_star");
  }
}

TEST(TimeChange, IdentityHoldsInConstantMedium) {
  EnvironmentSpec s;
  s.dimension = 2;
  SimulationConfig c = sim(50.0, 0.0, 500);
  c.direction = {1.0, 0.0};
  const auto rep = sigma_gamma_identity_check(EnvironmentFamily<2>(s), c);
  EXPECT_DOUBLE_EQ(rep.gamma[0], 1.0);
  EXPECT_EQ(rep.clock_violations, 0u);
  ASSERT_EQ(rep.relative_deviation.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LE(rep.relative_deviation[i], 4 * rep.relative_se[i] + 1e-12);
}
