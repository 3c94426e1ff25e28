#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "einrel/stats.hpp"

using namespace einrel;

TEST(Stats, KolmogorovSurvivalReferenceValues) {
  EXPECT_NEAR(kolmogorov_survival(1.36), 0.0494, 5e-4);
  EXPECT_NEAR(kolmogorov_survival(1.63), 0.0098, 2e-4);
  EXPECT_NEAR(kolmogorov_survival(0.5), 0.9639, 5e-4);
  EXPECT_NEAR(kolmogorov_survival(1.18 - 1e-9), kolmogorov_survival(1.18 + 1e-9), 1e-7);
  EXPECT_EQ(kolmogorov_survival(0.0), 1.0);
}

TEST(Stats, KsDetectsShiftAndAcceptsSameLaw) {
  std::mt19937_64 g(1);
  std::normal_distribution<double> nd;
  std::vector<double> a(2000), b(2000), c(2000);
  for (auto& v : a) v = nd(g);
  for (auto& v : b) v = nd(g);
  for (auto& v : c) v = nd(g) + 0.3;
  EXPECT_GT(ks_two_sample(a, b).p_value, 0.001);
  EXPECT_LT(ks_two_sample(a, c).p_value, 1e-6);
}

TEST(Stats, KsPValuesRoughlyUniformUnderNull) {
  std::mt19937_64 g(2);
  std::normal_distribution<double> nd;
  int below = 0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> a(300), b(300);
    for (auto& v : a) v = nd(g);
    for (auto& v : b) v = nd(g);
    below += ks_two_sample(a, b).p_value < 0.1;
  }
  EXPECT_NEAR(below / double(reps), 0.1, 0.05);
}

TEST(Stats, WilsonInterval) {
  const auto w = wilson_interval(50, 100);
  EXPECT_NEAR(w.lo, 0.4038, 1e-4);
  EXPECT_NEAR(w.hi, 0.5962, 1e-4);
  const auto z = wilson_interval(0, 100);
  EXPECT_NEAR(z.lo, 0.0, 1e-15);
  EXPECT_NEAR(z.hi, 0.037, 1e-3);
}

TEST(Stats, LinearFitRecoversLine) {
  std::vector<double> x{0, 1, 2, 3, 4}, y;
  for (double v : x) y.push_back(2.0 - 0.5 * v);
  const auto f = linear_fit(x, y);
  EXPECT_NEAR(f.slope, -0.5, 1e-14);
  EXPECT_NEAR(f.intercept, 2.0, 1e-14);
  EXPECT_NEAR(f.slope_se, 0.0, 1e-12);
}

TEST(Stats, NormalQuantile) {
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_cdf(1.959963984540054), 0.975, 1e-12);
}

TEST(Stats, LagOneAutocorrelation) {
  std::vector<double> alt;
  for (int i = 0; i < 100; ++i) alt.push_back(i % 2 ? 1.0 : -1.0);
  EXPECT_NEAR(lag1_autocorrelation(alt).value, -0.99, 1e-12);
}
