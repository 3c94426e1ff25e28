#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "einrel/estimate.hpp"
#include "einrel/exact_sum.hpp"

using namespace einrel;

namespace {

std::vector<double> wild_values(unsigned seed, int n) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> m(-1.0, 1.0);
  std::uniform_int_distribution<int> e(-60, 60);
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(std::ldexp(m(g), e(g)));
  return v;
}

}  // namespace

TEST(ExactSum, CancellationIsExact) {
  ExactSum s;
  s += 1e100;
  s += 1.0;
  s += -1e100;
  EXPECT_EQ(s.value(), 1.0);
  ExactSum t;
  t += 0.1;
  t += 0.2;
  t += -0.3;
  EXPECT_EQ(t.value(), std::ldexp(1.0, -55));
}

TEST(ExactSum, OrderIndependent) {
  auto v = wild_values(1, 5000);
  ExactSum a;
  for (double x : v) a += x;
  std::mt19937 g(7);
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(v.begin(), v.end(), g);
    ExactSum b;
    for (double x : v) b += x;
    EXPECT_TRUE(a == b);
    EXPECT_EQ(a.value(), b.value());
  }
}

TEST(ExactSum, MergeIsAssociativeAndCommutative) {
  const auto v = wild_values(2, 3000);
  ExactSum p[3];
  for (std::size_t i = 0; i < v.size(); ++i) p[i % 3] += v[i];
  ExactSum left = p[0];
  left += p[1];
  left += p[2];
  ExactSum right = p[2];
  ExactSum inner = p[1];
  inner += p[0];
  right += inner;
  EXPECT_TRUE(left == right);
  EXPECT_EQ(left.value(), right.value());
}

TEST(ExactSum, SubnormalsAndExtremes) {
  ExactSum s;
  const double tiny = std::numeric_limits<double>::denorm_min();
  s += tiny;
  s += tiny;
  EXPECT_EQ(s.value(), 2 * tiny);
  ExactSum big;
  big += std::numeric_limits<double>::max();
  big += -std::numeric_limits<double>::max();
  EXPECT_EQ(big.value(), 0.0);
  ExactSum inf;
  inf += std::numeric_limits<double>::infinity();
  EXPECT_TRUE(std::isinf(inf.value()));
}

TEST(ExactSum, RoundsToNearest) {
  // 1 + 2^-53 + 2^-80 rounds up to 1 + 2^-52; the plain double sum does not.
  ExactSum s;
  s += 1.0;
  s += std::ldexp(1.0, -53);
  s += std::ldexp(1.0, -80);
  EXPECT_EQ(s.value(), 1.0 + std::ldexp(1.0, -52));
  ExactSum tie;
  tie += 1.0;
  tie += std::ldexp(1.0, -53);
  EXPECT_EQ(tie.value(), 1.0);
}

TEST(MeanAccumulator, PartitionIndependent) {
  const auto v = wild_values(3, 999);
  MeanAccumulator whole;
  for (double x : v) whole.add(x);
  MeanAccumulator parts[4];
  for (std::size_t i = 0; i < v.size(); ++i) parts[(i * 7) % 4].add(v[i]);
  MeanAccumulator merged;
  for (int k : {3, 0, 2, 1}) merged.merge(parts[k]);
  EXPECT_TRUE(merged == whole);
  EXPECT_EQ(merged.mean(), whole.mean());
  EXPECT_EQ(merged.std_error(), whole.std_error());
}

TEST(Jackknife, MeanMatchesClassicalStandardError) {
  std::vector<GroupSums> groups;
  MeanAccumulator acc;
  std::mt19937_64 g(11);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 50; ++i) {
    const double x = nd(g);
    groups.push_back({1, {x}});
    acc.add(x);
  }
  const Estimate e = jackknife_mean(groups);
  EXPECT_NEAR(e.value[0], acc.mean(), 1e-14);
  EXPECT_NEAR(e.std_error[0], acc.std_error(), 1e-12);
}
