#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "einrel/exact_sum.hpp"

namespace einrel {

/// Scalar, vector or row-major matrix estimate with standard errors.
struct Estimate {
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::vector<double> value;
  std::vector<double> std_error;
  std::uint64_t n_samples = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::string> flags;

  std::size_t size() const { return value.size(); }
  double operator[](std::size_t i) const { return value.at(i); }
  double at(std::size_t r, std::size_t c) const { return value.at(r * cols + c); }
  double se(std::size_t i) const { return std_error.at(i); }
  double se(std::size_t r, std::size_t c) const { return std_error.at(r * cols + c); }
  bool flagged() const { return !flags.empty(); }
  bool has_flag(const std::string& f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
  void flag(const std::string& f) {
    if (!has_flag(f)) flags.push_back(f);
  }
};

inline Estimate scalar_estimate(double value, double se, std::uint64_t n) {
  return Estimate{1, 1, {value}, {se}, n, 0, {}};
}

/// Sufficient statistics (n, sum x, sum x^2) per component. Merging adds the
/// statistics exactly, so the merged state is independent of how the samples
/// were partitioned or in which order partial results arrive.
class MeanAccumulator {
 public:
  MeanAccumulator() = default;
  explicit MeanAccumulator(std::size_t components) : sum_(components), sum_sq_(components) {}

  std::size_t components() const { return sum_.size(); }
  std::uint64_t count() const { return n_; }

  void add(std::span<const double> x) {
    if (sum_.empty() && n_ == 0) {
      sum_.resize(x.size());
      sum_sq_.resize(x.size());
    }
    if (x.size() != sum_.size()) throw std::invalid_argument("MeanAccumulator: component count mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
      sum_[i] += x[i];
      sum_sq_[i] += x[i] * x[i];
    }
    ++n_;
  }

  void add(double x) { add(std::span<const double>(&x, 1)); }

  MeanAccumulator& merge(const MeanAccumulator& other) {
    if (other.n_ == 0 && other.sum_.empty()) return *this;
    if (sum_.empty() && n_ == 0) {
      sum_.resize(other.sum_.size());
      sum_sq_.resize(other.sum_.size());
    }
    if (other.sum_.size() != sum_.size()) throw std::invalid_argument("MeanAccumulator: component count mismatch");
    for (std::size_t i = 0; i < sum_.size(); ++i) {
      sum_[i] += other.sum_[i];
      sum_sq_[i] += other.sum_sq_[i];
    }
    n_ += other.n_;
    return *this;
  }

  double sum(std::size_t i) const { return sum_.at(i).value(); }
  double sum_sq(std::size_t i) const { return sum_sq_.at(i).value(); }
  const ExactSum& exact_sum(std::size_t i) const { return sum_.at(i); }
  const ExactSum& exact_sum_sq(std::size_t i) const { return sum_sq_.at(i); }

  double mean(std::size_t i = 0) const { return n_ ? sum(i) / static_cast<double>(n_) : std::nan(""); }

  double variance(std::size_t i = 0) const {
    if (n_ < 2) return std::nan("");
    const double n = static_cast<double>(n_);
    const double m = sum(i) / n;
    return std::max(0.0, (sum_sq(i) - n * m * m) / (n - 1.0));
  }

  double std_error(std::size_t i = 0) const { return std::sqrt(variance(i) / static_cast<double>(n_)); }

  Estimate estimate(std::size_t rows = 0, std::size_t cols = 1) const {
    Estimate e;
    e.rows = rows ? rows : components();
    e.cols = rows ? cols : 1;
    e.n_samples = n_;
    for (std::size_t i = 0; i < components(); ++i) {
      e.value.push_back(mean(i));
      e.std_error.push_back(std_error(i));
    }
    return e;
  }

  friend bool operator==(const MeanAccumulator& a, const MeanAccumulator& b) {
    return a.n_ == b.n_ && a.sum_ == b.sum_ && a.sum_sq_ == b.sum_sq_;
  }

 private:
  std::uint64_t n_ = 0;
  std::vector<ExactSum> sum_;
  std::vector<ExactSum> sum_sq_;
};

/// Per-group sums used by the delete-one-group jackknife.
struct GroupSums {
  std::uint64_t n = 0;
  std::vector<double> sums;
};

/// Delete-one-group jackknife for a smooth function of component means.
/// `fn` maps the vector of means to the output vector.
template <typename Fn>
Estimate jackknife(std::span<const GroupSums> groups, Fn fn) {
  if (groups.empty()) throw std::invalid_argument("jackknife: no groups");
  const std::size_t k = groups.front().sums.size();
  std::vector<ExactSum> total(k);
  std::uint64_t n_total = 0;
  for (const auto& g : groups) {
    if (g.sums.size() != k) throw std::invalid_argument("jackknife: inconsistent group width");
    for (std::size_t i = 0; i < k; ++i) total[i] += g.sums[i];
    n_total += g.n;
  }
  std::vector<double> means(k);
  for (std::size_t i = 0; i < k; ++i) means[i] = total[i].value() / static_cast<double>(n_total);
  const std::vector<double> full = fn(std::span<const double>(means));

  Estimate est;
  est.rows = full.size();
  est.value = full;
  est.std_error.assign(full.size(), std::nan(""));
  est.n_samples = n_total;

  const std::size_t g = groups.size();
  if (g < 2) return est;
  std::vector<std::vector<double>> loo;
  loo.reserve(g);
  std::vector<double> loo_means(k);
  for (const auto& grp : groups) {
    const double n_rest = static_cast<double>(n_total - grp.n);
    for (std::size_t i = 0; i < k; ++i) {
      ExactSum rest = total[i];
      rest += -grp.sums[i];
      loo_means[i] = rest.value() / n_rest;
    }
    loo.push_back(fn(std::span<const double>(loo_means)));
  }
  for (std::size_t j = 0; j < full.size(); ++j) {
    double mean_loo = 0.0;
    for (const auto& l : loo) mean_loo += l[j];
    mean_loo /= static_cast<double>(g);
    double ss = 0.0;
    for (const auto& l : loo) ss += (l[j] - mean_loo) * (l[j] - mean_loo);
    est.std_error[j] = std::sqrt(ss * static_cast<double>(g - 1) / static_cast<double>(g));
  }
  return est;
}

/// Identity-function jackknife: plain annealed means.
inline Estimate jackknife_mean(std::span<const GroupSums> groups) {
  return jackknife(groups, [](std::span<const double> m) { return std::vector<double>(m.begin(), m.end()); });
}

/// Samples pooled into jackknife groups. Independent random environments
/// form one group each; otherwise samples are spread over batches by index.
/// Group sums are exact, so the result does not depend on insertion order.
class GroupedSamples {
 public:
  static constexpr std::uint64_t kBatches = 64;

  explicit GroupedSamples(std::size_t components = 0) : components_(components) {}

  static std::uint64_t group_key(bool random_env, std::uint64_t n_envs, std::uint64_t env_id, std::uint64_t n_paths,
                                 std::uint64_t path_id) {
    if (random_env && n_envs >= 2) return env_id;
    return (env_id * n_paths + path_id) % kBatches;
  }

  void add(std::uint64_t group, std::span<const double> x) {
    if (components_ == 0) components_ = x.size();
    if (x.size() != components_) throw std::invalid_argument("GroupedSamples: component count mismatch");
    auto& g = groups_[group];
    if (g.sums.empty()) g.sums.resize(components_);
    for (std::size_t i = 0; i < components_; ++i) g.sums[i] += x[i];
    ++g.n;
  }

  void merge(const GroupedSamples& other) {
    if (components_ == 0) components_ = other.components_;
    for (const auto& [k, g] : other.groups_) {
      auto& mine = groups_[k];
      if (mine.sums.empty()) mine.sums.resize(components_);
      for (std::size_t i = 0; i < components_; ++i) mine.sums[i] += g.sums[i];
      mine.n += g.n;
    }
  }

  std::uint64_t count() const {
    std::uint64_t n = 0;
    for (const auto& [k, g] : groups_) n += g.n;
    return n;
  }
  std::size_t group_count() const { return groups_.size(); }
  std::size_t components() const { return components_; }

  std::vector<GroupSums> group_sums() const {
    std::vector<GroupSums> out;
    for (const auto& [k, g] : groups_) {
      GroupSums s{g.n, {}};
      for (const auto& e : g.sums) s.sums.push_back(e.value());
      out.push_back(std::move(s));
    }
    return out;
  }

  /// Jackknife estimate of fn(means).
  template <typename Fn>
  Estimate apply(Fn fn) const {
    const auto sums = group_sums();
    return jackknife(std::span<const GroupSums>(sums), fn);
  }

  Estimate mean() const {
    return apply([](std::span<const double> m) { return std::vector<double>(m.begin(), m.end()); });
  }

 private:
  struct Group {
    std::uint64_t n = 0;
    std::vector<ExactSum> sums;
  };
  std::size_t components_;
  std::map<std::uint64_t, Group> groups_;
};

/// Two estimates agree if their 95% confidence intervals overlap.
inline bool intervals_overlap(double a, double se_a, double b, double se_b, double z = 1.959963984540054) {
  return std::abs(a - b) <= z * (se_a + se_b);
}

/// |a - b| within k standard errors of the difference.
inline bool within_se(double a, double b, double se, double k = 3.0) { return std::abs(a - b) <= k * se; }

}  // namespace einrel
