#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace einrel {

/// Fixed-dimension point/vector in R^D.
template <std::size_t D>
using Vec = std::array<double, D>;

template <std::size_t D>
constexpr double dot(const Vec<D>& a, const Vec<D>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < D; ++i) s += a[i] * b[i];
  return s;
}

template <std::size_t D>
constexpr double norm2(const Vec<D>& a) {
  return dot(a, a);
}

template <std::size_t D>
double norm(const Vec<D>& a) {
  return std::sqrt(norm2(a));
}

template <std::size_t D>
constexpr Vec<D> zero_vec() {
  Vec<D> v{};
  v.fill(0.0);
  return v;
}

template <std::size_t D>
constexpr Vec<D> unit_vec(std::size_t axis) {
  Vec<D> v = zero_vec<D>();
  v[axis] = 1.0;
  return v;
}

template <std::size_t D>
Vec<D> to_vec(std::span<const double> values) {
  if (values.size() != D) {
    throw std::invalid_argument("vector has " + std::to_string(values.size()) +
                                " components, expected " + std::to_string(D));
  }
  Vec<D> v{};
  for (std::size_t i = 0; i < D; ++i) v[i] = values[i];
  return v;
}

template <std::size_t D>
std::vector<double> to_std(const Vec<D>& v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace einrel
