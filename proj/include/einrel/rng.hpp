#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (key, counter), so a path's noise does not depend on which worker runs it
// or in what order paths are scheduled.
//
// Philox4x32-10: Salmon, Moraes, Dror, Shaw, "Parallel random numbers:
// as easy as 1, 2, 3", SC11.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace einrel {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

constexpr PhiloxCounter philox_round(const PhiloxCounter& c, const PhiloxKey& k) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * c[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace detail

constexpr PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key) {
  ctr = detail::philox_round(ctr, key);
  for (int r = 1; r < 10; ++r) {
    key[0] += detail::kPhiloxW0;
    key[1] += detail::kPhiloxW1;
    ctr = detail::philox_round(ctr, key);
  }
  return ctr;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Order-sensitive mix of a list of words into one 64-bit key.
constexpr std::uint64_t hash_words(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6A09E667F3BCC909ull;
  for (std::uint64_t w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

constexpr PhiloxKey split_key(std::uint64_t k) {
  return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

/// Uniform on [0, 1) with 53 random bits.
constexpr double uniform53(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi >> 5) << 26) | (lo >> 6);
  return static_cast<double>(bits) * 0x1.0p-53;
}

/// Uniform on [0, 1) with 32 random bits; plenty for environment parameters.
constexpr double uniform32(std::uint32_t w) { return static_cast<double>(w) * 0x1.0p-32; }

/// Box-Muller pair from one Philox block.
inline std::array<double, 2> normal_pair(const PhiloxCounter& block) {
  const double u1 = 1.0 - uniform53(block[0], block[1]);  // (0, 1]
  const double u2 = uniform53(block[2], block[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

/// Stream tags keep the X, Y and auxiliary streams of one path disjoint.
enum class StreamTag : std::uint64_t {
  diffusion = 1,
  time_changed = 2,
  environment = 3,
  spatial_sample = 4,
};

/// Standard normal variates indexed by a 64-bit position in the stream.
/// normal(i) is a pure function of (key, i); next() walks the stream in order
/// and caches the second half of each Box-Muller pair.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t key) : key_(split_key(key)) {}

  NormalStream(std::uint64_t base_seed, std::uint64_t env_id, std::uint64_t path_id, StreamTag tag)
      : NormalStream(hash_words({base_seed, env_id, path_id, static_cast<std::uint64_t>(tag)})) {}

  double normal(std::uint64_t index) const {
    const auto pair = normal_pair(philox4x32(block_counter(index >> 1), key_));
    return pair[index & 1u];
  }

  double next() {
    if ((position_ & 1u) == 0) cached_ = normal_pair(philox4x32(block_counter(position_ >> 1), key_));
    return cached_[position_++ & 1u];
  }

  std::uint64_t position() const { return position_; }

  void seek(std::uint64_t index) {
    position_ = index;
    if (position_ & 1u) cached_ = normal_pair(philox4x32(block_counter(position_ >> 1), key_));
  }

 private:
  static PhiloxCounter block_counter(std::uint64_t block) {
    return {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32), 0u, 0u};
  }

  PhiloxKey key_;
  std::uint64_t position_ = 0;
  std::array<double, 2> cached_{};
};

}  // namespace einrel
