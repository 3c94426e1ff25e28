#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace einrel {

/// Exact accumulator for sums of doubles (a Kulisch-style long fixed-point
/// register). Addition and merging are exact, so the accumulated value does
/// not depend on the order in which terms or partial sums are combined;
/// value() rounds the exact sum to nearest (ties to even).
class ExactSum {
 public:
  ExactSum() { limbs_.fill(0); }

  void add(double x) {
    if (!std::isfinite(x)) {
      special_ += x;
      return;
    }
    if (x == 0.0) return;
    int exp = 0;
    const double m = std::frexp(x, &exp);
    auto mant = static_cast<std::int64_t>(std::ldexp(m, 53));
    int pos = exp - 53 - kMinExp;
    if (pos < 0) {
      mant /= (std::int64_t{1} << -pos);  // exact: subnormal mantissas carry trailing zeros
      pos = 0;
    }
    const bool negative = mant < 0;
    const auto mag = static_cast<unsigned __int128>(negative ? -mant : mant) << (pos % 32);
    const int limb = pos / 32;
    for (int k = 0; k < 3; ++k) {
      const auto part = static_cast<std::int64_t>((mag >> (32 * k)) & 0xFFFFFFFFu);
      limbs_[limb + k] += negative ? -part : part;
    }
    if (++pending_ >= kNormalizeEvery) normalize();
  }

  ExactSum& operator+=(double x) {
    add(x);
    return *this;
  }

  ExactSum& operator+=(const ExactSum& other) {
    normalize();
    ExactSum rhs = other;
    rhs.normalize();
    for (int i = 0; i < kLimbs; ++i) limbs_[i] += rhs.limbs_[i];
    special_ += rhs.special_;
    pending_ = 2;
    return *this;
  }

  friend ExactSum operator+(ExactSum a, const ExactSum& b) { return a += b; }

  ExactSum operator-() const {
    ExactSum r = *this;
    for (auto& l : r.limbs_) l = -l;
    r.special_ = -special_;
    return r;
  }

  double value() const {
    if (special_ != 0.0 || std::isnan(special_)) return special_;
    ExactSum tmp = *this;
    tmp.normalize();
    bool negative = tmp.limbs_[kLimbs - 1] < 0;
    if (negative) {
      for (auto& l : tmp.limbs_) l = -l;
      tmp.normalize();
    }
    const double mag = tmp.magnitude();
    return negative ? -mag : mag;
  }

  friend bool operator==(const ExactSum& a, const ExactSum& b) {
    ExactSum x = a, y = b;
    x.normalize();
    y.normalize();
    if (x.limbs_ != y.limbs_) return false;
    if (std::isnan(x.special_) || std::isnan(y.special_)) return std::isnan(x.special_) && std::isnan(y.special_);
    return x.special_ == y.special_;
  }

 private:
  static constexpr int kMinExp = -1074;
  // 2208 bits: every finite double plus >60 bits of carry headroom.
  static constexpr int kLimbs = 69;
  static constexpr std::uint32_t kNormalizeEvery = 1u << 30;

  void normalize() {
    for (int i = 0; i < kLimbs - 1; ++i) {
      const std::int64_t carry = limbs_[i] >> 32;  // arithmetic shift: floor division
      limbs_[i] -= carry * (std::int64_t{1} << 32);
      limbs_[i + 1] += carry;
    }
    pending_ = 0;
  }

  // Requires normalized, non-negative limbs.
  double magnitude() const {
    int top = kLimbs - 1;
    while (top >= 0 && limbs_[top] == 0) --top;
    if (top < 0) return 0.0;
    unsigned __int128 v = 0;
    const int low = top >= 2 ? top - 2 : 0;
    for (int i = top; i >= low; --i) v = (v << 32) | static_cast<std::uint32_t>(limbs_[i]);
    bool sticky = false;
    for (int i = 0; i < low; ++i) sticky = sticky || limbs_[i] != 0;
    const int low_exp = kMinExp + 32 * low;
    const auto hi64 = static_cast<std::uint64_t>(v >> 64);
    const int bits = hi64 ? 128 - std::countl_zero(hi64) : 64 - std::countl_zero(static_cast<std::uint64_t>(v));
    if (bits <= 53) return std::ldexp(static_cast<double>(static_cast<std::uint64_t>(v)), low_exp);
    const int shift = bits - 53;
    auto kept = static_cast<std::uint64_t>(v >> shift);
    const unsigned __int128 rem = v & ((static_cast<unsigned __int128>(1) << shift) - 1);
    const unsigned __int128 half = static_cast<unsigned __int128>(1) << (shift - 1);
    if (rem > half || (rem == half && (sticky || (kept & 1u)))) ++kept;
    return std::ldexp(static_cast<double>(kept), low_exp + shift);
  }

  std::array<std::int64_t, kLimbs> limbs_;
  double special_ = 0.0;
  std::uint32_t pending_ = 0;
};

}  // namespace einrel
