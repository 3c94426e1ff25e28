#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "einrel/errors.hpp"
#include "einrel/rng.hpp"
#include "einrel/vec.hpp"

namespace einrel {

enum class EnvironmentKind { random_bumps, periodic_1d, constant };

inline std::string_view to_string(EnvironmentKind k) {
  switch (k) {
    case EnvironmentKind::random_bumps: return "random-bumps";
    case EnvironmentKind::periodic_1d: return "periodic-1d";
    case EnvironmentKind::constant: return "constant";
  }
  return "?";
}

inline std::optional<EnvironmentKind> parse_environment_kind(std::string_view s) {
  if (s == "random-bumps") return EnvironmentKind::random_bumps;
  if (s == "periodic-1d") return EnvironmentKind::periodic_1d;
  if (s == "constant") return EnvironmentKind::constant;
  return std::nullopt;
}

struct EnvironmentSpec {
  EnvironmentKind kind = EnvironmentKind::constant;
  int dimension = 1;
  std::uint64_t seed = 0;
  double cell_size = 1.0;
  double bump_amplitude = 0.0;   // budget for sup |V|
  double aniso_amplitude = 0.0;  // budget for sup |log sigma|
  double kappa = 1.0;            // ellipticity constant
  int bumps_per_cell = 1;

  friend bool operator==(const EnvironmentSpec&, const EnvironmentSpec&) = default;
};

/// Throws ConfigError naming the first invalid field.
inline void validate(const EnvironmentSpec& s) {
  if (s.dimension < 1) throw ConfigError("env.dimension", "must be >= 1");
  if (!(s.kappa > 0.0 && s.kappa <= 1.0)) throw ConfigError("env.kappa", "must lie in (0, 1]");
  if (!(s.cell_size > 0.0) || !std::isfinite(s.cell_size)) throw ConfigError("env.cell_size", "must be positive and finite");
  if (!(s.bump_amplitude >= 0.0) || !std::isfinite(s.bump_amplitude))
    throw ConfigError("env.bump_amplitude", "must be finite and >= 0");
  if (!(s.aniso_amplitude >= 0.0) || !std::isfinite(s.aniso_amplitude))
    throw ConfigError("env.aniso_amplitude", "must be finite and >= 0");
  if (s.kind == EnvironmentKind::periodic_1d && s.dimension != 1)
    throw ConfigError("env.dimension", "periodic-1d requires dimension 1");
  if (s.kind == EnvironmentKind::random_bumps) {
    if (s.bumps_per_cell < 1) throw ConfigError("env.bumps_per_cell", "must be >= 1");
    // sigma = exp(s) with |s| <= s_max; keep exp(2 s_max) <= kappa^(-1/2).
    if (std::exp(2.0 * s.aniso_amplitude) > std::pow(s.kappa, -0.5) * (1.0 + 1e-12))
      throw ConfigError("env.aniso_amplitude", "exp(2*aniso_amplitude) exceeds kappa^(-1/2); ellipticity would fail");
  }
}

/// Coefficients of the diffusion at one point. sigma is a scalar multiple of
/// the identity, so a = sigma^2 I and div a = grad(sigma^2).
template <std::size_t D>
struct LocalCoefficients {
  double potential = 0.0;
  Vec<D> grad_potential{};
  double sigma = 1.0;
  Vec<D> div_a{};
  Vec<D> drift{};  // b = 1/2 div a - a grad V

  double a() const { return sigma * sigma; }
};

/// Cell-local bump cache for one walker. Pure optimization: results are
/// bit-identical with or without it.
template <std::size_t D>
struct BumpCursor {
  struct Bump {
    Vec<D> center;
    double v_amp;
    double s_amp;
  };
  bool valid = false;
  std::array<std::int64_t, D> cell{};
  std::vector<Bump> bumps;
};

template <std::size_t D>
class Environment {
 public:
  using Bump = typename BumpCursor<D>::Bump;

  explicit Environment(EnvironmentSpec spec) : spec_(spec) {
    validate(spec_);
    if (spec_.dimension != static_cast<int>(D))
      throw ConfigError("env.dimension", "spec dimension " + std::to_string(spec_.dimension) +
                                             " does not match environment dimension " + std::to_string(D));
    half_width_ = 0.5 * spec_.cell_size;
    inv_hw2_ = 1.0 / (half_width_ * half_width_);
    const double overlap = std::ldexp(static_cast<double>(spec_.bumps_per_cell), static_cast<int>(D));
    v_scale_ = spec_.bump_amplitude / overlap;
    s_scale_ = spec_.aniso_amplitude / overlap;
    key_ = hash_words({spec_.seed, static_cast<std::uint64_t>(StreamTag::environment)});
    const PhiloxKey k = split_key(key_);
    for (std::size_t i = 0; i < D; ++i) {
      const auto block = philox4x32({0xFFFFFFFFu, 0xFFFFFFFFu, 0xFFFFFFFFu, static_cast<std::uint32_t>(i)}, k);
      offset_[i] = spec_.cell_size * uniform32(block[0]);
    }
  }

  const EnvironmentSpec& spec() const { return spec_; }
  EnvironmentKind kind() const { return spec_.kind; }

  /// Finite range of dependence: a cell influences points within distance
  /// cell_size/2 of itself, so two point sets further apart than
  /// (1 + sqrt(d)) * cell_size never share a cell.
  double dependence_range() const {
    if (spec_.kind != EnvironmentKind::random_bumps) return 0.0;
    return (1.0 + std::sqrt(static_cast<double>(D))) * spec_.cell_size;
  }

  /// Upper bound on sup |V| used by the clock bounds.
  double potential_bound() const { return spec_.kind == EnvironmentKind::constant ? 0.0 : spec_.bump_amplitude; }

  /// Lattice offset of the bump cells (random per seed).
  const Vec<D>& lattice_offset() const { return offset_; }

  LocalCoefficients<D> evaluate(const Vec<D>& x) const {
    BumpCursor<D> cursor;
    return evaluate(x, cursor);
  }

  LocalCoefficients<D> evaluate(const Vec<D>& x, BumpCursor<D>& cursor) const {
    LocalCoefficients<D> c;
    switch (spec_.kind) {
      case EnvironmentKind::constant:
        return c;
      case EnvironmentKind::periodic_1d: {
        const double k = 2.0 * std::numbers::pi / spec_.cell_size;
        const double phase = k * x[0];
        c.potential = spec_.bump_amplitude * std::cos(phase);
        c.grad_potential[0] = -k * spec_.bump_amplitude * std::sin(phase);
        c.drift[0] = -c.grad_potential[0];
        return c;
      }
      case EnvironmentKind::random_bumps:
        break;
    }
    refresh(x, cursor);
    double s = 0.0;
    Vec<D> grad_s = zero_vec<D>();
    for (const Bump& b : cursor.bumps) {
      Vec<D> diff;
      double r2 = 0.0;
      for (std::size_t i = 0; i < D; ++i) {
        diff[i] = x[i] - b.center[i];
        r2 += diff[i] * diff[i];
      }
      r2 *= inv_hw2_;
      if (r2 >= 1.0) continue;
      const double w = 1.0 - r2;
      const double q = w * w * w;
      const double dq = -6.0 * w * w * inv_hw2_;  // d q / d x_i = dq * diff_i
      c.potential += b.v_amp * q;
      s += b.s_amp * q;
      for (std::size_t i = 0; i < D; ++i) {
        c.grad_potential[i] += b.v_amp * dq * diff[i];
        grad_s[i] += b.s_amp * dq * diff[i];
      }
    }
    c.sigma = std::exp(s);
    const double a = c.sigma * c.sigma;
    for (std::size_t i = 0; i < D; ++i) {
      c.div_a[i] = 2.0 * a * grad_s[i];
      c.drift[i] = 0.5 * c.div_a[i] - a * c.grad_potential[i];
    }
    return c;
  }

  double potential(const Vec<D>& x) const { return evaluate(x).potential; }
  double sigma(const Vec<D>& x) const { return evaluate(x).sigma; }
  double diffusion(const Vec<D>& x) const { return evaluate(x).a(); }
  Vec<D> drift_at(const Vec<D>& x) const { return evaluate(x).drift; }

  /// Bumps owned by one lattice cell.
  void cell_bumps(const std::array<std::int64_t, D>& cell, std::vector<Bump>& out) const {
    std::uint64_t h = key_;
    for (std::size_t i = 0; i < D; ++i) h = splitmix64(h ^ splitmix64(static_cast<std::uint64_t>(cell[i])));
    const PhiloxKey k = split_key(h);
    constexpr std::size_t kWords = D + 2;
    constexpr std::uint32_t kCalls = (kWords + 3) / 4;
    for (int b = 0; b < spec_.bumps_per_cell; ++b) {
      std::array<double, kCalls * 4> u{};
      for (std::uint32_t call = 0; call < kCalls; ++call) {
        const auto block = philox4x32({static_cast<std::uint32_t>(b), call, 0x5EEDu, 0u}, k);
        for (int j = 0; j < 4; ++j) u[call * 4 + j] = uniform32(block[j]);
      }
      Bump bump;
      for (std::size_t i = 0; i < D; ++i)
        bump.center[i] = offset_[i] + (static_cast<double>(cell[i]) + u[i]) * spec_.cell_size;
      bump.v_amp = (2.0 * u[D] - 1.0) * v_scale_;
      bump.s_amp = (2.0 * u[D + 1] - 1.0) * s_scale_;
      out.push_back(bump);
    }
  }

  std::array<std::int64_t, D> cell_of(const Vec<D>& x) const {
    std::array<std::int64_t, D> cell{};
    for (std::size_t i = 0; i < D; ++i)
      cell[i] = static_cast<std::int64_t>(std::floor((x[i] - offset_[i]) / spec_.cell_size));
    return cell;
  }

 private:
  void refresh(const Vec<D>& x, BumpCursor<D>& cursor) const {
    const auto cell = cell_of(x);
    if (cursor.valid && cursor.cell == cell) return;
    cursor.cell = cell;
    cursor.valid = true;
    cursor.bumps.clear();
    // 3^D neighbouring cells in lexicographic offset order.
    std::array<int, D> off;
    off.fill(-1);
    for (;;) {
      std::array<std::int64_t, D> c = cell;
      for (std::size_t i = 0; i < D; ++i) c[i] += off[i];
      cell_bumps(c, cursor.bumps);
      std::size_t i = 0;
      while (i < D && off[i] == 1) off[i++] = -1;
      if (i == D) break;
      ++off[i];
    }
  }

  EnvironmentSpec spec_;
  double half_width_ = 0.5;
  double inv_hw2_ = 4.0;
  double v_scale_ = 0.0;
  double s_scale_ = 0.0;
  std::uint64_t key_ = 0;
  Vec<D> offset_ = zero_vec<D>();
};

/// Builds the environment for `spec`; throws ConfigError on invalid specs.
template <std::size_t D>
Environment<D> build_environment(const EnvironmentSpec& spec) {
  return Environment<D>(spec);
}

/// Seed of the env_id-th independent draw from the environment law.
inline std::uint64_t environment_seed(std::uint64_t family_seed, std::uint64_t env_id) {
  return hash_words({family_seed, env_id, 0xE57ull});
}

/// Independent environment draws sharing one spec. Deterministic kinds
/// (constant, periodic-1d) yield the same environment for every id.
template <std::size_t D>
class EnvironmentFamily {
 public:
  explicit EnvironmentFamily(EnvironmentSpec spec) : spec_(spec) { validate(spec_); }

  const EnvironmentSpec& spec() const { return spec_; }
  bool is_random() const { return spec_.kind == EnvironmentKind::random_bumps; }

  Environment<D> draw(std::uint64_t env_id) const {
    EnvironmentSpec s = spec_;
    if (is_random()) s.seed = environment_seed(spec_.seed, env_id);
    return Environment<D>(s);
  }

 private:
  EnvironmentSpec spec_;
};

}  // namespace einrel
