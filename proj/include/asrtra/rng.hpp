#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace asrtra {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent stream seed from a parent seed and a label.
/// All per-utterance randomness goes through here so results never depend
/// on processing order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept {
  return mix64(seed ^ mix64(fnv1a(tag)));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view a,
                                    std::string_view b) noexcept {
  return derive_seed(derive_seed(seed, a), b);
}

/// Deterministic PRNG. Uniform draws avoid std::uniform_real_distribution
/// so streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace asrtra
