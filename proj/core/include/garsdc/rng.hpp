#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace garsdc {

/// Seeded generator used everywhere a trace must be reproducible.
///
/// Engine: std::mt19937_64 (sequence fixed by the C++ standard). Derived
/// draws do not go through <random> distributions, whose output is
/// implementation-defined:
///   - uniform_index(n): rejection sampling on the top bits, unbiased;
///   - uniform01():      top 53 bits scaled by 2^-53;
///   - fork(k):          child seeded with splitmix64(next() ^ k).
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64+rejection/v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Uniform real in [0, 1).
  double uniform01();

  bool bernoulli(double p) { return uniform01() < p; }

  /// -1 or +1 with equal probability.
  int sign() { return (next() >> 63) != 0 ? 1 : -1; }

  double normal();

  /// Independent child stream; advances this generator by one draw.
  Rng fork(std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace garsdc
