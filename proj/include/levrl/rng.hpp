#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "levrl/common.hpp"

LEVRL_NAMESPACE_BEGIN

/// Seed for the named substream `stream` of `root`, e.g. ("rollout", 17).
/// Distinct (stream, index) pairs give unrelated seeds.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index = 0);

/// Seeded generator with draw helpers that do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in [0, n).
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  /// Index drawn from unnormalized non-negative weights.
  std::size_t categorical(std::span<const double> weights);

 private:
  std::mt19937_64 engine_;
};

LEVRL_NAMESPACE_END
