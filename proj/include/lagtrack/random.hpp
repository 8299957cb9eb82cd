#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "lagtrack/types.hpp"

namespace lagtrack {

/// Counter-based random stream. Each (seed, point, frame, particle) key
/// owns an independent SplitMix64 sequence, so draws do not depend on the
/// order in which particles or points are processed.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  RandomStream(std::uint64_t seed, std::uint64_t point, std::uint64_t frame,
               std::uint64_t particle);
  explicit RandomStream(std::uint64_t state) : state_(state) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  double uniform();  // [0, 1)
  double normal();
  Vec2 normal2() {
    const double a = normal();
    return {a, normal()};
  }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t mix64(std::uint64_t x);

/// Key for the random draws of one tracked point. The frame index and the
/// particle index complete the key at draw time.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t point = 0;

  RandomStream stream(std::uint64_t frame, std::uint64_t particle) const {
    return RandomStream(seed, point, frame, particle);
  }
};

}  // namespace lagtrack
