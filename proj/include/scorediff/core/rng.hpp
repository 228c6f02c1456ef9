#pragma once

#include <cstdint>
#include <random>

#include "scorediff/core/tensor.hpp"

namespace scorediff {

/// Seeded generator used everywhere randomness is needed. Results are
/// reproducible for a given seed and standard library build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::uint64_t next() { return engine_(); }

  template <class T>
  Tensor<T> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(normal(0.0, stddev));
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace scorediff
