#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace exgrpo {

/// Seeded random stream. Every stochastic operation in the library draws from
/// one of these so a run is a deterministic function of its seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent stream derived from (seed, salt); used to give the task
  /// suite and the training loop separate streams from one user seed.
  static Rng derive(std::uint64_t seed, std::uint64_t salt);

  double uniform01();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  std::int64_t binomial(std::int64_t trials, double p);
  /// Index drawn from a probability vector (entries >= 0, sum ~ 1).
  std::size_t categorical(std::span<const double> probs);

  /// Uniform sample of `count` distinct indices from [0, n) by partial
  /// Fisher-Yates; order of the result is the draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t count);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace exgrpo
