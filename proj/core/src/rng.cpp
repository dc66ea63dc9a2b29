#include "exgrpo/rng.hpp"

#include <algorithm>
#include <numeric>

#include "exgrpo/error.hpp"

namespace exgrpo {

Rng Rng::derive(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt),
                    static_cast<std::uint32_t>(salt >> 32)};
  std::uint32_t parts[4];
  seq.generate(parts, parts + 4);
  const std::uint64_t hi = (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
  const std::uint64_t lo = (static_cast<std::uint64_t>(parts[2]) << 32) | parts[3];
  return Rng(hi ^ (lo * 0x9E3779B97F4A7C15ULL));
}

double Rng::uniform01() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw Error("uniform_index over empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::int64_t Rng::binomial(std::int64_t trials, double p) {
  if (trials <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return trials;
  return std::binomial_distribution<std::int64_t>(trials, p)(engine_);
}

std::size_t Rng::categorical(std::span<const double> probs) {
  if (probs.empty()) throw Error("categorical over empty distribution");
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  const double u = uniform01() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding at the top end: return the last index with positive mass.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n,
                                                         std::size_t count) {
  if (count > n) throw Error("sample larger than population");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_index(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace exgrpo
