#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>

namespace emoseq {

/// Seeded generator threaded through every stochastic step
/// (initialization, dropout, shuffling, corpus synthesis).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  template <class Item>
  void shuffle(std::span<Item> items) {
    std::shuffle(items.begin(), items.end(), engine_);
  }

  /// Independent child stream, so adding draws in one consumer does not
  /// shift another.
  Rng fork() { return Rng(engine_()); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace emoseq
