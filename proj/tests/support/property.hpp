#pragma once

// Hand-rolled generators for property tests. Each case gets its own seed
// derived from the suite seed, and the case index is captured so a failure
// can be replayed.

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include <doctest.h>

#include "curvecal/sensor_sim.hpp"

namespace curvecal::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double mean, double sd) { return std::normal_distribution<double>(mean, sd)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

  template <std::size_t N>
  std::array<double, N> array(double lo, double hi) {
    std::array<double, N> a{};
    for (auto& x : a) x = uniform(lo, hi);
    return a;
  }

  std::vector<double> vector(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <typename Fn>
void for_all(int cases, std::uint64_t seed, Fn&& fn) {
  for (int i = 0; i < cases; ++i) {
    CAPTURE(i);
    Gen g(mix_seed(seed, static_cast<std::uint64_t>(i)));
    fn(g);
  }
}

}  // namespace curvecal::testing
