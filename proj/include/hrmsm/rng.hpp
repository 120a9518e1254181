#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>

namespace hrmsm {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256** with splitmix64-based stream derivation.
//
// Every stochastic task in the project draws from a stream derived from
// (seed, task ids...), never from a shared sequential generator, so results
// are reproducible and independent of scheduling and thread count. All
// variate transforms are implemented here rather than with <random>
// distributions, which keeps draw sequences stable across standard-library
// versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : state_) w = splitmix64_next(sm);
  }

  // Stream for a task identified by (seed, ids...). Distinct id tuples give
  // independent streams.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t sm = seed ^ 0xa0761d6478bd642fULL;
    for (std::uint64_t id : ids) {
      sm ^= splitmix64_next(sm) + 0x8bb84b93962eacc9ULL * (id + 1);
      sm = splitmix64_next(sm);
    }
    return Rng(sm);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal(double mean = 0.0, double sd = 1.0) {
    // Box-Muller; the second variate is discarded so each call consumes a
    // fixed number of raw draws.
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Index into a probability vector (assumed to sum to ~1).
  int categorical(std::span<const double> probs) {
    const double u = uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // Inversion with a pmf walk; O(n*p) expected, exact for the modest trial
  // counts used in count outcomes.
  long binomial(long n, double p) {
    if (n <= 0) return 0;
    if (p <= 0.0) return 0;
    if (p >= 1.0) return n;
    if (p > 0.5) return n - binomial(n, 1.0 - p);
    const double q = 1.0 - p;
    const double ratio = p / q;
    double pmf = std::pow(q, static_cast<double>(n));
    if (pmf <= 0.0) {
      // Deep tail (n*log(q) underflows); fall back to a bernoulli sum.
      long c = 0;
      for (long i = 0; i < n; ++i) c += bernoulli(p) ? 1 : 0;
      return c;
    }
    double u = uniform01();
    long k = 0;
    while (u > pmf && k < n) {
      u -= pmf;
      pmf *= ratio * static_cast<double>(n - k) / static_cast<double>(k + 1);
      ++k;
    }
    return k;
  }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace hrmsm
