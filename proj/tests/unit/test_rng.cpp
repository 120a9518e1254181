#include <doctest.h>

#include <cmath>
#include <vector>

#include "hrmsm/rng.hpp"

using namespace hrmsm;

TEST_CASE("derived streams are reproducible and distinct") {
  Rng a = Rng::derive(42, {1, 2, 3});
  Rng b = Rng::derive(42, {1, 2, 3});
  Rng c = Rng::derive(42, {1, 2, 4});
  CHECK(a.next() == b.next());
  CHECK(a.next() == b.next());
  Rng a2 = Rng::derive(42, {1, 2, 3});
  CHECK(a2.next() != c.next());
}

TEST_CASE("uniform01 stays in [0,1) and has the right mean") {
  Rng rng(7);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / 100000 - 0.5) < 0.01);
}

TEST_CASE("normal moments") {
  Rng rng(11);
  double sum = 0.0, sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(1.0, 2.0);
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean - 1.0) < 0.02);
  CHECK(std::abs(var - 4.0) < 0.1);
}

TEST_CASE("binomial matches moments and bounds") {
  Rng rng(13);
  const long n = 500;
  const double p = 0.04;
  double sum = 0.0, sumsq = 0.0;
  const int reps = 50000;
  for (int i = 0; i < reps; ++i) {
    const long c = rng.binomial(n, p);
    REQUIRE(c >= 0);
    REQUIRE(c <= n);
    sum += static_cast<double>(c);
    sumsq += static_cast<double>(c) * static_cast<double>(c);
  }
  const double mean = sum / reps;
  const double var = sumsq / reps - mean * mean;
  CHECK(std::abs(mean - n * p) < 0.1);          // sd of mean ~ 0.02
  CHECK(std::abs(var - n * p * (1 - p)) < 0.6);  // true var 19.2
}

TEST_CASE("binomial edge cases") {
  Rng rng(17);
  CHECK(rng.binomial(0, 0.5) == 0);
  CHECK(rng.binomial(10, 0.0) == 0);
  CHECK(rng.binomial(10, 1.0) == 10);
  // Large-p path mirrors through 1-p.
  long c = rng.binomial(100, 0.97);
  CHECK(c >= 80);
}

TEST_CASE("categorical respects the probability vector") {
  Rng rng(19);
  const std::vector<double> probs = {0.2, 0.5, 0.3};
  std::vector<long> counts(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(rng.categorical(probs))];
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(static_cast<double>(counts[static_cast<std::size_t>(k)]) / n - probs[static_cast<std::size_t>(k)]) < 0.01);
}

TEST_CASE("uniform_index covers the range") {
  Rng rng(23);
  std::vector<bool> seen(10, false);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = rng.uniform_index(10);
    REQUIRE(k < 10);
    seen[k] = true;
  }
  for (bool s : seen) CHECK(s);
}
