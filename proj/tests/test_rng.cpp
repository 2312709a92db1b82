#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "amorgp/rng.hpp"

using amorgp::Rng;

TEST_CASE("identical seeds give identical streams", "[rng]") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(a.uniform() == b.uniform());
    REQUIRE(a.normal() == b.normal());
    REQUIRE(a.gamma(2.0, 3.0) == b.gamma(2.0, 3.0));
  }
}

TEST_CASE("gamma moments match shape/rate reading", "[rng]") {
  Rng rng(42);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.gamma(2.0, 3.0);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  REQUIRE(std::abs(mean - 2.0 / 3.0) < 0.01);
  REQUIRE(std::abs(var - 2.0 / 9.0) < 0.02);

  double lsum = 0.0;
  for (int i = 0; i < n; ++i) lsum += rng.gamma(2.0, 5.0);
  REQUIRE(std::abs(lsum / n - 0.4) < 0.01);
}

TEST_CASE("exponential mean is 1/rate", "[rng]") {
  Rng rng(43);
  const double rate = 1.0 / (0.15 * 0.15);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += rng.exponential(rate);
  REQUIRE(std::abs(sum / n - 0.0225) < 0.001);
}

TEST_CASE("geometric has support {1,2,...} and mean 1/p", "[rng]") {
  Rng rng(44);
  const int n = 100000;
  long total = 0;
  int min_seen = 1 << 30;
  for (int i = 0; i < n; ++i) {
    const int k = rng.geometric(0.6);
    total += k;
    min_seen = std::min(min_seen, k);
  }
  REQUIRE(min_seen == 1);
  REQUIRE(std::abs(static_cast<double>(total) / n - 1.0 / 0.6) < 0.02);
}

TEST_CASE("uniform_int covers both endpoints uniformly", "[rng]") {
  Rng rng(45);
  std::array<int, 6> counts{};
  const int n = 60000;
  for (int i = 0; i < n; ++i) counts[rng.uniform_int(0, 5)]++;
  for (int c : counts)
    REQUIRE(std::abs(c / static_cast<double>(n) - 1.0 / 6.0) < 0.01);
}

TEST_CASE("normal has zero mean and unit variance", "[rng]") {
  Rng rng(46);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  REQUIRE(std::abs(sum / n) < 0.02);
  REQUIRE(std::abs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("derived stream seeds differ", "[rng]") {
  const auto s0 = Rng::derive_seed(123, 0);
  const auto s1 = Rng::derive_seed(123, 1);
  REQUIRE(s0 != s1);
  REQUIRE(Rng::derive_seed(123, 0) == s0);
}
