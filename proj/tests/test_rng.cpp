#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bclab/rng.hpp"

using namespace bclab;

TEST_CASE("engine is the standard mt19937_64") {
  // The C++ standard fixes the 10000th output of a default-seeded engine.
  Rng rng(5489);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = rng.next_u64();
  CHECK(v == 9981545732273789042ULL);
}

TEST_CASE("equal seeds give equal streams") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    differs = differs || x != c.uniform();
  }
  CHECK(differs);
  std::vector<int> p(50), q(50);
  for (int i = 0; i < 50; ++i) p[i] = q[i] = i;
  Rng s1(7), s2(7);
  s1.shuffle(p.begin(), p.end());
  s2.shuffle(q.begin(), q.end());
  CHECK(p == q);
  CHECK(std::is_permutation(p.begin(), p.end(), q.begin()));
}

TEST_CASE("derived streams are distinct and reproducible") {
  std::set<std::uint64_t> seeds;
  for (const char* tag : {"augment-anchor", "augment-partner", "ratio", "dropout"}) {
    for (std::uint64_t i = 0; i < 100; ++i) seeds.insert(Rng::derive_seed(1, tag, i));
  }
  CHECK(seeds.size() == 400);
  CHECK(Rng::derive(3, "x", 4).next_u64() == Rng::derive(3, "x", 4).next_u64());
  CHECK(Rng::derive_seed(3, "x", 4) != Rng::derive_seed(4, "x", 4));
}

TEST_CASE("uniform, below and normal have the right distributions") {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  std::vector<int> bins(7, 0);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    ++bins[rng.below(7)];
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sum2 / n - 1.0) < 0.02);
  // Chi-square with 6 degrees of freedom; 22.46 is the 0.999 quantile.
  double chi = 0.0;
  const double expect = n / 7.0;
  for (int b : bins) chi += (b - expect) * (b - expect) / expect;
  CHECK(chi < 22.46);
  CHECK_THROWS(rng.below(0));
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-2.0, 3.0);
    REQUIRE(v >= -2.0);
    REQUIRE(v < 3.0);
  }
}
