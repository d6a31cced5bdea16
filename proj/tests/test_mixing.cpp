#include <doctest.h>

#include <cmath>

#include "bclab/instrumentation.hpp"
#include "bclab/mixing.hpp"
#include "oracles.hpp"

using namespace bclab;

namespace {

Tensor64 vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor64(Shape{n}, std::move(v));
}

std::vector<std::uint32_t> balanced_labels(std::size_t per_class, std::size_t classes) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < per_class * classes; ++i) out.push_back(static_cast<std::uint32_t>(i % classes));
  return out;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("sample_ratio") {
  Rng a(1), b(1);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double r = sample_ratio(a);
    CHECK(r == sample_ratio(b));
    REQUIRE(r > 0.0);
    REQUIRE(r < 1.0);
    sum += r;
  }
  CHECK(sum / n >= 0.495);
  CHECK(sum / n <= 0.505);
  CHECK(clamp_ratio(0.0) == kRatioClamp);
  CHECK(clamp_ratio(1.0) == 1.0 - kRatioClamp);
}

TEST_CASE("sample_simplex draws from the flat simplex") {
  Rng rng(2);
  std::vector<double> mean(3, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto c = sample_simplex(rng, 3);
    REQUIRE(c.size() == 3);
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      REQUIRE(c[j] >= 0.0);
      mean[j] += c[j];
      s += c[j];
    }
    REQUIRE(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (double m : mean) CHECK(m / n == doctest::Approx(1.0 / 3.0).epsilon(0.01));
}

TEST_CASE("mix_labels") {
  auto t = mix_labels(one_hot(0, 3), one_hot(2, 3), 0.3);
  CHECK(t[0] == doctest::Approx(0.3));
  CHECK(t[1] == 0.0);
  CHECK(t[2] == doctest::Approx(0.7));
  CHECK(mix_labels(one_hot(1, 4), one_hot(3, 4), 1.0) == one_hot(1, 4));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double r = rng.uniform();
    CHECK(mix_labels(one_hot(2, 5), one_hot(2, 5), r) == one_hot(2, 5));
    auto m = mix_labels(one_hot(rng.below(10), 10), one_hot(rng.below(10), 10), r);
    double s = 0.0;
    for (double v : m) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  const std::uint32_t cls[3] = {0, 4, 2};
  const double co[3] = {0.2, 0.5, 0.3};
  auto k3 = mix_labels(cls, co, 5);
  CHECK(k3 == std::vector<double>{0.2, 0, 0.3, 0, 0.5});
}

TEST_CASE("simple mix") {
  CHECK(mix_simple(vec({2}), vec({4}), 0.5)[0] == doctest::Approx(3.0));
  auto x1 = oracle::random_tensor<double>({3, 4, 4}, 1);
  auto x2 = oracle::random_tensor<double>({3, 4, 4}, 2);
  CHECK(mix_simple(x1, x2, 1.0) == x1);
  auto m = mix_simple(vec({0, 4}), vec({4, 0}), 0.25);
  CHECK(m[0] == doctest::Approx(3.0));
  CHECK(m[1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(mix_simple(vec({1}), vec({1, 2}), 0.5), ShapeError);
}

TEST_CASE("zero-mean mix") {
  auto m = mix_zero_mean(vec({2, 0}), vec({4, 4}), 0.5);
  CHECK(m[0] == doctest::Approx(0.5));
  CHECK(m[1] == doctest::Approx(-0.5));
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    auto x1 = oracle::random_tensor<double>({3, 8, 8}, 100 + i, -3, 5);
    auto x2 = oracle::random_tensor<double>({3, 8, 8}, 200 + i, 0, 9);
    CHECK(std::abs(per_image_stats(mix_zero_mean(x1, x2, rng.uniform())).mean) < 1e-12);
  }
  auto x1 = oracle::random_tensor<double>({8}, 5);
  auto x2 = oracle::random_tensor<double>({8}, 6);
  CHECK(oracle::rel_error(mix_zero_mean(x1, x2, 1.0), sub(x1, per_image_stats(x1).mean)) < 1e-15);
}

TEST_CASE("variance-preserving mix") {
  auto m = mix_variance_preserving(vec({2, 0}), vec({4, 4}), 0.5);
  CHECK(m[0] == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK(m[1] == doctest::Approx(-0.70711).epsilon(1e-5));
  auto x1 = oracle::random_tensor<double>({8}, 7);
  auto x2 = oracle::random_tensor<double>({8}, 8);
  CHECK(oracle::rel_error(mix_variance_preserving(x1, x2, 1.0), sub(x1, per_image_stats(x1).mean)) < 1e-15);

  // Independent zero-mean unit-variance inputs keep unit variance.
  Rng rng(9);
  const std::size_t n = 100000;
  Tensor64 a(Shape{n}), b(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
  }
  for (double r : {0.1, 0.3, 0.5, 0.8}) {
    const auto s = per_image_stats(mix_variance_preserving(a, b, r));
    CHECK(s.std * s.std == doctest::Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("BC+ mix") {
  SUBCASE("equal sigmas reduce to the variance-preserving mix") {
    auto x1 = oracle::random_tensor<double>({3, 4, 4}, 10);
    auto x2 = add(scale(x1, -1.0), 3.0);  // same sigma, different image
    for (double r : {0.1, 0.37, 0.5, 0.9}) {
      auto bp = mix_bc_plus(x1, x2, r);
      CHECK(bp.coefficients[0] == doctest::Approx(r).epsilon(1e-12));
      CHECK(oracle::rel_error(bp.image, mix_variance_preserving(x1, x2, r)) < 1e-9);
    }
  }
  SUBCASE("sigma1 = 1, sigma2 = 2, r = 0.5") {
    const double p = bc_plus_coefficient(0.5, 1.0, 2.0);
    CHECK(p == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(p * 1.0 == doctest::Approx((1 - p) * 2.0).epsilon(1e-12));
    // Perceived amplitudes keep the r : (1 - r) ratio for any r.
    for (double r : {0.2, 0.7}) {
      const double q = bc_plus_coefficient(r, 1.0, 2.0);
      CHECK((q * 1.0) / ((1 - q) * 2.0) == doctest::Approx(r / (1 - r)).epsilon(1e-12));
    }
  }
  SUBCASE("r at 1 gives x1 minus its mean") {
    auto x1 = oracle::random_tensor<double>({16}, 11);
    auto x2 = oracle::random_tensor<double>({16}, 12, -2, 2);
    auto bp = mix_bc_plus(x1, x2, 1.0);
    CHECK(bp.coefficients[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(oracle::rel_error(bp.image, sub(x1, per_image_stats(x1).mean)) < 1e-5);
  }
  SUBCASE("p is monotone in r") {
    for (auto [s1, s2] : {std::pair{1.0, 2.0}, std::pair{3.0, 0.5}, std::pair{1.0, 1.0}}) {
      double prev = -1.0;
      for (int i = 0; i < 1000; ++i) {
        const double p = bc_plus_coefficient((i + 0.5) / 1000.0, s1, s2);
        REQUIRE(p > prev);
        prev = p;
      }
    }
  }
  SUBCASE("constant images are guarded") {
    Tensor64 c1(Shape{4}, 2.0), c2(Shape{4}, 5.0);
    auto bp = mix_bc_plus(c1, c2, 0.5);
    CHECK(all_finite(bp.image));
  }
}

TEST_CASE("sound-pressure mix") {
  CHECK(sound_db_coefficient(0.3, 5.0, 5.0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(sound_db_coefficient(0.5, 20.0, 0.0) == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
  CHECK(sound_db_coefficient(1.0, 3.0, -2.0) == doctest::Approx(1.0).epsilon(1e-5));
  auto x1 = vec({1, 2});
  auto x2 = vec({3, -1});
  auto m = mix_sound_db(x1, x2, 0.5, 20.0, 0.0);
  const double p = 1.0 / 11.0, d = std::sqrt(p * p + (1 - p) * (1 - p));
  CHECK(m[0] == doctest::Approx((p * 1 + (1 - p) * 3) / d));
  CHECK(m[1] == doctest::Approx((p * 2 + (1 - p) * -1) / d));
}

TEST_CASE("every method is symmetric under swapping inputs") {
  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    auto x1 = oracle::random_tensor<double>({3, 4, 4}, 300 + t, -1, 3);
    auto x2 = oracle::random_tensor<double>({3, 4, 4}, 400 + t, -5, 1);
    const double r = rng.uniform(0.01, 0.99);
    const double g1 = rng.uniform(-10, 10), g2 = rng.uniform(-10, 10);
    CHECK(oracle::rel_error(mix_simple(x1, x2, r), mix_simple(x2, x1, 1 - r)) < kTol);
    CHECK(oracle::rel_error(mix_zero_mean(x1, x2, r), mix_zero_mean(x2, x1, 1 - r)) < kTol);
    CHECK(oracle::rel_error(mix_variance_preserving(x1, x2, r),
                            mix_variance_preserving(x2, x1, 1 - r)) < kTol);
    CHECK(oracle::rel_error(mix_bc_plus(x1, x2, r).image, mix_bc_plus(x2, x1, 1 - r).image) < kTol);
    CHECK(oracle::rel_error(mix_sound_db(x1, x2, r, g1, g2), mix_sound_db(x2, x1, 1 - r, g2, g1)) < kTol);
  }
}

TEST_CASE("k-way mixing matches the two-input formulas and counts calls") {
  auto x1 = oracle::random_tensor<float>({3, 4, 4}, 14);
  auto x2 = oracle::random_tensor<float>({3, 4, 4}, 15, -2, 0);
  const Tensor32* in[2] = {&x1, &x2};
  const double ratios[2] = {0.3, 0.7};
  const auto reference = mix_bc_plus(x1, x2, 0.3).image;
  const auto before = instrumentation::mix_calls();
  CHECK(mix_images<float>(in, ratios, MixMethod::bc_plus).image == reference);
  CHECK(instrumentation::mix_calls() == before + 1);

  // Three-way zero-mean mix keeps zero mean; coefficients follow the inputs.
  auto x3 = oracle::random_tensor<float>({3, 4, 4}, 16, 1, 4);
  const Tensor32* in3[3] = {&x1, &x2, &x3};
  const double r3[3] = {0.2, 0.5, 0.3};
  auto m = mix_images<float>(in3, r3, MixMethod::zero_mean);
  CHECK(std::abs(per_image_stats(m.image).mean) < 1e-6);
  auto bp = mix_images<float>(in3, r3, MixMethod::bc_plus);
  double s = 0.0;
  for (double c : bp.coefficients) s += c;
  CHECK(s == doctest::Approx(1.0));
  CHECK_THROWS(mix_images<float>(in3, ratios, MixMethod::simple));
}

TEST_CASE("pair policies") {
  const auto labels = balanced_labels(100, 10);
  PairSampler sampler(labels, 10);
  Rng rng(17);
  const int n = 100000;
  for (auto policy : {PairPolicy::n1, PairPolicy::n2, PairPolicy::n3, PairPolicy::n2_or_3,
                      PairPolicy::n1_or_2}) {
    int same = 0, triples = 0;
    for (int i = 0; i < n; ++i) {
      const auto idx = sampler.sample(policy, rng);
      const auto c1 = labels[idx[0]], c2 = labels[idx[1]];
      switch (policy) {
        case PairPolicy::n1:
          REQUIRE(idx.size() == 2);
          REQUIRE(c1 == c2);
          REQUIRE(idx[0] != idx[1]);
          break;
        case PairPolicy::n2:
          REQUIRE(idx.size() == 2);
          REQUIRE(c1 != c2);
          break;
        case PairPolicy::n3:
          REQUIRE(idx.size() == 3);
          REQUIRE(c1 != c2);
          REQUIRE(labels[idx[2]] != c1);
          REQUIRE(labels[idx[2]] != c2);
          break;
        case PairPolicy::n2_or_3:
          REQUIRE(c1 != c2);
          if (idx.size() == 3) {
            ++triples;
            REQUIRE(labels[idx[2]] != c1);
            REQUIRE(labels[idx[2]] != c2);
          }
          break;
        case PairPolicy::n1_or_2:
          REQUIRE(idx.size() == 2);
          same += c1 == c2;
          break;
      }
    }
    if (policy == PairPolicy::n1_or_2) CHECK(std::abs(static_cast<double>(same) / n - 0.1) < 0.01);
    if (policy == PairPolicy::n2_or_3) CHECK(std::abs(static_cast<double>(triples) / n - 0.5) < 0.01);
  }

  const std::vector<std::uint32_t> one_class(20, 3);
  PairSampler lonely(one_class, 10);
  CHECK_THROWS_AS(lonely.validate(PairPolicy::n2), std::invalid_argument);
  CHECK_NOTHROW(lonely.validate(PairPolicy::n1));
  const std::vector<std::uint32_t> two_classes{0, 1, 0, 1};
  CHECK_THROWS_AS(PairSampler(two_classes, 10).validate(PairPolicy::n3), std::invalid_argument);
  CHECK_THROWS(parse_pair_policy("N4"));
  CHECK(parse_pair_policy("N2or3") == PairPolicy::n2_or_3);
  CHECK(to_string(PairPolicy::n1_or_2) == "N1or2");
}

TEST_CASE("N2 partners are uniform over admissible examples") {
  // Class 0 has 1 example, class 1 has 3, class 2 has 6: partners of the
  // class-0 anchor should land on each of the 9 others equally often.
  const std::vector<std::uint32_t> labels{0, 1, 1, 1, 2, 2, 2, 2, 2, 2};
  PairSampler sampler(labels, 3);
  Rng rng(18);
  std::vector<int> hits(10, 0);
  const int n = 90000;
  for (int i = 0; i < n; ++i) ++hits[sampler.partners(0, PairPolicy::n2, rng)[1]];
  CHECK(hits[0] == 0);
  for (int j = 1; j < 10; ++j) CHECK(std::abs(hits[j] - 10000) < 400);
}
