#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>

namespace bclab {

// Deterministic random stream.
//
// Engine: std::mt19937_64, whose output sequence is fixed by the C++ standard.
// All derived quantities are computed here rather than through <random>
// distributions, whose algorithms are implementation-defined:
//   uniform()  -> top 53 bits of one draw scaled by 2^-53, in [0, 1)
//   below(n)   -> Lemire's multiply-shift with rejection, unbiased
//   normal()   -> Box-Muller over two uniform() draws (cached pair)
//   shuffle    -> Fisher-Yates from the last element down using below()
//
// Sub-streams are derived from (seed, purpose tag, index) through a
// SplitMix64 finalizer over the FNV-1a hash of the tag, so every consumer
// of randomness in a run owns an independent, reproducible stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng derive(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);
  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                                   std::uint64_t index = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi);
  std::size_t below(std::size_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace bclab
