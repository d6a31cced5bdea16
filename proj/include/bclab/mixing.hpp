#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bclab/dataset.hpp"
#include "bclab/rng.hpp"
#include "bclab/tensor.hpp"

namespace bclab {

// Image mixing rules.
//   simple               r x1 + (1-r) x2
//   zero_mean            r (x1-mu1) + (1-r) (x2-mu2)
//   variance_preserving  zero_mean / sqrt(r^2 + (1-r)^2)
//   bc_plus              variance_preserving with r replaced by
//                        p = 1 / (1 + sigma1/sigma2 * (1-r)/r)
//   sound_db             (p x1 + (1-p) x2) / sqrt(p^2 + (1-p)^2),
//                        p = 1 / (1 + 10^((G1-G2)/20) * (1-r)/r)
enum class MixMethod { simple, zero_mean, variance_preserving, bc_plus, sound_db };

// How many distinct classes a mixture spans.
enum class PairPolicy { n1, n1_or_2, n2, n2_or_3, n3 };

MixMethod parse_mix_method(const std::string& name);
std::string to_string(MixMethod method);
PairPolicy parse_pair_policy(const std::string& name);
std::string to_string(PairPolicy policy);

inline constexpr double kRatioClamp = 1e-6;
inline constexpr double kSigmaFloor = 1e-6;

struct MixSpec {
  double r = 0.5;  // label ratio
  double p = 0.5;  // image coefficient actually applied to x1
  MixMethod method = MixMethod::simple;
  PairPolicy policy = PairPolicy::n2;
};

double clamp_ratio(double r);

// U(0,1) clamped to [1e-6, 1 - 1e-6].
double sample_ratio(Rng& rng);

// Flat Dirichlet sample over `parts` coefficients via sorted-uniform gaps.
std::vector<double> sample_simplex(Rng& rng, std::size_t parts);

// Image coefficient for BC+; r is clamped and sigmas floored before use.
double bc_plus_coefficient(double r, double sigma1, double sigma2);
double sound_db_coefficient(double r, double g1_db, double g2_db);

std::vector<double> one_hot(std::size_t cls, std::size_t classes);
std::vector<double> mix_labels(std::span<const double> t1, std::span<const double> t2, double r);
// sum_i coeffs[i] * e_{classes[i]}
std::vector<double> mix_labels(std::span<const std::uint32_t> classes,
                               std::span<const double> coeffs, std::size_t num_classes);

template <typename T>
Tensor<T> mix_simple(const Tensor<T>& x1, const Tensor<T>& x2, double r);
template <typename T>
Tensor<T> mix_zero_mean(const Tensor<T>& x1, const Tensor<T>& x2, double r);
template <typename T>
Tensor<T> mix_variance_preserving(const Tensor<T>& x1, const Tensor<T>& x2, double r);

template <typename T>
struct MixedImage {
  Tensor<T> image;
  std::vector<double> coefficients;  // per-input weights before energy scaling
};

template <typename T>
MixedImage<T> mix_bc_plus(const Tensor<T>& x1, const Tensor<T>& x2, double r);
template <typename T>
Tensor<T> mix_sound_db(const Tensor<T>& x1, const Tensor<T>& x2, double r, double g1_db,
                       double g2_db);

// k-way generalisation used by the trainer. `ratios` sums to 1; `gains_db`
// is only read by sound_db (one gain per input). For two inputs this is
// exactly the two-input formula of the chosen method.
template <typename T>
MixedImage<T> mix_images(std::span<const Tensor<T>* const> inputs,
                         std::span<const double> ratios, MixMethod method,
                         std::span<const double> gains_db = {});

// Selects examples to mix according to a PairPolicy.
class PairSampler {
 public:
  PairSampler(std::span<const std::uint32_t> labels, std::size_t num_classes);
  explicit PairSampler(std::span<const ImageExample> examples, std::size_t num_classes);

  // Throws std::invalid_argument when the data cannot satisfy the policy.
  void validate(PairPolicy policy) const;

  // Returns the anchor followed by one or two partners.
  std::vector<std::size_t> partners(std::size_t anchor, PairPolicy policy, Rng& rng) const;
  // Uniform anchor, then partners().
  std::vector<std::size_t> sample(PairPolicy policy, Rng& rng) const;

  std::uint32_t label(std::size_t i) const { return labels_[i]; }
  std::size_t size() const { return labels_.size(); }

 private:
  std::size_t uniform_excluding(std::span<const std::uint32_t> excluded, Rng& rng) const;

  std::vector<std::uint32_t> labels_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::size_t present_classes_ = 0;
};

std::vector<std::size_t> sample_pair(std::span<const ImageExample> data, std::size_t num_classes,
                                     PairPolicy policy, Rng& rng);

}  // namespace bclab
