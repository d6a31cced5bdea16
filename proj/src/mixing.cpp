#include "bclab/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bclab/instrumentation.hpp"

namespace bclab {

MixMethod parse_mix_method(const std::string& name) {
  if (name == "simple") return MixMethod::simple;
  if (name == "zero_mean") return MixMethod::zero_mean;
  if (name == "variance_preserving") return MixMethod::variance_preserving;
  if (name == "bc_plus") return MixMethod::bc_plus;
  if (name == "sound_db") return MixMethod::sound_db;
  throw std::invalid_argument("unknown mixing method '" + name + "'");
}

std::string to_string(MixMethod method) {
  switch (method) {
    case MixMethod::simple: return "simple";
    case MixMethod::zero_mean: return "zero_mean";
    case MixMethod::variance_preserving: return "variance_preserving";
    case MixMethod::bc_plus: return "bc_plus";
    case MixMethod::sound_db: return "sound_db";
  }
  return "?";
}

PairPolicy parse_pair_policy(const std::string& name) {
  if (name == "N1") return PairPolicy::n1;
  if (name == "N1or2") return PairPolicy::n1_or_2;
  if (name == "N2") return PairPolicy::n2;
  if (name == "N2or3") return PairPolicy::n2_or_3;
  if (name == "N3") return PairPolicy::n3;
  throw std::invalid_argument("unknown pair policy '" + name + "' (N1, N1or2, N2, N2or3, N3)");
}

std::string to_string(PairPolicy policy) {
  switch (policy) {
    case PairPolicy::n1: return "N1";
    case PairPolicy::n1_or_2: return "N1or2";
    case PairPolicy::n2: return "N2";
    case PairPolicy::n2_or_3: return "N2or3";
    case PairPolicy::n3: return "N3";
  }
  return "?";
}

double clamp_ratio(double r) { return std::clamp(r, kRatioClamp, 1.0 - kRatioClamp); }

double sample_ratio(Rng& rng) { return clamp_ratio(rng.uniform()); }

std::vector<double> sample_simplex(Rng& rng, std::size_t parts) {
  if (parts == 0) throw std::invalid_argument("sample_simplex: parts must be >= 1");
  std::vector<double> cuts(parts - 1);
  for (auto& c : cuts) c = rng.uniform();
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> out(parts);
  double prev = 0.0;
  for (std::size_t i = 0; i + 1 < parts; ++i) {
    out[i] = cuts[i] - prev;
    prev = cuts[i];
  }
  out[parts - 1] = 1.0 - prev;
  return out;
}

double bc_plus_coefficient(double r, double sigma1, double sigma2) {
  r = clamp_ratio(r);
  sigma1 = std::max(sigma1, kSigmaFloor);
  sigma2 = std::max(sigma2, kSigmaFloor);
  return 1.0 / (1.0 + sigma1 / sigma2 * (1.0 - r) / r);
}

double sound_db_coefficient(double r, double g1_db, double g2_db) {
  r = clamp_ratio(r);
  return 1.0 / (1.0 + std::pow(10.0, (g1_db - g2_db) / 20.0) * (1.0 - r) / r);
}

std::vector<double> one_hot(std::size_t cls, std::size_t classes) {
  if (cls >= classes) throw std::out_of_range("one_hot: class index out of range");
  std::vector<double> t(classes, 0.0);
  t[cls] = 1.0;
  return t;
}

std::vector<double> mix_labels(std::span<const double> t1, std::span<const double> t2, double r) {
  if (t1.size() != t2.size()) throw std::invalid_argument("mix_labels: label widths differ");
  std::vector<double> out(t1.size());
  for (std::size_t k = 0; k < t1.size(); ++k) out[k] = r * t1[k] + (1.0 - r) * t2[k];
  return out;
}

std::vector<double> mix_labels(std::span<const std::uint32_t> classes,
                               std::span<const double> coeffs, std::size_t num_classes) {
  if (classes.size() != coeffs.size()) {
    throw std::invalid_argument("mix_labels: one coefficient per class required");
  }
  std::vector<double> out(num_classes, 0.0);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= num_classes) throw std::out_of_range("mix_labels: class out of range");
    out[classes[i]] += coeffs[i];
  }
  return out;
}

template <typename T>
MixedImage<T> mix_images(std::span<const Tensor<T>* const> inputs,
                         std::span<const double> ratios, MixMethod method,
                         std::span<const double> gains_db) {
  const std::size_t k = inputs.size();
  if (k == 0 || ratios.size() != k) {
    throw std::invalid_argument("mix_images: need one ratio per input");
  }
  for (std::size_t i = 1; i < k; ++i) {
    if (inputs[i]->shape() != inputs[0]->shape()) {
      throw ShapeError("mix: shape mismatch " + shape_str(inputs[0]->shape()) + " vs " +
                       shape_str(inputs[i]->shape()));
    }
  }
  instrumentation::counters().mix_calls.fetch_add(1, std::memory_order_relaxed);

  const bool centered = method == MixMethod::zero_mean ||
                        method == MixMethod::variance_preserving ||
                        method == MixMethod::bc_plus;
  std::vector<double> mean(k, 0.0);
  std::vector<double> sigma(k, 0.0);
  if (centered) {
    for (std::size_t i = 0; i < k; ++i) {
      const auto s = per_image_stats(*inputs[i]);
      mean[i] = s.mean;
      sigma[i] = s.std;
    }
  }

  std::vector<double> coeff(ratios.begin(), ratios.end());
  if (method == MixMethod::bc_plus) {
    if (k == 2) {
      const double p = bc_plus_coefficient(ratios[0], sigma[0], sigma[1]);
      coeff = {p, 1.0 - p};
    } else {
      double total = 0.0;
      for (std::size_t i = 0; i < k; ++i) total += coeff[i] /= std::max(sigma[i], kSigmaFloor);
      for (auto& c : coeff) c /= total;
    }
  } else if (method == MixMethod::sound_db) {
    if (gains_db.size() != k) throw std::invalid_argument("sound_db mix needs one gain per input");
    if (k == 2) {
      const double p = sound_db_coefficient(ratios[0], gains_db[0], gains_db[1]);
      coeff = {p, 1.0 - p};
    } else {
      double total = 0.0;
      for (std::size_t i = 0; i < k; ++i) total += coeff[i] /= std::pow(10.0, gains_db[i] / 20.0);
      for (auto& c : coeff) c /= total;
    }
  }

  double norm = 1.0;
  if (method == MixMethod::variance_preserving || method == MixMethod::bc_plus ||
      method == MixMethod::sound_db) {
    double sq = 0.0;
    for (double c : coeff) sq += c * c;
    norm = std::sqrt(sq);
  }

  MixedImage<T> out{Tensor<T>(inputs[0]->shape()), coeff};
  const std::size_t n = out.image.size();
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += coeff[i] * (static_cast<double>((*inputs[i])[j]) - mean[i]);
    out.image[j] = static_cast<T>(norm == 1.0 ? acc : acc / norm);
  }
  return out;
}

namespace {

template <typename T>
MixedImage<T> mix_two(const Tensor<T>& x1, const Tensor<T>& x2, double r, MixMethod method,
                      std::span<const double> gains = {}) {
  const Tensor<T>* inputs[2] = {&x1, &x2};
  const double ratios[2] = {r, 1.0 - r};
  return mix_images<T>(inputs, ratios, method, gains);
}

}  // namespace

template <typename T>
Tensor<T> mix_simple(const Tensor<T>& x1, const Tensor<T>& x2, double r) {
  return mix_two(x1, x2, r, MixMethod::simple).image;
}

template <typename T>
Tensor<T> mix_zero_mean(const Tensor<T>& x1, const Tensor<T>& x2, double r) {
  return mix_two(x1, x2, r, MixMethod::zero_mean).image;
}

template <typename T>
Tensor<T> mix_variance_preserving(const Tensor<T>& x1, const Tensor<T>& x2, double r) {
  return mix_two(x1, x2, r, MixMethod::variance_preserving).image;
}

template <typename T>
MixedImage<T> mix_bc_plus(const Tensor<T>& x1, const Tensor<T>& x2, double r) {
  return mix_two(x1, x2, r, MixMethod::bc_plus);
}

template <typename T>
Tensor<T> mix_sound_db(const Tensor<T>& x1, const Tensor<T>& x2, double r, double g1_db,
                       double g2_db) {
  const double gains[2] = {g1_db, g2_db};
  return mix_two(x1, x2, r, MixMethod::sound_db, gains).image;
}

// ---------------------------------------------------------------------------
// PairSampler
// ---------------------------------------------------------------------------

PairSampler::PairSampler(std::span<const std::uint32_t> labels, std::size_t num_classes)
    : labels_(labels.begin(), labels.end()), by_class_(num_classes) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= num_classes) throw std::out_of_range("PairSampler: label out of range");
    by_class_[labels_[i]].push_back(i);
  }
  for (const auto& members : by_class_) present_classes_ += members.empty() ? 0 : 1;
}

namespace {
std::vector<std::uint32_t> labels_of(std::span<const ImageExample> examples) {
  std::vector<std::uint32_t> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.label);
  return out;
}
}  // namespace

PairSampler::PairSampler(std::span<const ImageExample> examples, std::size_t num_classes)
    : PairSampler(labels_of(examples), num_classes) {}

void PairSampler::validate(PairPolicy policy) const {
  std::size_t needed = 1;
  if (policy == PairPolicy::n2) needed = 2;
  if (policy == PairPolicy::n2_or_3 || policy == PairPolicy::n3) needed = 3;
  if (labels_.empty()) throw std::invalid_argument("pair sampling over an empty dataset");
  if (present_classes_ < needed) {
    throw std::invalid_argument("pair policy " + to_string(policy) + " needs at least " +
                                std::to_string(needed) + " classes, dataset has " +
                                std::to_string(present_classes_));
  }
}

std::size_t PairSampler::uniform_excluding(std::span<const std::uint32_t> excluded,
                                           Rng& rng) const {
  auto is_excluded = [&](std::size_t c) {
    return std::find(excluded.begin(), excluded.end(), c) != excluded.end();
  };
  std::size_t total = 0;
  for (std::size_t c = 0; c < by_class_.size(); ++c)
    if (!is_excluded(c)) total += by_class_[c].size();
  if (total == 0) throw std::invalid_argument("no admissible partner for pair policy");
  std::size_t u = rng.below(total);
  for (std::size_t c = 0; c < by_class_.size(); ++c) {
    if (is_excluded(c)) continue;
    if (u < by_class_[c].size()) return by_class_[c][u];
    u -= by_class_[c].size();
  }
  throw std::logic_error("uniform_excluding fell through");
}

std::vector<std::size_t> PairSampler::partners(std::size_t anchor, PairPolicy policy,
                                               Rng& rng) const {
  if (anchor >= labels_.size()) throw std::out_of_range("PairSampler: anchor out of range");
  const std::uint32_t c1 = labels_[anchor];
  std::vector<std::size_t> out{anchor};
  switch (policy) {
    case PairPolicy::n1: {
      const auto& same = by_class_[c1];
      if (same.size() == 1) {
        out.push_back(anchor);
      } else {
        // Uniform over the class minus the anchor itself.
        std::size_t j = rng.below(same.size() - 1);
        if (same[j] == anchor) j = same.size() - 1;
        out.push_back(same[j]);
      }
      break;
    }
    case PairPolicy::n1_or_2:
      out.push_back(rng.below(labels_.size()));
      break;
    case PairPolicy::n2: {
      const std::uint32_t ex[1] = {c1};
      out.push_back(uniform_excluding(ex, rng));
      break;
    }
    case PairPolicy::n2_or_3:
    case PairPolicy::n3: {
      const bool triple = policy == PairPolicy::n3 || rng.bernoulli(0.5);
      const std::uint32_t ex1[1] = {c1};
      const std::size_t second = uniform_excluding(ex1, rng);
      out.push_back(second);
      if (triple) {
        const std::uint32_t ex2[2] = {c1, labels_[second]};
        out.push_back(uniform_excluding(ex2, rng));
      }
      break;
    }
  }
  return out;
}

std::vector<std::size_t> PairSampler::sample(PairPolicy policy, Rng& rng) const {
  validate(policy);
  return partners(rng.below(labels_.size()), policy, rng);
}

std::vector<std::size_t> sample_pair(std::span<const ImageExample> data, std::size_t num_classes,
                                     PairPolicy policy, Rng& rng) {
  return PairSampler(data, num_classes).sample(policy, rng);
}

#define BCLAB_INSTANTIATE(T)                                                                 \
  template Tensor<T> mix_simple(const Tensor<T>&, const Tensor<T>&, double);                 \
  template Tensor<T> mix_zero_mean(const Tensor<T>&, const Tensor<T>&, double);              \
  template Tensor<T> mix_variance_preserving(const Tensor<T>&, const Tensor<T>&, double);    \
  template MixedImage<T> mix_bc_plus(const Tensor<T>&, const Tensor<T>&, double);            \
  template Tensor<T> mix_sound_db(const Tensor<T>&, const Tensor<T>&, double, double, double); \
  template MixedImage<T> mix_images(std::span<const Tensor<T>* const>, std::span<const double>, \
                                    MixMethod, std::span<const double>);

BCLAB_INSTANTIATE(float)
BCLAB_INSTANTIATE(double)

#undef BCLAB_INSTANTIATE

}  // namespace bclab
