#include "bclab/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bclab {

LossKind parse_loss_kind(const std::string& name) {
  if (name == "cross_entropy") return LossKind::cross_entropy;
  if (name == "ratio") return LossKind::ratio;
  if (name == "single") return LossKind::single;
  if (name == "multi") return LossKind::multi;
  throw std::invalid_argument("unknown loss '" + name +
                              "' (cross_entropy, ratio, single, multi)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::ratio: return "ratio";
    case LossKind::single: return "single";
    case LossKind::multi: return "multi";
  }
  return "?";
}

namespace {

template <typename T>
std::vector<double> log_softmax(std::span<const T> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of an empty vector");
  double mx = -INFINITY;
  for (T z : logits) {
    if (!std::isfinite(z)) throw NumericError("softmax: non-finite logit");
    mx = std::max(mx, static_cast<double>(z));
  }
  double sum = 0.0;
  for (T z : logits) sum += std::exp(static_cast<double>(z) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = static_cast<double>(logits[k]) - lse;
  return out;
}

void require_width(std::size_t label, std::size_t logits) {
  if (label != logits) {
    throw std::invalid_argument("label width " + std::to_string(label) +
                                " does not match logit count " + std::to_string(logits));
  }
}

}  // namespace

template <typename T>
std::vector<double> softmax(std::span<const T> logits) {
  auto out = log_softmax(logits);
  for (auto& v : out) v = std::exp(v);
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows expects N x K, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = softmax(std::span<const T>(logits.raw() + i * k, k));
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = static_cast<T>(y[j]);
  }
  return out;
}

template <typename T>
LossAndGrad<T> kl_ratio_loss(std::span<const double> label, std::span<const T> logits) {
  require_width(label.size(), logits.size());
  const auto logy = log_softmax(logits);
  LossAndGrad<T> out{0.0, std::vector<T>(logits.size())};
  for (std::size_t k = 0; k < label.size(); ++k) {
    if (label[k] > 0.0) out.loss += label[k] * (std::log(label[k]) - logy[k]);
    out.grad[k] = static_cast<T>(std::exp(logy[k]) - label[k]);
  }
  return out;
}

template <typename T>
LossAndGrad<T> soft_cross_entropy(std::span<const double> label, std::span<const T> logits) {
  require_width(label.size(), logits.size());
  const auto logy = log_softmax(logits);
  LossAndGrad<T> out{0.0, std::vector<T>(logits.size())};
  for (std::size_t k = 0; k < label.size(); ++k) {
    if (label[k] > 0.0) out.loss -= label[k] * logy[k];
    out.grad[k] = static_cast<T>(std::exp(logy[k]) - label[k]);
  }
  return out;
}

double entropy(std::span<const double> label) {
  double h = 0.0;
  for (double t : label)
    if (t > 0.0) h -= t * std::log(t);
  return h;
}

std::uint32_t single_label_target(std::uint32_t c1, std::uint32_t c2, double r) {
  return r > 0.5 ? c1 : c2;
}

template <typename T>
LossAndGrad<T> single_label_ce(std::uint32_t c1, std::uint32_t c2, double r,
                               std::span<const T> logits) {
  const std::uint32_t target = single_label_target(c1, c2, r);
  if (target >= logits.size()) throw std::out_of_range("single_label_ce: class out of range");
  std::vector<double> t(logits.size(), 0.0);
  t[target] = 1.0;
  return soft_cross_entropy<T>(t, logits);
}

template <typename T>
LossAndGrad<T> sigmoid_ce(std::span<const double> multi_hot, std::span<const T> logits) {
  require_width(multi_hot.size(), logits.size());
  LossAndGrad<T> out{0.0, std::vector<T>(logits.size())};
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double z = logits[k];
    if (!std::isfinite(z)) throw NumericError("sigmoid_ce: non-finite logit");
    const double t = multi_hot[k];
    // log(1 + e^z) - t z, computed without overflow
    out.loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.grad[k] = static_cast<T>(sig - t);
  }
  return out;
}

template <typename T>
LossAndGrad<T> multi_label_sigmoid_ce(std::uint32_t c1, std::uint32_t c2,
                                      std::span<const T> logits) {
  if (c1 >= logits.size() || c2 >= logits.size()) {
    throw std::out_of_range("multi_label_sigmoid_ce: class out of range");
  }
  std::vector<double> t(logits.size(), 0.0);
  t[c1] = 1.0;
  t[c2] = 1.0;
  return sigmoid_ce<T>(t, logits);
}

template <typename T>
BatchLoss<T> batch_loss(LossKind kind, const Tensor<double>& targets, const Tensor<T>& logits) {
  if (logits.rank() != 2 || targets.shape() != logits.shape()) {
    throw ShapeError("batch_loss: targets " + shape_str(targets.shape()) + " vs logits " +
                     shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  BatchLoss<T> out{0.0, Tensor<T>(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> t(targets.raw() + i * k, k);
    const std::span<const T> z(logits.raw() + i * k, k);
    LossAndGrad<T> r;
    switch (kind) {
      case LossKind::ratio: r = kl_ratio_loss(t, z); break;
      case LossKind::cross_entropy:
      case LossKind::single: r = soft_cross_entropy(t, z); break;
      case LossKind::multi: r = sigmoid_ce(t, z); break;
    }
    out.loss += r.loss;
    for (std::size_t j = 0; j < k; ++j) out.grad[i * k + j] = static_cast<T>(r.grad[j] * inv_n);
  }
  out.loss *= inv_n;
  return out;
}

#define BCLAB_INSTANTIATE(T)                                                                  \
  template std::vector<double> softmax(std::span<const T>);                                   \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                          \
  template LossAndGrad<T> kl_ratio_loss(std::span<const double>, std::span<const T>);         \
  template LossAndGrad<T> soft_cross_entropy(std::span<const double>, std::span<const T>);    \
  template LossAndGrad<T> single_label_ce(std::uint32_t, std::uint32_t, double,               \
                                          std::span<const T>);                                \
  template LossAndGrad<T> multi_label_sigmoid_ce(std::uint32_t, std::uint32_t,                \
                                                 std::span<const T>);                         \
  template LossAndGrad<T> sigmoid_ce(std::span<const double>, std::span<const T>);            \
  template BatchLoss<T> batch_loss(LossKind, const Tensor<double>&, const Tensor<T>&);

BCLAB_INSTANTIATE(float)
BCLAB_INSTANTIATE(double)

#undef BCLAB_INSTANTIATE

}  // namespace bclab
