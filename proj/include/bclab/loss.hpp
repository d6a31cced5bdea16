#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bclab/tensor.hpp"

namespace bclab {

// cross_entropy: one-hot softmax cross-entropy (standard learning)
// ratio:         KL(label || softmax(logits)) against the mixed ratio label
// single:        softmax cross-entropy against the dominant class only
// multi:         per-class sigmoid cross-entropy against the multi-hot union
enum class LossKind { cross_entropy, ratio, single, multi };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

// Max-subtracted softmax; throws NumericError on non-finite logits.
template <typename T>
std::vector<double> softmax(std::span<const T> logits);

// Row-wise softmax over an N x K tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  std::vector<T> grad;  // d loss / d logits
};

// sum_k t_k log(t_k / y_k), 0 log 0 := 0. Gradient y - t.
template <typename T>
LossAndGrad<T> kl_ratio_loss(std::span<const double> label, std::span<const T> logits);

// -sum_k t_k log y_k. Gradient y - t.
template <typename T>
LossAndGrad<T> soft_cross_entropy(std::span<const double> label, std::span<const T> logits);

double entropy(std::span<const double> label);

// Target is c1 when r > 0.5, otherwise c2.
std::uint32_t single_label_target(std::uint32_t c1, std::uint32_t c2, double r);

template <typename T>
LossAndGrad<T> single_label_ce(std::uint32_t c1, std::uint32_t c2, double r,
                               std::span<const T> logits);

// Sum over classes of sigmoid cross-entropy against t1 + t2 clipped to 1.
template <typename T>
LossAndGrad<T> multi_label_sigmoid_ce(std::uint32_t c1, std::uint32_t c2,
                                      std::span<const T> logits);
template <typename T>
LossAndGrad<T> sigmoid_ce(std::span<const double> multi_hot, std::span<const T> logits);

template <typename T>
struct BatchLoss {
  double loss = 0.0;   // mean over the batch
  Tensor<T> grad;      // N x K, already divided by N
};

// targets: N x K dense label matrix whose meaning depends on `kind`
// (probability vector for cross_entropy/ratio/single, multi-hot for multi).
template <typename T>
BatchLoss<T> batch_loss(LossKind kind, const Tensor<double>& targets, const Tensor<T>& logits);

}  // namespace bclab
