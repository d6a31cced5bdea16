#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bclab/rng.hpp"
#include "bclab/tensor.hpp"

namespace bclab {

enum class LayerKind { conv, maxpool, relu, batchnorm, dropout, fc, flatten };

std::string to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  std::size_t ksize = 0;    // conv, maxpool
  std::size_t stride = 1;   // conv, maxpool
  std::size_t pad = 0;      // conv
  std::size_t filters = 0;  // conv output channels
  std::size_t units = 0;    // fc output width
  double drop = 0.0;        // dropout probability
};

// A named layer boundary: `boundary` layers have run when the tap is reached
// (0 is the network input).
struct Tap {
  std::string name;
  std::size_t boundary = 0;
};

class UnknownTapError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StaleCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct NetworkConfig {
  std::string preset;
  Shape input_shape{3, 32, 32};  // per example
  std::vector<LayerSpec> layers;
  std::vector<Tap> taps;
  std::size_t num_classes = 0;

  std::size_t tap_boundary(const std::string& name) const;
  bool has_tap(const std::string& name) const;
  std::vector<std::string> tap_names() const;
  // Per-example activation shape at every boundary (size layers + 1).
  // Throws ShapeError if the layer sequence does not shape-check.
  std::vector<Shape> boundary_shapes() const;
  void validate() const;
};

// cnn11: the 11-layer CIFAR network; cnn-small: desk-scale reduction.
NetworkConfig build_preset(const std::string& name, std::size_t num_classes);

// Assembles a config from an explicit layer list, adding the "input" tap.
NetworkConfig make_config(Shape input_shape, std::vector<LayerSpec> layers,
                          std::size_t num_classes, std::vector<Tap> taps = {});

enum class Mode { train, eval };

template <typename T>
struct LayerParams {
  Tensor<T> weight;  // conv: O x C x k x k; fc: in x out
  Tensor<T> bias;
  Tensor<T> gamma;   // batchnorm scale
  Tensor<T> beta;    // batchnorm shift
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <typename T>
struct Parameters {
  NetworkConfig config;
  std::vector<LayerParams<T>> layers;
  Mode mode = Mode::train;
  // Bumped on every weight update; forward caches remember the value they saw.
  std::uint64_t version = 0;

  // Named trainable tensors ("conv1-1.weight", "bn1-1.gamma", ...).
  std::vector<std::pair<std::string, Tensor<T>*>> trainable();
  // Trainable tensors plus batchnorm running statistics.
  std::vector<std::pair<std::string, Tensor<T>*>> all_tensors();
  std::vector<std::pair<std::string, const Tensor<T>*>> all_tensors() const;

  template <typename U>
  Parameters<U> cast() const;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// conv: N(0, sqrt(2/fan_in)); fc: U(-sqrt(1/n), sqrt(1/n)); biases 0;
// batchnorm scale 1, shift 0, running mean 0, running variance 1.
template <typename T>
Parameters<T> init_weights(const NetworkConfig& config, Rng& rng);

template <typename T>
struct LayerCache {
  Tensor<T> input;
  Tensor<T> aux;  // batchnorm: normalized input; dropout: scaled mask
  std::vector<T> inv_std;
  std::vector<std::size_t> argmax;
};

template <typename T>
struct ForwardCache {
  std::size_t begin = 0;
  std::size_t end = 0;
  Mode mode = Mode::eval;
  std::uint64_t params_version = 0;
  std::vector<LayerCache<T>> layers;
};

template <typename T>
struct ForwardResult {
  Tensor<T> output;
  ForwardCache<T> cache;
};

template <typename T>
struct Gradients {
  std::vector<LayerParams<T>> layers;  // only weight/bias/gamma/beta populated
  Tensor<T> input;                     // gradient w.r.t. the range input, if requested

  std::vector<std::pair<std::string, const Tensor<T>*>> named(const NetworkConfig& config) const;
};

// Runs layers [begin, end). Train mode uses batch statistics, updates the
// running statistics, and draws dropout masks from `dropout_rng` (required
// when the range holds dropout with p > 0).
template <typename T>
ForwardResult<T> forward_range(Parameters<T>& params, const Tensor<T>& input, std::size_t begin,
                               std::size_t end, Mode mode, Rng* dropout_rng = nullptr,
                               bool keep_cache = true);

// Pure evaluation-mode forward; no cache, no parameter mutation.
template <typename T>
Tensor<T> infer_range(const Parameters<T>& params, const Tensor<T>& input, std::size_t begin,
                      std::size_t end);

template <typename T>
ForwardResult<T> forward(Parameters<T>& params, const Tensor<T>& batch, Mode mode,
                         Rng* dropout_rng = nullptr);

// Accumulates parameter gradients of the cached range into `grads` (sized on
// first use) and returns the gradient with respect to the range input when
// `need_input_grad` is set.
template <typename T>
Tensor<T> backward_range(const Parameters<T>& params, const ForwardCache<T>& cache,
                         const Tensor<T>& grad_output, Gradients<T>& grads,
                         bool need_input_grad);

template <typename T>
Gradients<T> backward(const Parameters<T>& params, const ForwardCache<T>& cache,
                      const Tensor<T>& grad_logits, bool need_input_grad = false);

template <typename T>
ForwardResult<T> forward_to_tap(Parameters<T>& params, const Tensor<T>& input,
                                const std::string& tap, Mode mode, Rng* dropout_rng = nullptr);

template <typename T>
ForwardResult<T> resume_from_tap(Parameters<T>& params, const Tensor<T>& activation,
                                 const std::string& tap, Mode mode, Rng* dropout_rng = nullptr);

// Stacks equally-shaped tensors into a batch with a leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items);

// Row `i` of a batch tensor as a standalone tensor.
template <typename T>
Tensor<T> unstack_row(const Tensor<T>& batch, std::size_t i);

}  // namespace bclab
