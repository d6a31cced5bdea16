#include "bclab/network.hpp"

#include <algorithm>
#include <cmath>

namespace bclab {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dropout: return "dropout";
    case LayerKind::fc: return "fc";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::size_t NetworkConfig::tap_boundary(const std::string& name) const {
  for (const auto& t : taps)
    if (t.name == name) return t.boundary;
  std::string known;
  for (const auto& t : taps) known += (known.empty() ? "" : ", ") + t.name;
  throw UnknownTapError("unknown tap '" + name + "' (available: " + known + ")");
}

bool NetworkConfig::has_tap(const std::string& name) const {
  return std::any_of(taps.begin(), taps.end(), [&](const Tap& t) { return t.name == name; });
}

std::vector<std::string> NetworkConfig::tap_names() const {
  std::vector<std::string> out;
  for (const auto& t : taps) out.push_back(t.name);
  return out;
}

std::vector<Shape> NetworkConfig::boundary_shapes() const {
  std::vector<Shape> shapes{input_shape};
  for (const auto& l : layers) {
    const Shape& s = shapes.back();
    const std::string where = "layer '" + l.name + "' (" + to_string(l.kind) + ")";
    Shape next;
    switch (l.kind) {
      case LayerKind::conv:
        if (s.size() != 3) throw ShapeError(where + " expects CHW input, got " + shape_str(s));
        if (l.filters == 0 || l.ksize == 0) throw ShapeError(where + " needs filters and ksize");
        next = {l.filters, conv_out_extent(s[1], l.ksize, l.stride, l.pad),
                conv_out_extent(s[2], l.ksize, l.stride, l.pad)};
        break;
      case LayerKind::maxpool:
        if (s.size() != 3) throw ShapeError(where + " expects CHW input, got " + shape_str(s));
        if (l.ksize == 0 || l.stride == 0 || s[1] < l.ksize || s[2] < l.ksize ||
            (s[1] - l.ksize) % l.stride != 0 || (s[2] - l.ksize) % l.stride != 0) {
          throw ShapeError(where + " window does not tile " + shape_str(s) + " exactly");
        }
        next = {s[0], (s[1] - l.ksize) / l.stride + 1, (s[2] - l.ksize) / l.stride + 1};
        break;
      case LayerKind::flatten:
        next = {shape_numel(s)};
        break;
      case LayerKind::fc:
        if (s.size() != 1) throw ShapeError(where + " expects a flat input, got " + shape_str(s));
        if (l.units == 0) throw ShapeError(where + " needs units > 0");
        next = {l.units};
        break;
      case LayerKind::dropout:
        if (l.drop < 0.0 || l.drop >= 1.0) throw ShapeError(where + " drop must be in [0,1)");
        next = s;
        break;
      case LayerKind::relu:
      case LayerKind::batchnorm:
        next = s;
        break;
    }
    shapes.push_back(std::move(next));
  }
  return shapes;
}

void NetworkConfig::validate() const {
  const auto shapes = boundary_shapes();
  if (shapes.back() != Shape{num_classes}) {
    throw ShapeError("network output " + shape_str(shapes.back()) + " does not match " +
                     std::to_string(num_classes) + " classes");
  }
  for (const auto& t : taps) {
    if (t.boundary > layers.size()) throw ShapeError("tap '" + t.name + "' beyond the last layer");
  }
}

NetworkConfig make_config(Shape input_shape, std::vector<LayerSpec> layers,
                          std::size_t num_classes, std::vector<Tap> taps) {
  NetworkConfig c;
  c.preset = "custom";
  c.input_shape = std::move(input_shape);
  c.layers = std::move(layers);
  c.num_classes = num_classes;
  c.taps.push_back({"input", 0});
  for (auto& t : taps) c.taps.push_back(std::move(t));
  c.validate();
  return c;
}

namespace {

class PresetBuilder {
 public:
  void conv_block(const std::string& id, std::size_t filters) {
    layers.push_back({LayerKind::conv, "conv" + id, 3, 1, 1, filters, 0, 0.0});
    layers.push_back({LayerKind::batchnorm, "bn" + id});
    layers.push_back({LayerKind::relu, "relu" + id});
  }
  void pool(const std::string& name) {
    layers.push_back({LayerKind::maxpool, name, 2, 2});
    tap(name);
  }
  void fc_hidden(const std::string& id, std::size_t units) {
    layers.push_back({LayerKind::fc, "fc" + id, 0, 1, 0, 0, units});
    layers.push_back({LayerKind::relu, "relu" + id});
  }
  void dropout(const std::string& id) {
    layers.push_back({LayerKind::dropout, "drop" + id, 0, 1, 0, 0, 0, 0.5});
  }
  void tap(const std::string& name) { taps.push_back({name, layers.size()}); }

  std::vector<LayerSpec> layers;
  std::vector<Tap> taps;
};

}  // namespace

NetworkConfig build_preset(const std::string& name, std::size_t num_classes) {
  if (num_classes < 2) throw std::invalid_argument("build_preset: need at least 2 classes");
  PresetBuilder b;
  if (name == "cnn11") {
    b.conv_block("1-1", 64);
    b.conv_block("1-2", 64);
    b.pool("pool1");
    b.conv_block("2-1", 128);
    b.conv_block("2-2", 128);
    b.pool("pool2");
    for (int i = 1; i <= 4; ++i) b.conv_block("3-" + std::to_string(i), 256);
    b.pool("pool3");
    b.layers.push_back({LayerKind::flatten, "flatten"});
    b.fc_hidden("4", 1024);
    b.dropout("4");
    b.tap("fc4");
    b.fc_hidden("5", 1024);
    b.tap("layer10-features");
    b.dropout("5");
    b.tap("fc5");
    b.tap("fc6-input");
    b.layers.push_back({LayerKind::fc, "fc6", 0, 1, 0, 0, num_classes});
  } else if (name == "cnn-small") {
    b.conv_block("1-1", 64);
    b.conv_block("1-2", 64);
    b.pool("pool1");
    b.conv_block("2-1", 128);
    b.conv_block("2-2", 128);
    b.pool("pool2");
    b.layers.push_back({LayerKind::flatten, "flatten"});
    b.fc_hidden("3", 256);
    b.tap("layer10-features");
    b.dropout("3");
    b.tap("fc3");
    b.tap("fc6-input");
    b.layers.push_back({LayerKind::fc, "fc4", 0, 1, 0, 0, num_classes});
  } else {
    throw std::invalid_argument("unknown preset '" + name + "' (cnn11, cnn-small)");
  }
  NetworkConfig c = make_config({3, 32, 32}, std::move(b.layers), num_classes, std::move(b.taps));
  c.preset = name;
  return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Parameters<T>::trainable() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& name = config.layers[i].name;
    auto& p = layers[i];
    if (!p.weight.empty()) out.emplace_back(name + ".weight", &p.weight);
    if (!p.bias.empty()) out.emplace_back(name + ".bias", &p.bias);
    if (!p.gamma.empty()) out.emplace_back(name + ".gamma", &p.gamma);
    if (!p.beta.empty()) out.emplace_back(name + ".beta", &p.beta);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Parameters<T>::all_tensors() {
  auto out = trainable();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& p = layers[i];
    if (!p.running_mean.empty())
      out.emplace_back(config.layers[i].name + ".running_mean", &p.running_mean);
    if (!p.running_var.empty())
      out.emplace_back(config.layers[i].name + ".running_var", &p.running_var);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Parameters<T>::all_tensors() const {
  auto mutable_view = const_cast<Parameters<T>*>(this)->all_tensors();
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [n, t] : mutable_view) out.emplace_back(n, t);
  return out;
}

template <typename T>
template <typename U>
Parameters<U> Parameters<T>::cast() const {
  Parameters<U> out;
  out.config = config;
  out.mode = mode;
  out.version = version;
  for (const auto& p : layers) {
    out.layers.push_back({p.weight.template cast<U>(), p.bias.template cast<U>(),
                          p.gamma.template cast<U>(), p.beta.template cast<U>(),
                          p.running_mean.template cast<U>(), p.running_var.template cast<U>()});
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Gradients<T>::named(
    const NetworkConfig& config) const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& name = config.layers[i].name;
    const auto& g = layers[i];
    if (!g.weight.empty()) out.emplace_back(name + ".weight", &g.weight);
    if (!g.bias.empty()) out.emplace_back(name + ".bias", &g.bias);
    if (!g.gamma.empty()) out.emplace_back(name + ".gamma", &g.gamma);
    if (!g.beta.empty()) out.emplace_back(name + ".beta", &g.beta);
  }
  return out;
}

template <typename T>
Parameters<T> init_weights(const NetworkConfig& config, Rng& rng) {
  config.validate();
  const auto shapes = config.boundary_shapes();
  Parameters<T> params;
  params.config = config;
  params.layers.resize(config.layers.size());
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto& spec = config.layers[i];
    const Shape& in = shapes[i];
    auto& p = params.layers[i];
    switch (spec.kind) {
      case LayerKind::conv: {
        const std::size_t fan_in = in[0] * spec.ksize * spec.ksize;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        p.weight = Tensor<T>({spec.filters, in[0], spec.ksize, spec.ksize});
        for (auto& w : p.weight.data()) w = static_cast<T>(rng.normal(0.0, stddev));
        p.bias = Tensor<T>({spec.filters});
        break;
      }
      case LayerKind::fc: {
        const double bound = std::sqrt(1.0 / static_cast<double>(in[0]));
        p.weight = Tensor<T>({in[0], spec.units});
        for (auto& w : p.weight.data()) w = static_cast<T>(rng.uniform(-bound, bound));
        p.bias = Tensor<T>({spec.units});
        break;
      }
      case LayerKind::batchnorm:
        p.gamma = Tensor<T>({in[0]}, T{1});
        p.beta = Tensor<T>({in[0]});
        p.running_mean = Tensor<T>({in[0]});
        p.running_var = Tensor<T>({in[0]}, T{1});
        break;
      default:
        break;
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

// Channels and spatial extent for batchnorm over N x C (x H x W).
struct BnGeom {
  std::size_t n, c, spatial;
};

template <typename T>
BnGeom bn_geom(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  return {n, c, x.size() / (n * c)};
}

template <typename T>
Tensor<T> bn_forward(const LayerParams<T>& cp, LayerParams<T>& mp, const Tensor<T>& x,
                     Mode mode, LayerCache<T>* cache) {
  const auto g = bn_geom(x);
  Tensor<T> y(x.shape());
  std::vector<T> inv_std(g.c);
  Tensor<T> xhat;
  if (cache) xhat = Tensor<T>(x.shape());
  const double m = static_cast<double>(g.n * g.spatial);
  for (std::size_t c = 0; c < g.c; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* p = x.raw() + (n * g.c + c) * g.spatial;
        for (std::size_t s = 0; s < g.spatial; ++s) sum += p[s];
      }
      mean = sum / m;
      double sq = 0.0;
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* p = x.raw() + (n * g.c + c) * g.spatial;
        for (std::size_t s = 0; s < g.spatial; ++s) {
          const double d = p[s] - mean;
          sq += d * d;
        }
      }
      var = sq / m;
      const double unbiased = m > 1 ? var * m / (m - 1) : var;
      mp.running_mean[c] = static_cast<T>(kBatchNormMomentum * mp.running_mean[c] +
                                          (1 - kBatchNormMomentum) * mean);
      mp.running_var[c] = static_cast<T>(kBatchNormMomentum * mp.running_var[c] +
                                         (1 - kBatchNormMomentum) * unbiased);
    } else {
      mean = cp.running_mean[c];
      var = cp.running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + kBatchNormEps);
    inv_std[c] = static_cast<T>(istd);
    const T gamma = cp.gamma[c], beta = cp.beta[c];
    for (std::size_t n = 0; n < g.n; ++n) {
      const std::size_t off = (n * g.c + c) * g.spatial;
      for (std::size_t s = 0; s < g.spatial; ++s) {
        const T xh = static_cast<T>((x[off + s] - mean) * istd);
        if (cache) xhat[off + s] = xh;
        y[off + s] = gamma * xh + beta;
      }
    }
  }
  if (cache) {
    cache->aux = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Tensor<T> add_channel_bias(Tensor<T> y, const Tensor<T>& bias) {
  const std::size_t n = y.dim(0), c = y.dim(1), spatial = y.size() / (n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      T* p = y.raw() + (i * c + k) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) p[s] += bias[k];
    }
  return y;
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& dy) {
  const std::size_t n = dy.dim(0), c = dy.dim(1), spatial = dy.size() / (n * c);
  Tensor<T> out({c});
  for (std::size_t k = 0; k < c; ++k) {
    T acc{0};
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = dy.raw() + (i * c + k) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) acc += p[s];
    }
    out[k] = acc;
  }
  return out;
}

template <typename T>
Tensor<T> layer_forward(const LayerSpec& spec, const LayerParams<T>& p, LayerParams<T>* mp,
                        const Tensor<T>& x, Mode mode, Rng* rng, LayerCache<T>* cache) {
  switch (spec.kind) {
    case LayerKind::conv: {
      const Conv2dGeometry geom{spec.stride, spec.stride, spec.pad, spec.pad};
      return add_channel_bias(conv2d(x, p.weight, geom), p.bias);
    }
    case LayerKind::fc: {
      if (x.rank() != 2) throw ShapeError("fc layer '" + spec.name + "' expects N x D input");
      return add_channel_bias(matmul(x, p.weight), p.bias);
    }
    case LayerKind::maxpool: {
      auto r = maxpool2d(x, spec.ksize, spec.stride);
      if (cache) cache->argmax = std::move(r.argmax);
      return std::move(r.output);
    }
    case LayerKind::relu:
      return relu(x);
    case LayerKind::batchnorm:
      if (mode == Mode::train && mp == nullptr) {
        throw std::logic_error("train-mode batchnorm needs mutable parameters");
      }
      return bn_forward(p, mode == Mode::train ? *mp : const_cast<LayerParams<T>&>(p), x, mode,
                        cache);
    case LayerKind::dropout: {
      if (mode == Mode::eval || spec.drop == 0.0) return x;
      if (!rng) throw std::logic_error("train-mode dropout needs a random stream");
      Tensor<T> mask(x.shape());
      const T keep_scale = static_cast<T>(1.0 / (1.0 - spec.drop));
      for (auto& m : mask.data()) m = rng->bernoulli(spec.drop) ? T{0} : keep_scale;
      Tensor<T> y = mul(x, mask);
      if (cache) cache->aux = std::move(mask);
      return y;
    }
    case LayerKind::flatten:
      return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }
  throw std::logic_error("unhandled layer kind");
}

template <typename T>
Tensor<T> layer_backward(const LayerSpec& spec, const LayerParams<T>& p,
                         const LayerCache<T>& cache, Mode mode, const Tensor<T>& dy,
                         LayerParams<T>& grads, bool need_input_grad) {
  const Tensor<T>& x = cache.input;
  switch (spec.kind) {
    case LayerKind::conv: {
      const Conv2dGeometry geom{spec.stride, spec.stride, spec.pad, spec.pad};
      auto g = conv2d_backward(x, p.weight, dy, geom, need_input_grad);
      accumulate(grads.weight, g.grad_kernel);
      accumulate(grads.bias, channel_sum(dy));
      return std::move(g.grad_input);
    }
    case LayerKind::fc: {
      accumulate(grads.weight, matmul(transpose2d(x), dy));
      accumulate(grads.bias, channel_sum(dy));
      if (!need_input_grad) return {};
      return matmul(dy, transpose2d(p.weight));
    }
    case LayerKind::maxpool:
      return maxpool2d_backward(dy, cache.argmax, x.shape());
    case LayerKind::relu:
      return relu_backward(x, dy);
    case LayerKind::batchnorm: {
      const auto g = bn_geom(x);
      Tensor<T> dgamma({g.c}), dbeta({g.c});
      Tensor<T> dx(x.shape());
      const double m = static_cast<double>(g.n * g.spatial);
      for (std::size_t c = 0; c < g.c; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < g.n; ++n) {
          const std::size_t off = (n * g.c + c) * g.spatial;
          for (std::size_t s = 0; s < g.spatial; ++s) {
            sum_dy += dy[off + s];
            sum_dy_xhat += static_cast<double>(dy[off + s]) * cache.aux[off + s];
          }
        }
        dgamma[c] = static_cast<T>(sum_dy_xhat);
        dbeta[c] = static_cast<T>(sum_dy);
        const double gamma = p.gamma[c];
        const double istd = cache.inv_std[c];
        for (std::size_t n = 0; n < g.n; ++n) {
          const std::size_t off = (n * g.c + c) * g.spatial;
          for (std::size_t s = 0; s < g.spatial; ++s) {
            double v;
            if (mode == Mode::train) {
              v = gamma * istd / m *
                  (m * dy[off + s] - sum_dy - cache.aux[off + s] * sum_dy_xhat);
            } else {
              v = gamma * istd * dy[off + s];
            }
            dx[off + s] = static_cast<T>(v);
          }
        }
      }
      accumulate(grads.gamma, dgamma);
      accumulate(grads.beta, dbeta);
      return dx;
    }
    case LayerKind::dropout:
      if (cache.aux.empty()) return dy;
      return mul(dy, cache.aux);
    case LayerKind::flatten:
      return dy.reshaped(x.shape());
  }
  throw std::logic_error("unhandled layer kind");
}

template <typename T>
void check_range(const Parameters<T>& params, std::size_t begin, std::size_t end) {
  if (begin > end || end > params.config.layers.size()) {
    throw std::out_of_range("layer range [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") outside network");
  }
}

template <typename T>
void check_input(const Parameters<T>& params, const Tensor<T>& x, std::size_t begin) {
  const Shape expected = params.config.boundary_shapes()[begin];
  if (x.rank() != expected.size() + 1 ||
      !std::equal(expected.begin(), expected.end(), x.shape().begin() + 1)) {
    throw ShapeError("network input at boundary " + std::to_string(begin) + " expects N x " +
                     shape_str(expected) + ", got " + shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
ForwardResult<T> forward_range(Parameters<T>& params, const Tensor<T>& input, std::size_t begin,
                               std::size_t end, Mode mode, Rng* dropout_rng, bool keep_cache) {
  check_range(params, begin, end);
  check_input(params, input, begin);
  ForwardResult<T> res;
  res.cache.begin = begin;
  res.cache.end = end;
  res.cache.mode = mode;
  res.cache.params_version = params.version;
  if (keep_cache) res.cache.layers.resize(end - begin);
  Tensor<T> x = input;
  for (std::size_t i = begin; i < end; ++i) {
    LayerCache<T>* cache = keep_cache ? &res.cache.layers[i - begin] : nullptr;
    Tensor<T> y = layer_forward(params.config.layers[i], params.layers[i], &params.layers[i], x,
                                mode, dropout_rng, cache);
    if (cache) cache->input = std::move(x);
    x = std::move(y);
  }
  res.output = std::move(x);
  return res;
}

template <typename T>
Tensor<T> infer_range(const Parameters<T>& params, const Tensor<T>& input, std::size_t begin,
                      std::size_t end) {
  check_range(params, begin, end);
  check_input(params, input, begin);
  Tensor<T> x = input;
  for (std::size_t i = begin; i < end; ++i) {
    x = layer_forward<T>(params.config.layers[i], params.layers[i], nullptr, x, Mode::eval,
                         nullptr, nullptr);
  }
  return x;
}

template <typename T>
ForwardResult<T> forward(Parameters<T>& params, const Tensor<T>& batch, Mode mode,
                         Rng* dropout_rng) {
  return forward_range(params, batch, 0, params.config.layers.size(), mode, dropout_rng);
}

template <typename T>
Tensor<T> backward_range(const Parameters<T>& params, const ForwardCache<T>& cache,
                         const Tensor<T>& grad_output, Gradients<T>& grads,
                         bool need_input_grad) {
  if (cache.layers.size() != cache.end - cache.begin) {
    throw StaleCacheError("backward: forward cache was not retained");
  }
  if (cache.params_version != params.version) {
    throw StaleCacheError("backward: forward cache predates a parameter update (version " +
                          std::to_string(cache.params_version) + " vs " +
                          std::to_string(params.version) + ")");
  }
  if (grads.layers.size() != params.layers.size()) grads.layers.resize(params.layers.size());
  Tensor<T> dy = grad_output;
  for (std::size_t i = cache.end; i-- > cache.begin;) {
    const bool want_dx = need_input_grad || i > cache.begin;
    dy = layer_backward(params.config.layers[i], params.layers[i], cache.layers[i - cache.begin],
                        cache.mode, dy, grads.layers[i], want_dx);
  }
  return dy;
}

template <typename T>
Gradients<T> backward(const Parameters<T>& params, const ForwardCache<T>& cache,
                      const Tensor<T>& grad_logits, bool need_input_grad) {
  Gradients<T> grads;
  Tensor<T> dx = backward_range(params, cache, grad_logits, grads, need_input_grad);
  if (need_input_grad) grads.input = std::move(dx);
  return grads;
}

template <typename T>
ForwardResult<T> forward_to_tap(Parameters<T>& params, const Tensor<T>& input,
                                const std::string& tap, Mode mode, Rng* dropout_rng) {
  return forward_range(params, input, 0, params.config.tap_boundary(tap), mode, dropout_rng);
}

template <typename T>
ForwardResult<T> resume_from_tap(Parameters<T>& params, const Tensor<T>& activation,
                                 const std::string& tap, Mode mode, Rng* dropout_rng) {
  return forward_range(params, activation, params.config.tap_boundary(tap),
                       params.config.layers.size(), mode, dropout_rng);
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw std::invalid_argument("stack of zero tensors");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  Tensor<T> out(shape);
  const std::size_t per = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items[0].shape()) {
      throw ShapeError("stack: item " + std::to_string(i) + " has shape " +
                       shape_str(items[i].shape()));
    }
    std::copy(items[i].raw(), items[i].raw() + per, out.raw() + i * per);
  }
  return out;
}

template <typename T>
Tensor<T> unstack_row(const Tensor<T>& batch, std::size_t i) {
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t per = shape_numel(shape);
  std::vector<T> data(batch.raw() + i * per, batch.raw() + (i + 1) * per);
  return Tensor<T>(std::move(shape), std::move(data));
}

#define BCLAB_INSTANTIATE(T)                                                                   \
  template struct Parameters<T>;                                                               \
  template struct Gradients<T>;                                                                \
  template Parameters<T> init_weights(const NetworkConfig&, Rng&);                             \
  template ForwardResult<T> forward_range(Parameters<T>&, const Tensor<T>&, std::size_t,       \
                                          std::size_t, Mode, Rng*, bool);                      \
  template Tensor<T> infer_range(const Parameters<T>&, const Tensor<T>&, std::size_t,          \
                                 std::size_t);                                                 \
  template ForwardResult<T> forward(Parameters<T>&, const Tensor<T>&, Mode, Rng*);             \
  template Tensor<T> backward_range(const Parameters<T>&, const ForwardCache<T>&,              \
                                    const Tensor<T>&, Gradients<T>&, bool);                    \
  template Gradients<T> backward(const Parameters<T>&, const ForwardCache<T>&,                 \
                                 const Tensor<T>&, bool);                                      \
  template ForwardResult<T> forward_to_tap(Parameters<T>&, const Tensor<T>&,                   \
                                           const std::string&, Mode, Rng*);                    \
  template ForwardResult<T> resume_from_tap(Parameters<T>&, const Tensor<T>&,                  \
                                            const std::string&, Mode, Rng*);                   \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);                                     \
  template Tensor<T> unstack_row(const Tensor<T>&, std::size_t);

BCLAB_INSTANTIATE(float)
BCLAB_INSTANTIATE(double)

template Parameters<double> Parameters<float>::cast<double>() const;
template Parameters<float> Parameters<double>::cast<float>() const;

#undef BCLAB_INSTANTIATE

}  // namespace bclab
