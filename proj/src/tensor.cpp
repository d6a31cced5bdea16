#include "bclab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bclab {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " holds " +
                     std::to_string(shape_numel(shape_)) +
                     " elements but buffer has " + std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape_));
  }
  return shape_[axis];
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) +
                     " does not match shape " + shape_str(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) {
      throw std::out_of_range("index " + std::to_string(i) + " out of range on axis " +
                              std::to_string(axis) + " of shape " + shape_str(shape_));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
std::optional<std::size_t> first_non_finite(const Tensor<T>& t) {
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) return i;
  }
  return std::nullopt;
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& context) {
  if (auto bad = first_non_finite(t)) {
    throw NumericError(context + ": non-finite value at flat index " +
                       std::to_string(*bad) + " of tensor " + shape_str(t.shape()));
  }
}

// ---------------------------------------------------------------------------
// gemm
// ---------------------------------------------------------------------------

namespace {

// Columns handled per register block: 4 rows x kBlockCols accumulators.
template <typename T>
constexpr std::size_t kBlockCols = 256 / sizeof(T);

template <typename T, std::size_t Rows>
void gemm_rows(std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate) {
  constexpr std::size_t W = kBlockCols<T>;
  std::size_t j = 0;
  for (; j + W <= n; j += W) {
    alignas(64) T acc[Rows][W];
    for (std::size_t r = 0; r < Rows; ++r)
      for (std::size_t jj = 0; jj < W; ++jj)
        acc[r][jj] = accumulate ? c[r * n + j + jj] : T{0};
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * n + j;
      for (std::size_t r = 0; r < Rows; ++r) {
        const T av = a[r * k + kk];
        for (std::size_t jj = 0; jj < W; ++jj) acc[r][jj] = std::fma(av, brow[jj], acc[r][jj]);
      }
    }
    for (std::size_t r = 0; r < Rows; ++r)
      for (std::size_t jj = 0; jj < W; ++jj) c[r * n + j + jj] = acc[r][jj];
  }
  if (j < n) {
    const std::size_t width = n - j;
    for (std::size_t r = 0; r < Rows; ++r) {
      T* crow = c + r * n + j;
      if (!accumulate) std::fill(crow, crow + width, T{0});
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T av = a[r * k + kk];
        const T* brow = b + kk * n + j;
        for (std::size_t jj = 0; jj < width; ++jj) crow[jj] = std::fma(av, brow[jj], crow[jj]);
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<T, 4>(n, k, a + i * k, b, c + i * n, accumulate);
  switch (m - i) {
    case 3: gemm_rows<T, 3>(n, k, a + i * k, b, c + i * n, accumulate); break;
    case 2: gemm_rows<T, 2>(n, k, a + i * k, b, c + i * n, accumulate); break;
    case 1: gemm_rows<T, 1>(n, k, a + i * k, b, c + i * n, accumulate); break;
    default: break;
  }
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d expects rank 2, got " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor<T> out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  gemm(a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), out.raw(), false);
  return out;
}

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b,
                               const Tensor<T>& grad_out) {
  if (grad_out.shape() != Shape{a.dim(0), b.dim(1)}) {
    throw ShapeError("matmul_backward: gradient shape " + shape_str(grad_out.shape()) +
                     " does not match product shape");
  }
  return {matmul(grad_out, transpose2d(b)), matmul(transpose2d(a), grad_out)};
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t pad) {
  if (stride == 0) throw ShapeError("convolution stride must be >= 1");
  if (in + 2 * pad < kernel) {
    throw ShapeError("kernel extent " + std::to_string(kernel) + " exceeds padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, ho, wo;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& kernel,
                   const Conv2dGeometry& g) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d expects NCHW input and OIHW kernel, got " +
                     shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                     " vs kernel " + shape_str(kernel.shape()));
  }
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
             kernel.dim(2), kernel.dim(3), 0, 0};
  d.ho = conv_out_extent(d.h, d.kh, g.stride_h, g.pad_h);
  d.wo = conv_out_extent(d.w, d.kw, g.stride_w, g.pad_w);
  return d;
}

// col[(c,ki,kj)][(oh,ow)]
template <typename T>
void im2col(const T* img, const ConvDims& d, const Conv2dGeometry& g, T* col) {
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t ki = 0; ki < d.kh; ++ki)
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        T* row = col + ((c * d.kh + ki) * d.kw + kj) * d.pixels();
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          T* out = row + oh * d.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(out, out + d.wo, T{0});
            continue;
          }
          const T* src = img + (c * d.h + static_cast<std::size_t>(ih)) * d.w;
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w))
                          ? T{0}
                          : src[static_cast<std::size_t>(iw)];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, const Conv2dGeometry& g, T* img) {
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t ki = 0; ki < d.kh; ++ki)
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const T* row = col + ((c * d.kh + ki) * d.kw + kj) * d.pixels();
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          T* dst = img + (c * d.h + static_cast<std::size_t>(ih)) * d.w;
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
            dst[static_cast<std::size_t>(iw)] += row[oh * d.wo + ow];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Conv2dGeometry& geom) {
  const ConvDims d = conv_dims(input, kernel, geom);
  Tensor<T> out({d.n, d.o, d.ho, d.wo});
  std::vector<T> col(d.patch() * d.pixels());
  const std::size_t in_stride = d.c * d.h * d.w;
  const std::size_t out_stride = d.o * d.pixels();
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(input.raw() + n * in_stride, d, geom, col.data());
    gemm(d.o, d.pixels(), d.patch(), kernel.raw(), col.data(), out.raw() + n * out_stride,
         false);
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                               const Tensor<T>& grad_out, const Conv2dGeometry& geom,
                               bool need_input_grad) {
  const ConvDims d = conv_dims(input, kernel, geom);
  if (grad_out.shape() != Shape{d.n, d.o, d.ho, d.wo}) {
    throw ShapeError("conv2d_backward: gradient shape " + shape_str(grad_out.shape()) +
                     " does not match output " + shape_str({d.n, d.o, d.ho, d.wo}));
  }
  Conv2dGrads<T> g{need_input_grad ? Tensor<T>(input.shape()) : Tensor<T>{},
                   Tensor<T>(kernel.shape())};
  std::vector<T> col(d.patch() * d.pixels());
  std::vector<T> col_t(d.patch() * d.pixels());
  std::vector<T> dcol(need_input_grad ? d.patch() * d.pixels() : 0);
  const Tensor<T> kernel_t =
      need_input_grad ? transpose2d(kernel.reshaped({d.o, d.patch()})) : Tensor<T>{};
  const std::size_t in_stride = d.c * d.h * d.w;
  const std::size_t out_stride = d.o * d.pixels();
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* dy = grad_out.raw() + n * out_stride;
    im2col(input.raw() + n * in_stride, d, geom, col.data());
    for (std::size_t r = 0; r < d.patch(); ++r)
      for (std::size_t p = 0; p < d.pixels(); ++p) col_t[p * d.patch() + r] = col[r * d.pixels() + p];
    // dK[O, CKK] += dY[O, P] * col^T[P, CKK]
    gemm(d.o, d.patch(), d.pixels(), dy, col_t.data(), g.grad_kernel.raw(), n > 0);
    if (need_input_grad) {
      // dcol[CKK, P] = K^T[CKK, O] * dY[O, P]
      gemm(d.patch(), d.pixels(), d.o, kernel_t.raw(), dy, dcol.data(), false);
      col2im_add(dcol.data(), d, geom, g.grad_input.raw() + n * in_stride);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t ksize, std::size_t stride) {
  if (ksize == 0 || stride == 0) throw ShapeError("maxpool2d: ksize and stride must be >= 1");
  if (input.rank() != 4) throw ShapeError("maxpool2d expects NCHW, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < ksize || w < ksize || (h - ksize) % stride != 0 || (w - ksize) % stride != 0) {
    throw ShapeError("maxpool2d: window " + std::to_string(ksize) + " stride " +
                     std::to_string(stride) + " does not tile input " +
                     shape_str(input.shape()) + " exactly");
  }
  const std::size_t ho = (h - ksize) / stride + 1, wo = (w - ksize) / stride + 1;
  PoolResult<T> res{Tensor<T>({n, c, ho, wo}), std::vector<std::size_t>(n * c * ho * wo)};
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow, ++o) {
        std::size_t best = base + oh * stride * w + ow * stride;
        for (std::size_t ki = 0; ki < ksize; ++ki)
          for (std::size_t kj = 0; kj < ksize; ++kj) {
            const std::size_t idx = base + (oh * stride + ki) * w + ow * stride + kj;
            if (!std::isnan(input[best]) && !(input[idx] <= input[best])) best = idx;
          }
        res.output[o] = input[best];
        res.argmax[o] = best;
      }
  }
  return res;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const Shape& input_shape) {
  if (grad_out.size() != argmax.size()) {
    throw ShapeError("maxpool2d_backward: gradient " + shape_str(grad_out.shape()) +
                     " does not match recorded argmax count " + std::to_string(argmax.size()));
  }
  Tensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_out[i];
  return grad;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcast-compatible");
  }
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "add", [](T x, T y) { return x + y; });
}
template <typename T>
Tensor<T> add(const Tensor<T>& a, T scalar) {
  return map(a, [scalar](T x) { return x + scalar; });
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "sub", [](T x, T y) { return x - y; });
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, T scalar) {
  return map(a, [scalar](T x) { return x - scalar; });
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "mul", [](T x, T y) { return x * y; });
}
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return map(a, [factor](T x) { return x * factor; });
}
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return map(a, [](T x) { return !(x <= T{0}) ? x : T{0}; });  // NaN passes through
}
template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return map(a, [](T x) { return std::exp(x); });
}
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return map(a, [](T x) { return std::log(x); });
}

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>* b, T scalar) {
  switch (op) {
    case ElementwiseOp::add: return b ? add(a, *b) : add(a, scalar);
    case ElementwiseOp::sub: return b ? sub(a, *b) : sub(a, scalar);
    case ElementwiseOp::mul: return b ? mul(a, *b) : scale(a, scalar);
    case ElementwiseOp::scale: return scale(a, scalar);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  return zip(input, grad_out, "relu_backward", [](T x, T g) { return !(x <= T{0}) ? g : T{0}; });
}
template <typename T>
Tensor<T> exp_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  return zip(output, grad_out, "exp_backward", [](T y, T g) { return g * y; });
}
template <typename T>
Tensor<T> log_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  return zip(input, grad_out, "log_backward", [](T x, T g) { return g / x; });
}
template <typename T>
Tensor<T> mul_backward(const Tensor<T>& other, const Tensor<T>& grad_out) {
  return zip(other, grad_out, "mul_backward", [](T y, T g) { return g * y; });
}

#define BCLAB_INSTANTIATE(T)                                                              \
  template class Tensor<T>;                                                               \
  template std::optional<std::size_t> first_non_finite(const Tensor<T>&);                 \
  template void check_finite(const Tensor<T>&, const std::string&);                       \
  template void gemm(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template Tensor<T> transpose2d(const Tensor<T>&);                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template MatmulGrads<T> matmul_backward(const Tensor<T>&, const Tensor<T>&,             \
                                          const Tensor<T>&);                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Conv2dGeometry&);   \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,             \
                                          const Tensor<T>&, const Conv2dGeometry&, bool); \
  template PoolResult<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> maxpool2d_backward(const Tensor<T>&, const std::vector<std::size_t>&, \
                                        const Shape&);                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> add(const Tensor<T>&, T);                                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub(const Tensor<T>&, T);                                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> exp(const Tensor<T>&);                                               \
  template Tensor<T> log(const Tensor<T>&);                                               \
  template Tensor<T> elementwise(ElementwiseOp, const Tensor<T>&, const Tensor<T>*, T);   \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> exp_backward(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> log_backward(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> mul_backward(const Tensor<T>&, const Tensor<T>&);

BCLAB_INSTANTIATE(float)
BCLAB_INSTANTIATE(double)

#undef BCLAB_INSTANTIATE

}  // namespace bclab
