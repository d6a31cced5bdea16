#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bclab {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major n-d array. float for training, double for verification.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Bounds-checked multi-index access.
  std::size_t offset(std::initializer_list<std::size_t> index) const;
  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }

  // Unchecked row-major access for rank-2 tensors.
  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * shape_[1] + j];
  }

  Tensor reshaped(Shape shape) const;
  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    if (data_.empty()) return Tensor<U>();
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

// Returns the first flat index holding a NaN/Inf, if any.
template <typename T>
std::optional<std::size_t> first_non_finite(const Tensor<T>& t);

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return !first_non_finite(t).has_value();
}

// Throws NumericError naming `context` when the tensor holds NaN/Inf.
template <typename T>
void check_finite(const Tensor<T>& t, const std::string& context);

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

// C[M,N] (+)= A[M,K] * B[K,N], all row-major and contiguous. Each output
// element is accumulated in ascending k with fused multiply-add, so a row's
// result never depends on M or on how the product is blocked.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate);

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
struct MatmulGrads {
  Tensor<T> grad_a;
  Tensor<T> grad_b;
};

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b,
                               const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

struct Conv2dGeometry {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                            std::size_t stride, std::size_t pad);

// input NCHW, kernel OIHW -> N,O,Ho,Wo
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Conv2dGeometry& geom);

template <typename T>
struct Conv2dGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_kernel;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                               const Tensor<T>& grad_out,
                               const Conv2dGeometry& geom,
                               bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

template <typename T>
struct PoolResult {
  Tensor<T> output;
  // Flat index into the input for every output cell.
  std::vector<std::size_t> argmax;
};

// Requires (H - ksize) and (W - ksize) to be divisible by stride.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t ksize,
                        std::size_t stride);

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out,
                             const std::vector<std::size_t>& argmax,
                             const Shape& input_shape);

// ---------------------------------------------------------------------------
// Elementwise. Broadcasting is limited to scalar-with-tensor and equal shapes.
// ---------------------------------------------------------------------------

enum class ElementwiseOp { add, sub, mul, scale, relu, exp, log };

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add(const Tensor<T>& a, T scalar);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, T scalar);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
template <typename T>
Tensor<T> log(const Tensor<T>& a);

// Generic dispatcher. Binary ops take two tensors, or one tensor plus
// `scalar`; unary ops ignore `b`.
template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a,
                      const Tensor<T>* b = nullptr, T scalar = T{0});

// Backward counterparts: each returns dL/d(input) given dL/d(output).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);
template <typename T>
Tensor<T> exp_backward(const Tensor<T>& output, const Tensor<T>& grad_out);
template <typename T>
Tensor<T> log_backward(const Tensor<T>& input, const Tensor<T>& grad_out);
// Gradient of a*b with respect to a is grad_out*b (swap for b).
template <typename T>
Tensor<T> mul_backward(const Tensor<T>& other, const Tensor<T>& grad_out);

}  // namespace bclab
