#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eventmatch/error.hpp"

namespace eventmatch {

using Bytes = std::vector<std::uint8_t>;

// Dense row-major tensor with up to four extents. Feature maps are stored
// channel-last (H x W x C).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Shape = std::vector<std::size_t>;

  BasicTensor() = default;
  explicit BasicTensor(Shape dims, T fill = T{});
  BasicTensor(Shape dims, std::vector<T> values);

  const Shape& dims() const noexcept { return dims_; }
  std::size_t ndim() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  T& operator()(std::size_t i, std::size_t j) noexcept {
    return values_[i * dims_[1] + j];
  }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return values_[i * dims_[1] + j];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) noexcept {
    return values_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k,
                      std::size_t l) const noexcept {
    return values_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }

  // Same payload, new extents; the element count must match.
  BasicTensor reshaped(Shape dims) const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return BasicTensor<U>(dims_, std::move(out));
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  Shape dims_;
  std::vector<T> values_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;
using Mask = BasicTensor<std::uint8_t>;

// Byte-for-byte comparison (distinguishes -0.0 from 0.0, compares NaN payloads).
template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b);

std::string shape_string(const std::vector<std::size_t>& dims);

// ---------------------------------------------------------------------------
// Kernels. All are pure; rows of the output may be computed in parallel but the
// reduction order inside each output element is fixed.

// [m x k] . [k x n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// [m x k] . [n x k]^T
template <typename T>
BasicTensor<T> matmul_transposed(const BasicTensor<T>& a, const BasicTensor<T>& b);

// softmax(scale * x) along the last axis, max-subtracted.
template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& t, T scale = T(1));

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation of an H x W x Cin input with a kh x kw x Cin x Cout kernel,
// zero padded. `bias` is either empty or Cout long.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      std::span<const T> bias, Conv2dParams params);

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

template <typename T>
struct SampleResult {
  BasicTensor<T> values;  // H' x W' x C
  Mask valid;             // H' x W'
};

// Bilinear lookup of `src` (H x W x C) at `coords` (H' x W' x 2, holding x then
// y in source pixel units). A sample is valid when 0 <= x <= W-1 and
// 0 <= y <= H-1; invalid samples are zero.
template <typename T>
SampleResult<T> bilinear_sample(const BasicTensor<T>& src, const BasicTensor<T>& coords);

// x [n x in] . w [in x out] + b
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      std::span<const T> bias = {});

// Per-channel normalization over all spatial positions of an H x W x C map.
template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, T eps = T(1e-5));

// Normalization over the last axis with affine gain and bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, std::span<const T> gamma,
                          std::span<const T> beta, T eps = T(1e-5));

template <typename T>
void relu_inplace(BasicTensor<T>& x);

template <typename T>
void gelu_inplace(BasicTensor<T>& x);

template <typename T>
void add_inplace(BasicTensor<T>& x, const BasicTensor<T>& y);

// ---------------------------------------------------------------------------
// TNSR serialization: "TNSR", u32 dtype (0 = f32), u32 ndim, u32 dims[ndim],
// then the little-endian row-major payload.

inline constexpr std::uint32_t kTensorDtypeF32 = 0;

std::size_t tensor_header_size(std::size_t ndim);
Bytes write_tensor(const Tensor& t);
Tensor read_tensor(std::span<const std::uint8_t> bytes);

}  // namespace eventmatch
