#include "eventmatch/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "eventmatch/io.hpp"
#include "eventmatch/parallel.hpp"

namespace eventmatch {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

void check_dims(const std::vector<std::size_t>& dims) {
  if (dims.empty() || dims.size() > 4)
    throw ShapeError("tensor rank must be in [1,4], got " + std::to_string(dims.size()));
  for (auto d : dims)
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_string(dims));
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.ndim() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.dims()));
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape dims, T fill) : dims_(std::move(dims)) {
  check_dims(dims_);
  values_.assign(product(dims_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape dims, std::vector<T> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
  check_dims(dims_);
  if (values_.size() != product(dims_))
    throw ShapeError("payload of " + std::to_string(values_.size()) +
                     " elements does not fill " + shape_string(dims_));
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= dims_.size()) throw ShapeError("axis out of range for " + shape_string(dims_));
  return dims_[axis];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape dims) const {
  return BasicTensor(std::move(dims), values_);
}

template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.dims() == b.dims() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner extents differ: " + shape_string(a.dims()) + " . " +
                     shape_string(b.dims()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> out({m, n});
  MutMap<T>(out.data(), m, n).noalias() =
      ConstMap<T>(a.data(), m, k) * ConstMap<T>(b.data(), k, n);
  return out;
}

template <typename T>
BasicTensor<T> matmul_transposed(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul_transposed lhs");
  require_rank(b, 2, "matmul_transposed rhs");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("matmul_transposed inner extents differ: " + shape_string(a.dims()) +
                     " . " + shape_string(b.dims()) + "^T");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  BasicTensor<T> out({m, n});
  MutMap<T>(out.data(), m, n).noalias() =
      ConstMap<T>(a.data(), m, k) * ConstMap<T>(b.data(), n, k).transpose();
  return out;
}

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& t, T scale) {
  if (t.empty()) return t;
  if (!(scale > T(0))) throw DomainError("softmax scale must be positive");
  BasicTensor<T> out = t;
  const std::size_t n = t.dims().back();
  const std::size_t rows = t.size() / n;
  parallel_for(0, rows, [&](std::size_t r) {
    T* row = out.data() + r * n;
    // exponentials and their sum in double so a float row still sums to 1
    // within one rounding per entry
    const double mx = *std::max_element(row, row + n);
    thread_local std::vector<double> e;
    e.resize(n);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      e[i] = std::exp((row[i] - mx) * static_cast<double>(scale));
      sum += e[i];
    }
    for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<T>(e[i] / sum);
  });
  return out;
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ShapeError("conv stride must be positive");
  if (in + 2 * padding < kernel)
    throw ShapeError("conv kernel " + std::to_string(kernel) + " does not fit input " +
                     std::to_string(in) + " with padding " + std::to_string(padding));
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      std::span<const T> bias, Conv2dParams params) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const auto h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const auto kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  if (kernel.dim(2) != cin)
    throw ShapeError("conv2d kernel expects " + std::to_string(kernel.dim(2)) +
                     " input channels, got " + std::to_string(cin));
  if (!bias.empty() && bias.size() != cout)
    throw ShapeError("conv2d bias length " + std::to_string(bias.size()) + " != " +
                     std::to_string(cout));
  const auto s = params.stride, p = params.padding;
  const auto ho = conv_output_extent(h, kh, s, p);
  const auto wo = conv_output_extent(w, kw, s, p);
  const std::size_t patch = kh * kw * cin;

  // im2col: one row per output pixel, laid out to match the kernel's
  // (kh, kw, cin) ordering.
  RowMatrix<T> cols = RowMatrix<T>::Zero(static_cast<Eigen::Index>(ho * wo),
                                         static_cast<Eigen::Index>(patch));
  parallel_for(0, ho, [&](std::size_t oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      T* row = cols.data() + (oy * wo + ox) * patch;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(p);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto ix =
              static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(p);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const T* src = input.data() + (static_cast<std::size_t>(iy) * w + ix) * cin;
          std::copy(src, src + cin, row + (ky * kw + kx) * cin);
        }
      }
    }
  });

  BasicTensor<T> out({ho, wo, cout});
  MutMap<T> res(out.data(), ho * wo, cout);
  res.noalias() = cols * ConstMap<T>(kernel.data(), patch, cout);
  if (!bias.empty()) {
    for (std::size_t i = 0; i < ho * wo; ++i)
      for (std::size_t c = 0; c < cout; ++c) out.data()[i * cout + c] += bias[c];
  }
  return out;
}

template <typename T>
SampleResult<T> bilinear_sample(const BasicTensor<T>& src, const BasicTensor<T>& coords) {
  require_rank(src, 3, "bilinear_sample source");
  require_rank(coords, 3, "bilinear_sample coords");
  if (coords.dim(2) != 2) throw ShapeError("bilinear_sample coords must have 2 channels");
  const auto h = src.dim(0), w = src.dim(1), c = src.dim(2);
  const auto oh = coords.dim(0), ow = coords.dim(1);
  SampleResult<T> res{BasicTensor<T>({oh, ow, c}), Mask({oh, ow})};
  parallel_for(0, oh, [&](std::size_t i) {
    for (std::size_t j = 0; j < ow; ++j) {
      const T x = coords(i, j, 0), y = coords(i, j, 1);
      if (!(x >= T(0) && x <= T(w - 1) && y >= T(0) && y <= T(h - 1))) continue;
      res.valid(i, j) = 1;
      const auto x0 = std::min(static_cast<std::size_t>(std::floor(x)), w - 1);
      const auto y0 = std::min(static_cast<std::size_t>(std::floor(y)), h - 1);
      const auto x1 = std::min(x0 + 1, w - 1);
      const auto y1 = std::min(y0 + 1, h - 1);
      const T fx = x - T(x0), fy = y - T(y0);
      const T w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
      const T w10 = (1 - fx) * fy, w11 = fx * fy;
      const T* p00 = src.data() + (y0 * w + x0) * c;
      const T* p01 = src.data() + (y0 * w + x1) * c;
      const T* p10 = src.data() + (y1 * w + x0) * c;
      const T* p11 = src.data() + (y1 * w + x1) * c;
      T* out = res.values.data() + (i * ow + j) * c;
      for (std::size_t k = 0; k < c; ++k)
        out[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
  });
  return res;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, std::span<const T> bias) {
  BasicTensor<T> out = matmul(x, w);
  if (!bias.empty()) {
    if (bias.size() != out.dim(1)) throw ShapeError("linear bias length mismatch");
    const auto n = out.dim(1);
    for (std::size_t i = 0; i < out.dim(0); ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) += bias[j];
  }
  return out;
}

template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, T eps) {
  require_rank(x, 3, "instance_norm");
  const auto n = x.dim(0) * x.dim(1), c = x.dim(2);
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) mean[k] += x.data()[i * c + k];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double d = x.data()[i * c + k] - mean[k];
      var[k] += d * d;
    }
  BasicTensor<T> out(x.dims());
  for (std::size_t k = 0; k < c; ++k) var[k] = 1.0 / std::sqrt(var[k] / n + eps);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      out.data()[i * c + k] = static_cast<T>((x.data()[i * c + k] - mean[k]) * var[k]);
  return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, std::span<const T> gamma,
                          std::span<const T> beta, T eps) {
  const std::size_t c = x.dims().back();
  if (gamma.size() != c || beta.size() != c) throw ShapeError("layer_norm affine length mismatch");
  BasicTensor<T> out(x.dims());
  const std::size_t rows = x.size() / c;
  parallel_for(0, rows, [&](std::size_t r) {
    const T* in = x.data() + r * c;
    T* o = out.data() + r * c;
    double mean = 0.0;
    for (std::size_t k = 0; k < c; ++k) mean += in[k];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t k = 0; k < c; ++k) var += (in[k] - mean) * (in[k] - mean);
    const double inv = 1.0 / std::sqrt(var / c + eps);
    for (std::size_t k = 0; k < c; ++k)
      o[k] = static_cast<T>((in[k] - mean) * inv) * gamma[k] + beta[k];
  });
  return out;
}

template <typename T>
void relu_inplace(BasicTensor<T>& x) {
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
}

template <typename T>
void gelu_inplace(BasicTensor<T>& x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  for (auto& v : x.values()) v = T(0.5) * v * (T(1) + std::tanh(k * (v + T(0.044715) * v * v * v)));
}

template <typename T>
void add_inplace(BasicTensor<T>& x, const BasicTensor<T>& y) {
  if (x.dims() != y.dims())
    throw ShapeError("add: " + shape_string(x.dims()) + " vs " + shape_string(y.dims()));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

// ---------------------------------------------------------------------------

std::size_t tensor_header_size(std::size_t ndim) { return 4 + 4 + 4 + 4 * ndim; }

Bytes write_tensor(const Tensor& t) {
  if (t.ndim() < 1 || t.ndim() > 4) throw ShapeError("cannot serialize an empty tensor");
  Bytes out;
  out.reserve(tensor_header_size(t.ndim()) + 4 * t.size());
  ByteWriter w(out);
  w.put_bytes("TNSR");
  w.put<std::uint32_t>(kTensorDtypeF32);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.dims()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (float v : t.values()) w.put<float>(v);
  return out;
}

Tensor read_tensor(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4) throw FormatError("tensor file too short for magic");
  if (r.get_string(4) != "TNSR") throw FormatError("bad tensor magic (expected TNSR)");
  const auto dtype = r.get<std::uint32_t>();
  if (dtype != kTensorDtypeF32) throw FormatError("unsupported tensor dtype " + std::to_string(dtype));
  const auto ndim = r.get<std::uint32_t>();
  if (ndim < 1 || ndim > 4) throw FormatError("tensor rank " + std::to_string(ndim) + " outside [1,4]");
  std::vector<std::size_t> dims(ndim);
  std::size_t count = 1;
  for (auto& d : dims) {
    d = r.get<std::uint32_t>();
    if (d == 0) throw FormatError("tensor extent is zero");
    count *= d;
  }
  if (r.remaining() != count * 4)
    throw FormatError("tensor payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(count * 4));
  std::vector<float> values(count);
  for (auto& v : values) v = r.get<float>();
  return Tensor(std::move(dims), std::move(values));
}

// ---------------------------------------------------------------------------

#define EVENTMATCH_INSTANTIATE(T)                                                              \
  template class BasicTensor<T>;                                                               \
  template bool bitwise_equal(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> matmul_transposed(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> softmax_lastdim(const BasicTensor<T>&, T);                           \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 std::span<const T>, Conv2dParams);                            \
  template SampleResult<T> bilinear_sample(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 std::span<const T>);                                          \
  template BasicTensor<T> instance_norm(const BasicTensor<T>&, T);                             \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, std::span<const T>,                \
                                     std::span<const T>, T);                                   \
  template void relu_inplace(BasicTensor<T>&);                                                 \
  template void gelu_inplace(BasicTensor<T>&);                                                 \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);

EVENTMATCH_INSTANTIATE(float)
EVENTMATCH_INSTANTIATE(double)
#undef EVENTMATCH_INSTANTIATE

template class BasicTensor<std::uint8_t>;
template bool bitwise_equal(const BasicTensor<std::uint8_t>&, const BasicTensor<std::uint8_t>&);

}  // namespace eventmatch
