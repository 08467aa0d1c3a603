#include "eventmatch/matching.hpp"

#include <algorithm>
#include <cmath>

#include "eventmatch/parallel.hpp"

namespace eventmatch {

std::size_t CorrelationVolume::candidates() const {
  return mode == MatchMode::Flow ? data.dim(2) * data.dim(3) : data.dim(2);
}

namespace {

void require_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.ndim() != 3 || a.dims() != b.dims())
    throw ShapeError(std::string(what) + ": feature maps " + shape_string(a.dims()) + " and " +
                     shape_string(b.dims()) + " differ");
}

float corr_scale(std::size_t d, bool on) { return on ? 1.0f / std::sqrt(static_cast<float>(d)) : 1.0f; }

struct VolumeGeometry {
  std::size_t h, w, n;  // n candidates per pixel
};

template <typename T>
VolumeGeometry geometry_of(const BasicTensor<T>& v, MatchMode mode) {
  if (mode == MatchMode::Flow) {
    if (v.ndim() != 4 || v.dim(2) != v.dim(0) || v.dim(3) != v.dim(1))
      throw ShapeError("flow volume must be H x W x H x W, got " + shape_string(v.dims()));
    return {v.dim(0), v.dim(1), v.dim(0) * v.dim(1)};
  }
  if (v.ndim() != 3 || v.dim(2) != v.dim(1))
    throw ShapeError("disparity volume must be H x W x W, got " + shape_string(v.dims()));
  return {v.dim(0), v.dim(1), v.dim(1)};
}

// Candidate c as (x, y) in the target grid.
inline void candidate_coord(MatchMode mode, std::size_t c, std::size_t w, double& x, double& y) {
  if (mode == MatchMode::Flow) {
    x = static_cast<double>(c % w);
    y = static_cast<double>(c / w);
  } else {
    x = static_cast<double>(c);
    y = 0.0;
  }
}

// Row softmax of c/T into `m` (double accumulation).
template <typename T>
void softmax_row(const T* c, std::size_t n, double inv_t, std::vector<double>& m) {
  m.resize(n);
  const double mx = static_cast<double>(*std::max_element(c, c + n));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = std::exp((static_cast<double>(c[i]) - mx) * inv_t);
    sum += m[i];
  }
  for (auto& v : m) v /= sum;
}

}  // namespace

CorrelationVolume correlation_flow(const Tensor& f1, const Tensor& f2, bool scale_by_sqrt_dim) {
  require_pair(f1, f2, "correlation_flow");
  const std::size_t h = f1.dim(0), w = f1.dim(1), d = f1.dim(2);
  Tensor c = matmul_transposed(f1.reshaped({h * w, d}), f2.reshaped({h * w, d}));
  const float s = corr_scale(d, scale_by_sqrt_dim);
  if (s != 1.0f)
    for (auto& v : c.values()) v *= s;
  return {MatchMode::Flow, c.reshaped({h, w, h, w})};
}

CorrelationVolume correlation_disparity(const Tensor& left, const Tensor& right, bool scale_by_sqrt_dim) {
  require_pair(left, right, "correlation_disparity");
  const std::size_t h = left.dim(0), w = left.dim(1), d = left.dim(2);
  const float s = corr_scale(d, scale_by_sqrt_dim);
  Tensor c({h, w, w});
  parallel_for(0, h, [&](std::size_t i) {
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < w; ++k) {
        const float* a = &left(i, j, 0);
        const float* b = &right(i, k, 0);
        float acc = 0.0f;
        for (std::size_t ch = 0; ch < d; ++ch) acc += a[ch] * b[ch];
        c(i, j, k) = acc * s;
      }
  });
  return {MatchMode::Disparity, std::move(c)};
}

template <typename T>
BasicTensor<T> soft_argmax_displacement(const BasicTensor<T>& volume, MatchMode mode, double temperature,
                                        BasicTensor<T>* distribution) {
  if (!(temperature > 0.0)) throw DomainError("matching temperature must be positive");
  const auto g = geometry_of(volume, mode);
  const std::size_t ch = channels_for(mode);
  BasicTensor<T> out({g.h, g.w, ch});
  if (distribution) *distribution = BasicTensor<T>(volume.dims());
  const double inv_t = 1.0 / temperature;
  parallel_for(0, g.h * g.w, [&](std::size_t p) {
    std::vector<double> m;
    softmax_row(volume.data() + p * g.n, g.n, inv_t, m);
    double ex = 0.0, ey = 0.0;
    for (std::size_t c = 0; c < g.n; ++c) {
      double x, y;
      candidate_coord(mode, c, g.w, x, y);
      ex += m[c] * x;
      ey += m[c] * y;
    }
    const double px = static_cast<double>(p % g.w), py = static_cast<double>(p / g.w);
    if (mode == MatchMode::Flow) {
      out[p * 2] = static_cast<T>(ex - px);
      out[p * 2 + 1] = static_cast<T>(ey - py);
    } else {
      out[p] = static_cast<T>(px - ex);
    }
    if (distribution)
      for (std::size_t c = 0; c < g.n; ++c) (*distribution)[p * g.n + c] = static_cast<T>(m[c]);
  });
  return out;
}

template <typename T>
BasicTensor<T> match_gradient(const BasicTensor<T>& volume, MatchMode mode, double temperature,
                              const BasicTensor<T>& upstream) {
  if (!(temperature > 0.0)) throw DomainError("matching temperature must be positive");
  const auto g = geometry_of(volume, mode);
  const std::size_t ch = channels_for(mode);
  if (upstream.dims() != std::vector<std::size_t>{g.h, g.w, ch})
    throw ShapeError("upstream gradient " + shape_string(upstream.dims()) + " does not match volume " +
                     shape_string(volume.dims()));
  BasicTensor<T> grad(volume.dims());
  const double inv_t = 1.0 / temperature;
  parallel_for(0, g.h * g.w, [&](std::size_t p) {
    std::vector<double> m;
    softmax_row(volume.data() + p * g.n, g.n, inv_t, m);
    double ex = 0.0, ey = 0.0;
    for (std::size_t c = 0; c < g.n; ++c) {
      double x, y;
      candidate_coord(mode, c, g.w, x, y);
      ex += m[c] * x;
      ey += m[c] * y;
    }
    const double gx = static_cast<double>(upstream[p * ch]);
    const double gy = ch == 2 ? static_cast<double>(upstream[p * ch + 1]) : 0.0;
    const double sign = mode == MatchMode::Flow ? 1.0 : -1.0;
    for (std::size_t c = 0; c < g.n; ++c) {
      double x, y;
      candidate_coord(mode, c, g.w, x, y);
      grad[p * g.n + c] = static_cast<T>(sign * inv_t * m[c] * (gx * (x - ex) + gy * (y - ey)));
    }
  });
  return grad;
}

template BasicTensor<float> soft_argmax_displacement(const BasicTensor<float>&, MatchMode, double,
                                                     BasicTensor<float>*);
template BasicTensor<double> soft_argmax_displacement(const BasicTensor<double>&, MatchMode, double,
                                                      BasicTensor<double>*);
template BasicTensor<float> match_gradient(const BasicTensor<float>&, MatchMode, double, const BasicTensor<float>&);
template BasicTensor<double> match_gradient(const BasicTensor<double>&, MatchMode, double,
                                            const BasicTensor<double>&);

MatchResult match(const CorrelationVolume& volume, double temperature, std::size_t scale) {
  MatchResult r;
  const auto d = soft_argmax_displacement(volume.data, volume.mode, temperature, &r.distribution);
  r.displacement.mode = volume.mode;
  r.displacement.data = d;
  r.displacement.valid = Mask({d.dim(0), d.dim(1)}, 1);
  r.displacement.scale = scale;
  if (volume.mode == MatchMode::Disparity && d.size() > 0) {
    std::size_t negative = 0;
    for (float v : d.values())
      if (v < -0.5f) ++negative;
    r.negative_fraction = static_cast<double>(negative) / static_cast<double>(d.size());
    if (r.negative_fraction > 0.01)
      r.warnings.push_back("disparity convention: " + std::to_string(100.0 * r.negative_fraction) +
                           "% of pixels below -0.5 px; check that the left view is the reference");
  }
  return r;
}

MatchResult global_match(const FeatureMap& f1, const FeatureMap& f2, MatchMode mode, const MatchConfig& config) {
  const auto volume = mode == MatchMode::Flow ? correlation_flow(f1.data, f2.data, config.scale_by_sqrt_dim)
                                              : correlation_disparity(f1.data, f2.data, config.scale_by_sqrt_dim);
  return match(volume, config.temperature, f1.scale);
}

Tensor local_correlation(const Tensor& f1, const Tensor& f2, MatchMode mode, std::size_t radius,
                         bool scale_by_sqrt_dim) {
  require_pair(f1, f2, "local_correlation");
  const long h = static_cast<long>(f1.dim(0)), w = static_cast<long>(f1.dim(1));
  const std::size_t d = f1.dim(2);
  const long r = static_cast<long>(radius);
  const long span = 2 * r + 1;
  const long rows = mode == MatchMode::Flow ? span : 1;
  const float s = corr_scale(d, scale_by_sqrt_dim);
  Tensor out({f1.dim(0), f1.dim(1), static_cast<std::size_t>(rows * span)});
  parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t iu) {
    const long i = static_cast<long>(iu);
    for (long j = 0; j < w; ++j) {
      const float* a = &f1(iu, static_cast<std::size_t>(j), 0);
      float* dst = &out(iu, static_cast<std::size_t>(j), 0);
      for (long dy = 0; dy < rows; ++dy)
        for (long dx = 0; dx < span; ++dx) {
          const long y = i + (rows == 1 ? 0 : dy - r), x = j + dx - r;
          float acc = 0.0f;
          if (y >= 0 && y < h && x >= 0 && x < w) {
            const float* b = &f2(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0);
            for (std::size_t c = 0; c < d; ++c) acc += a[c] * b[c];
          }
          dst[dy * span + dx] = acc * s;
        }
    }
  });
  return out;
}

DisplacementField local_match(const FeatureMap& f1, const FeatureMap& f2_warped, MatchMode mode, std::size_t radius,
                              const MatchConfig& config) {
  if (!(config.temperature > 0.0)) throw DomainError("matching temperature must be positive");
  const Tensor corr = local_correlation(f1.data, f2_warped.data, mode, radius, config.scale_by_sqrt_dim);
  const std::size_t h = corr.dim(0), w = corr.dim(1), taps = corr.dim(2);
  const long span = 2 * static_cast<long>(radius) + 1, r = static_cast<long>(radius);
  auto out = DisplacementField::zeros(mode, h, w, f1.scale);
  const double inv_t = 1.0 / config.temperature;
  parallel_for(0, h * w, [&](std::size_t p) {
    std::vector<double> m;
    softmax_row(corr.data() + p * taps, taps, inv_t, m);
    double ex = 0.0, ey = 0.0;
    for (std::size_t t = 0; t < taps; ++t) {
      const long dy = mode == MatchMode::Flow ? static_cast<long>(t) / span - r : 0;
      const long dx = static_cast<long>(t) % span - r;
      ex += m[t] * static_cast<double>(dx);
      ey += m[t] * static_cast<double>(dy);
    }
    if (mode == MatchMode::Flow) {
      out.data[p * 2] = static_cast<float>(ex);
      out.data[p * 2 + 1] = static_cast<float>(ey);
    } else {
      out.data[p] = static_cast<float>(-ex);
    }
  });
  return out;
}

}  // namespace eventmatch
