#pragma once

#include <cmath>
#include <cstdint>

#include "eventmatch/rng.hpp"
#include "eventmatch/tensor.hpp"

namespace eventmatch::testing {

template <typename T = float>
BasicTensor<T> random_tensor(std::vector<std::size_t> dims, std::uint64_t seed, double stddev = 1.0) {
  BasicTensor<T> t(std::move(dims));
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

// Direct six-loop convolution; reference for the im2col path.
template <typename T>
BasicTensor<T> naive_conv2d(const BasicTensor<T>& in, const BasicTensor<T>& k, std::size_t stride,
                            std::size_t pad) {
  const long h = in.dim(0), w = in.dim(1), cin = in.dim(2);
  const long kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  const long ho = (h + 2 * static_cast<long>(pad) - kh) / static_cast<long>(stride) + 1;
  const long wo = (w + 2 * static_cast<long>(pad) - kw) / static_cast<long>(stride) + 1;
  BasicTensor<T> out({static_cast<std::size_t>(ho), static_cast<std::size_t>(wo),
                      static_cast<std::size_t>(cout)});
  for (long oy = 0; oy < ho; ++oy)
    for (long ox = 0; ox < wo; ++ox)
      for (long co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (long ky = 0; ky < kh; ++ky)
          for (long kx = 0; kx < kw; ++kx) {
            const long iy = oy * static_cast<long>(stride) + ky - static_cast<long>(pad);
            const long ix = ox * static_cast<long>(stride) + kx - static_cast<long>(pad);
            if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
            for (long ci = 0; ci < cin; ++ci) acc += in(iy, ix, ci) * k(ky, kx, ci, co);
          }
        out(oy, ox, co) = static_cast<T>(acc);
      }
  return out;
}

}  // namespace eventmatch::testing

namespace eventmatch::testing {

// White noise blurred by a separable Gaussian of `sigma` cells, each channel
// rescaled to unit variance and multiplied by `amplitude`.
inline Tensor smooth_random_field(std::size_t h, std::size_t w, std::size_t d, double sigma, double amplitude,
                                  std::uint64_t seed) {
  const long radius = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> taps(2 * radius + 1);
  for (long k = -radius; k <= radius; ++k) taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  const long ph = static_cast<long>(h) + 2 * radius, pw = static_cast<long>(w) + 2 * radius;
  Rng rng(seed);
  std::vector<double> noise(ph * pw * d), tmp(ph * w * d, 0.0);
  for (auto& v : noise) v = rng.normal();
  for (long i = 0; i < ph; ++i)
    for (long j = 0; j < static_cast<long>(w); ++j)
      for (long k = -radius; k <= radius; ++k)
        for (std::size_t c = 0; c < d; ++c)
          tmp[(i * w + j) * d + c] += taps[k + radius] * noise[(i * pw + j + radius + k) * d + c];
  Tensor out({h, w, d});
  std::vector<double> sum(d, 0.0), sq(d, 0.0);
  std::vector<double> acc(h * w * d, 0.0);
  for (long i = 0; i < static_cast<long>(h); ++i)
    for (long j = 0; j < static_cast<long>(w); ++j)
      for (long k = -radius; k <= radius; ++k)
        for (std::size_t c = 0; c < d; ++c)
          acc[(i * w + j) * d + c] += taps[k + radius] * tmp[((i + radius + k) * w + j) * d + c];
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < d; ++c) {
      sum[c] += acc[p * d + c];
      sq[c] += acc[p * d + c] * acc[p * d + c];
    }
  const double n = static_cast<double>(h * w);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < d; ++c) {
      const double mean = sum[c] / n, sd = std::sqrt(std::max(1e-12, sq[c] / n - mean * mean));
      out[p * d + c] = static_cast<float>(amplitude * (acc[p * d + c] - mean) / sd);
    }
  return out;
}

// Crop of `field` at offset (top, left).
inline Tensor crop(const Tensor& field, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  Tensor out({h, w, field.dim(2)});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < field.dim(2); ++c) out(i, j, c) = field(top + i, left + j, c);
  return out;
}

}  // namespace eventmatch::testing

#include "eventmatch/geometry.hpp"

namespace eventmatch::testing {

// Single textured fronto-parallel plane at depth z seen by a size x size rig
// with f' = 200 and baseline 0.5, so D = 100 / z. Dense lattice and a high
// rate keep the voxel grids close to the underlying texture.
inline SceneDescription plane_scene(std::size_t size, double z, Vec3 velocity, double texture = 16.0,
                                    std::uint64_t seed = 3) {
  SceneDescription d;
  d.rig.f_prime = 200.0;
  d.rig.baseline = 0.5;
  d.rig.width = size;
  d.rig.height = size;
  d.rig.cx = size / 2.0;
  d.rig.cy = size / 2.0;
  d.tau = 0.01;
  d.dt = 0.1;
  PlanePrimitive p;
  p.depth = z;
  p.velocity = velocity;
  p.density = 16.0;
  p.rate = 3000.0;
  p.texture_scale = texture;
  p.seed = seed;
  d.planes.push_back(p);
  return d;
}

}  // namespace eventmatch::testing
