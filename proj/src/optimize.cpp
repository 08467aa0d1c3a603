#include "eventmatch/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "eventmatch/enhancement.hpp"

namespace eventmatch {

DisplacementField upsample_displacement(const DisplacementField& d, std::size_t factor, std::size_t out_h,
                                        std::size_t out_w) {
  if (factor != 2 && factor != 4 && factor != 8) throw DomainError("upsampling factor must be 2, 4 or 8");
  const std::size_t h = d.height(), w = d.width();
  if (out_h == 0) out_h = h * factor;
  if (out_w == 0) out_w = w * factor;
  Tensor coords({out_h, out_w, 2});
  const double f = static_cast<double>(factor);
  for (std::size_t i = 0; i < out_h; ++i)
    for (std::size_t j = 0; j < out_w; ++j) {
      coords(i, j, 0) = static_cast<float>(std::min(static_cast<double>(j) / f, static_cast<double>(w - 1)));
      coords(i, j, 1) = static_cast<float>(std::min(static_cast<double>(i) / f, static_cast<double>(h - 1)));
    }
  auto sampled = bilinear_sample(d.data, coords);
  for (auto& v : sampled.values.values()) v *= static_cast<float>(factor);
  DisplacementField out{d.mode, std::move(sampled.values), Mask({out_h, out_w}), d.scale / factor};
  if (out.scale == 0) out.scale = 1;
  // nearest coarse validity
  for (std::size_t i = 0; i < out_h; ++i)
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t ci = std::min(h - 1, (i + factor / 2) / factor);
      const std::size_t cj = std::min(w - 1, (j + factor / 2) / factor);
      out.valid(i, j) = d.valid.empty() ? 1 : d.valid(ci, cj);
    }
  return out;
}

Tensor warp_features(const Tensor& f2, const DisplacementField& d) {
  if (f2.ndim() != 3 || f2.dim(0) != d.height() || f2.dim(1) != d.width())
    throw ShapeError("cannot warp " + shape_string(f2.dims()) + " by a " + shape_string(d.data.dims()) + " field");
  const std::size_t h = d.height(), w = d.width();
  Tensor coords({h, w, 2});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (d.mode == MatchMode::Flow) {
        coords(i, j, 0) = static_cast<float>(j) + d.data(i, j, 0);
        coords(i, j, 1) = static_cast<float>(i) + d.data(i, j, 1);
      } else {
        coords(i, j, 0) = static_cast<float>(j) - d.data(i, j, 0);
        coords(i, j, 1) = static_cast<float>(i);
      }
    }
  return bilinear_sample(f2, coords).values;
}

Tensor propagation_weights(const FeatureMap& f) {
  const std::size_t n = f.height() * f.width(), dim = f.dim();
  const Tensor flat = f.data.reshaped({n, dim});
  return softmax_lastdim(matmul_transposed(flat, flat), 1.0f / std::sqrt(static_cast<float>(dim)));
}

DisplacementField propagate(const FeatureMap& f1, const DisplacementField& d) {
  if (f1.height() != d.height() || f1.width() != d.width())
    throw ShapeError("propagation features " + shape_string(f1.data.dims()) + " do not match field " +
                     shape_string(d.data.dims()));
  const std::size_t n = d.height() * d.width(), c = d.channels();
  DisplacementField out = d;
  out.data = matmul(propagation_weights(f1), d.data.reshaped({n, c})).reshaped(d.data.dims());
  return out;
}

MultiScaleResult multi_scale_refine(const FeatureMap& f1_4, const FeatureMap& f2_4, const DisplacementField& coarse,
                                    const ModelWeights& w, const ModelConfig& config,
                                    const MatchConfig& match_config, bool use_transformer) {
  if (f1_4.data.dims() != f2_4.data.dims())
    throw ShapeError("fine feature maps differ: " + shape_string(f1_4.data.dims()) + " vs " +
                     shape_string(f2_4.data.dims()));
  if (coarse.scale < f1_4.scale || coarse.scale % f1_4.scale != 0)
    throw DomainError("coarse field scale must be a multiple of the fine feature scale");
  MultiScaleResult r;
  const std::size_t factor = coarse.scale / f1_4.scale;
  r.upsampled = factor == 1 ? coarse : upsample_displacement(coarse, factor, f1_4.height(), f1_4.width());
  r.upsampled.scale = f1_4.scale;

  FeatureMap warped{warp_features(f2_4.data, r.upsampled), f2_4.scale};
  r.f1 = add_positional_encoding(f1_4);
  r.f2_warped = add_positional_encoding(warped);
  if (use_transformer) {
    EnhancementConfig fine = config.enhancement;
    fine.windows = config.refine.fine_windows;
    std::tie(r.f1, r.f2_warped) = enhance(r.f1, r.f2_warped, w, fine);
  }
  r.residual = local_match(r.f1, r.f2_warped, coarse.mode, config.refine.local_radius, match_config);
  r.refined = r.upsampled;
  add_inplace(r.refined.data, r.residual.data);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

Tensor concat_channels(std::initializer_list<const Tensor*> parts) {
  const std::size_t h = (*parts.begin())->dim(0), w = (*parts.begin())->dim(1);
  std::size_t total = 0;
  for (const Tensor* p : parts) total += p->dim(2);
  Tensor out({h, w, total});
  for (std::size_t px = 0; px < h * w; ++px) {
    float* dst = out.data() + px * total;
    for (const Tensor* p : parts) {
      const std::size_t c = p->dim(2);
      std::copy(p->data() + px * c, p->data() + (px + 1) * c, dst);
      dst += c;
    }
  }
  return out;
}

Tensor pointwise(const FeatureMap& f, const ModelWeights& w, const std::string& name) {
  const std::size_t h = f.height(), wd = f.width();
  const auto& k = w.get(name + ".weight");
  return linear(f.data.reshaped({h * wd, f.dim()}), k, w.vec(name + ".bias")).reshaped({h, wd, k.dim(1)});
}

Tensor conv3(const Tensor& x, const ModelWeights& w, const std::string& name) {
  return conv2d(x, w.get(name + ".weight"), w.vec(name + ".bias"), {1, 1});
}

void sigmoid_inplace(Tensor& t) {
  for (auto& v : t.values()) v = 1.0f / (1.0f + std::exp(-v));
}

void tanh_inplace(Tensor& t) {
  for (auto& v : t.values()) v = std::tanh(v);
}

}  // namespace

std::vector<DisplacementField> gru_refine(const DisplacementField& init, const DisplacementField& base,
                                          const FeatureMap& f1, const FeatureMap& f2_warped, const ModelWeights& w,
                                          const RefineConfig& config, std::size_t iterations,
                                          const MatchConfig& match_config) {
  if (iterations == 0) throw DomainError("GRU refinement needs at least one iteration");
  if (init.data.dims() != base.data.dims() || init.mode != base.mode)
    throw ShapeError("GRU initial and base fields differ");
  if (f1.data.dims() != f2_warped.data.dims() || f1.height() != init.height() || f1.width() != init.width())
    throw ShapeError("GRU features " + shape_string(f1.data.dims()) + " do not match field " +
                     shape_string(init.data.dims()));
  const MatchMode mode = init.mode;
  const std::string p = mode == MatchMode::Flow ? "gru.flow" : "gru.disp";

  Tensor hidden = pointwise(f1, w, p + ".hidden_init");
  tanh_inplace(hidden);
  Tensor context = pointwise(f1, w, p + ".context");
  relu_inplace(context);

  std::vector<DisplacementField> out;
  out.reserve(iterations);
  DisplacementField cur = init;
  for (std::size_t it = 0; it < iterations; ++it) {
    DisplacementField offset = cur;
    for (std::size_t i = 0; i < offset.data.size(); ++i) offset.data[i] -= base.data[i];
    const Tensor sampled = warp_features(f2_warped.data, offset);
    const Tensor cost =
        local_correlation(f1.data, sampled, mode, config.lookup_radius, match_config.scale_by_sqrt_dim);
    const Tensor x = concat_channels({&cost, &cur.data, &context});

    const Tensor hx = concat_channels({&hidden, &x});
    Tensor z = conv3(hx, w, p + ".z");
    sigmoid_inplace(z);
    Tensor r = conv3(hx, w, p + ".r");
    sigmoid_inplace(r);
    Tensor rh = hidden;
    for (std::size_t i = 0; i < rh.size(); ++i) rh[i] *= r[i];
    Tensor q = conv3(concat_channels({&rh, &x}), w, p + ".q");
    tanh_inplace(q);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = (1.0f - z[i]) * hidden[i] + z[i] * q[i];

    const Tensor delta = conv3(hidden, w, p + ".delta");
    add_inplace(cur.data, delta);
    out.push_back(cur);
  }
  if (mode == MatchMode::Disparity)
    for (auto& v : out.back().data.values()) v = std::max(v, 0.0f);
  return out;
}

}  // namespace eventmatch
