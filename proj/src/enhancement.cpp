#include "eventmatch/enhancement.hpp"

#include <cmath>

#include "eventmatch/parallel.hpp"

namespace eventmatch {

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.ndim() != 2 || k.ndim() != 2 || q.dim(1) != k.dim(1))
    throw ShapeError("attention: q " + shape_string(q.dims()) + " and k " + shape_string(k.dims()) +
                     " disagree");
  const float scale = 1.0f / std::sqrt(static_cast<float>(q.dim(1)));
  return softmax_lastdim(matmul_transposed(q, k), scale);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (v.ndim() != 2 || v.dim(0) != k.dim(0))
    throw ShapeError("attention: v " + shape_string(v.dims()) + " does not match k " + shape_string(k.dims()));
  return matmul(attention_weights(q, k), v);
}

namespace {

std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

WindowLayout make_layout(const Tensor& f, std::size_t windows, bool shifted) {
  if (f.ndim() != 3) throw ShapeError("window partition expects an H x W x C map");
  if (windows == 0) throw DomainError("window count must be >= 1");
  WindowLayout l;
  l.height = f.dim(0);
  l.width = f.dim(1);
  l.channels = f.dim(2);
  l.windows = windows;
  l.padded_h = round_up(l.height, 2 * windows);
  l.padded_w = round_up(l.width, 2 * windows);
  if (shifted) {
    l.shift_h = l.padded_h / (2 * windows);
    l.shift_w = l.padded_w / (2 * windows);
  }
  return l;
}

}  // namespace

WindowSlot locate_in_windows(const WindowLayout& l, std::size_t row, std::size_t col, bool shifted) {
  // A source pixel r appears in the cycled map at (r - shift) mod H.
  std::size_t r = row, c = col;
  if (shifted) {
    r = (row + l.padded_h - l.shift_h % l.padded_h) % l.padded_h;
    c = (col + l.padded_w - l.shift_w % l.padded_w) % l.padded_w;
  }
  return {r / l.window_h(), c / l.window_w(), r % l.window_h(), c % l.window_w()};
}

WindowPartition partition_windows(const Tensor& f, std::size_t windows, bool shifted) {
  WindowPartition p;
  p.layout = make_layout(f, windows, shifted);
  const auto& l = p.layout;
  const std::size_t wh = l.window_h(), ww = l.window_w(), ch = l.channels;
  p.tokens.assign(windows * windows, Tensor({wh * ww, ch}));
  for (std::size_t wi = 0; wi < windows; ++wi)
    for (std::size_t wj = 0; wj < windows; ++wj) {
      Tensor& t = p.tokens[wi * windows + wj];
      for (std::size_t a = 0; a < wh; ++a)
        for (std::size_t b = 0; b < ww; ++b) {
          const std::size_t si = (wi * wh + a + l.shift_h) % l.padded_h;
          const std::size_t sj = (wj * ww + b + l.shift_w) % l.padded_w;
          if (si >= l.height || sj >= l.width) continue;  // zero padding
          const float* src = &f(si, sj, 0);
          std::copy(src, src + ch, &t(a * ww + b, 0));
        }
    }
  return p;
}

Tensor unpartition_windows(const WindowPartition& p) {
  const auto& l = p.layout;
  const std::size_t wh = l.window_h(), ww = l.window_w(), ch = l.channels;
  if (p.tokens.size() != l.windows * l.windows) throw ShapeError("window count does not match layout");
  Tensor f({l.height, l.width, ch});
  for (std::size_t wi = 0; wi < l.windows; ++wi)
    for (std::size_t wj = 0; wj < l.windows; ++wj) {
      const Tensor& t = p.tokens[wi * l.windows + wj];
      if (t.ndim() != 2 || t.dim(0) != wh * ww || t.dim(1) != ch)
        throw ShapeError("window token block has shape " + shape_string(t.dims()));
      for (std::size_t a = 0; a < wh; ++a)
        for (std::size_t b = 0; b < ww; ++b) {
          const std::size_t si = (wi * wh + a + l.shift_h) % l.padded_h;
          const std::size_t sj = (wj * ww + b + l.shift_w) % l.padded_w;
          if (si >= l.height || sj >= l.width) continue;  // cropped
          const float* src = &t(a * ww + b, 0);
          std::copy(src, src + ch, &f(si, sj, 0));
        }
    }
  return f;
}

// ---------------------------------------------------------------------------

namespace {

Tensor project(const Tensor& x, const Tensor& w) {
  const std::size_t h = x.dim(0), wd = x.dim(1);
  if (w.ndim() != 2 || w.dim(0) != x.dim(2))
    throw ShapeError("projection " + shape_string(w.dims()) + " does not fit features " + shape_string(x.dims()));
  return linear(x.reshaped({h * wd, x.dim(2)}), w).reshaped({h, wd, w.dim(1)});
}

Tensor norm(const Tensor& x, const ModelWeights& w, const std::string& prefix) {
  return layer_norm(x, w.vec(prefix + ".norm.gamma"), w.vec(prefix + ".norm.beta"));
}

// Windowed single-head attention; queries from xq, keys and values from xkv.
Tensor windowed_attention(const Tensor& xq, const Tensor& xkv, const ModelWeights& w, const std::string& prefix,
                          std::size_t windows, bool shifted) {
  const auto q = partition_windows(project(xq, w.get(prefix + ".wq")), windows, shifted);
  const auto k = partition_windows(project(xkv, w.get(prefix + ".wk")), windows, shifted);
  const auto v = partition_windows(project(xkv, w.get(prefix + ".wv")), windows, shifted);
  WindowPartition out;
  out.layout = v.layout;
  out.tokens.resize(v.tokens.size());
  parallel_for(0, v.tokens.size(),
               [&](std::size_t n) { out.tokens[n] = attention(q.tokens[n], k.tokens[n], v.tokens[n]); });
  return project(unpartition_windows(out), w.get(prefix + ".wo"));
}

Tensor feed_forward(const Tensor& x, const ModelWeights& w, const std::string& prefix) {
  const std::size_t h = x.dim(0), wd = x.dim(1), d = x.dim(2);
  Tensor hidden = linear(norm(x, w, prefix).reshaped({h * wd, d}), w.get(prefix + ".w1"), w.vec(prefix + ".b1"));
  gelu_inplace(hidden);
  return linear(hidden, w.get(prefix + ".w2"), w.vec(prefix + ".b2")).reshaped({h, wd, d});
}

}  // namespace

std::pair<FeatureMap, FeatureMap> transformer_block(const FeatureMap& f1, const FeatureMap& f2,
                                                    const ModelWeights& w, const EnhancementConfig& config,
                                                    std::size_t block_index) {
  if (f1.data.dims() != f2.data.dims())
    throw ShapeError("transformer inputs differ: " + shape_string(f1.data.dims()) + " vs " +
                     shape_string(f2.data.dims()));
  const std::string p = "enh.block" + std::to_string(block_index);
  const bool shifted = block_index % 2 == 1;
  const std::size_t k = config.windows;

  Tensor q1 = f1.data, q2 = f2.data;
  const Tensor s1 = norm(f1.data, w, p + ".self"), s2 = norm(f2.data, w, p + ".self");
  add_inplace(q1, windowed_attention(s1, s1, w, p + ".self", k, shifted));
  add_inplace(q2, windowed_attention(s2, s2, w, p + ".self", k, shifted));

  const Tensor kv1 = norm(f1.data, w, p + ".cross"), kv2 = norm(f2.data, w, p + ".cross");
  Tensor v1 = q1, v2 = q2;
  add_inplace(v1, windowed_attention(norm(q1, w, p + ".cross"), kv2, w, p + ".cross", k, shifted));
  add_inplace(v2, windowed_attention(norm(q2, w, p + ".cross"), kv1, w, p + ".cross", k, shifted));

  FeatureMap o1{v1, f1.scale}, o2{v2, f2.scale};
  add_inplace(o1.data, feed_forward(v1, w, p + ".ffn"));
  add_inplace(o2.data, feed_forward(v2, w, p + ".ffn"));
  return {std::move(o1), std::move(o2)};
}

std::pair<FeatureMap, FeatureMap> enhance(const FeatureMap& f1, const FeatureMap& f2, const ModelWeights& w,
                                          const EnhancementConfig& config) {
  std::pair<FeatureMap, FeatureMap> cur{f1, f2};
  for (std::size_t b = 0; b < config.num_blocks; ++b)
    cur = transformer_block(cur.first, cur.second, w, config, b);
  return cur;
}

}  // namespace eventmatch
