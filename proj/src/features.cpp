#include "eventmatch/features.hpp"

#include <cmath>

#include "eventmatch/displacement.hpp"
#include "eventmatch/io.hpp"
#include "eventmatch/rng.hpp"

namespace eventmatch {

void ModelConfig::validate() const {
  if (bins < 2) throw DomainError("model needs at least two temporal bins");
  if (dim == 0 || dim % 2 != 0) throw DomainError("feature dimension must be even and positive");
  if (stem_channels == 0 || block1_channels == 0 || block2_channels == 0)
    throw DomainError("channel counts must be positive");
  if (enhancement.windows == 0) throw DomainError("window count K must be >= 1");
  if (enhancement.ffn_expansion == 0) throw DomainError("ffn expansion must be >= 1");
  if (refine.lookup_radius == 0 || refine.local_radius == 0) throw DomainError("radius must be >= 1");
  if (refine.fine_windows == 0) throw DomainError("fine window count must be >= 1");
  if (refine.gru_hidden == 0 || refine.context_dim == 0) throw DomainError("GRU widths must be positive");
}

namespace {

using Shapes = std::map<std::string, std::vector<std::size_t>>;

void conv_entry(Shapes& s, const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
  s[name + ".weight"] = {k, k, cin, cout};
  s[name + ".bias"] = {cout};
}

std::size_t gru_cost_channels(MatchMode mode, std::size_t radius) {
  const std::size_t taps = 2 * radius + 1;
  return mode == MatchMode::Flow ? taps * taps : taps;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::map<std::string, std::vector<std::size_t>> required_weight_shapes(const ModelConfig& c) {
  c.validate();
  Shapes s;
  conv_entry(s, "fe.stem", 7, c.bins, c.stem_channels);
  conv_entry(s, "fe.block1.conv1", 3, c.stem_channels, c.block1_channels);
  conv_entry(s, "fe.block1.conv2", 3, c.block1_channels, c.block1_channels);
  conv_entry(s, "fe.block1.shortcut", 1, c.stem_channels, c.block1_channels);
  conv_entry(s, "fe.block2.conv1", 3, c.block1_channels, c.block2_channels);
  conv_entry(s, "fe.block2.conv2", 3, c.block2_channels, c.block2_channels);
  conv_entry(s, "fe.block2.shortcut", 1, c.block1_channels, c.block2_channels);
  conv_entry(s, "fe.head", 3, c.block2_channels, c.dim);

  const std::size_t d = c.dim, hidden = d * c.enhancement.ffn_expansion;
  for (std::size_t b = 0; b < c.enhancement.num_blocks; ++b) {
    const std::string p = "enh.block" + std::to_string(b);
    for (const char* sub : {".self", ".cross"}) {
      for (const char* proj : {".wq", ".wk", ".wv", ".wo"}) s[p + sub + proj] = {d, d};
      s[p + sub + ".norm.gamma"] = {d};
      s[p + sub + ".norm.beta"] = {d};
    }
    s[p + ".ffn.w1"] = {d, hidden};
    s[p + ".ffn.b1"] = {hidden};
    s[p + ".ffn.w2"] = {hidden, d};
    s[p + ".ffn.b2"] = {d};
    s[p + ".ffn.norm.gamma"] = {d};
    s[p + ".ffn.norm.beta"] = {d};
  }

  const auto& r = c.refine;
  for (MatchMode mode : {MatchMode::Flow, MatchMode::Disparity}) {
    const std::string p = mode == MatchMode::Flow ? "gru.flow" : "gru.disp";
    const std::size_t dch = channels_for(mode);
    const std::size_t in = gru_cost_channels(mode, r.lookup_radius) + dch + r.context_dim;
    s[p + ".hidden_init.weight"] = {d, r.gru_hidden};
    s[p + ".hidden_init.bias"] = {r.gru_hidden};
    s[p + ".context.weight"] = {d, r.context_dim};
    s[p + ".context.bias"] = {r.context_dim};
    for (const char* gate : {".z", ".r", ".q"}) conv_entry(s, p + gate, 3, r.gru_hidden + in, r.gru_hidden);
    conv_entry(s, p + ".delta", 3, r.gru_hidden, dch);
  }
  return s;
}

const Tensor& ModelWeights::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("missing weight tensor '" + name + "'");
  return it->second;
}

void ModelWeights::validate(const ModelConfig& config) const {
  const auto shapes = required_weight_shapes(config);
  for (const auto& [name, dims] : shapes) {
    const auto& t = get(name);
    if (t.dims() != dims)
      throw ShapeError("weight '" + name + "' has shape " + shape_string(t.dims()) + ", expected " +
                       shape_string(dims));
  }
  for (const auto& [name, t] : tensors)
    if (!shapes.contains(name)) throw ShapeError("unexpected weight tensor '" + name + "'");
}

ModelWeights init_weights(std::uint64_t seed, const ModelConfig& config) {
  ModelWeights w;
  w.seed = seed;
  const double residual_gain =
      1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(1, config.enhancement.num_blocks)));
  for (const auto& [name, dims] : required_weight_shapes(config)) {
    Tensor t(dims);
    if (ends_with(name, ".bias") || ends_with(name, ".b1") || ends_with(name, ".b2") ||
        ends_with(name, ".beta")) {
      w.tensors.emplace(name, std::move(t));
      continue;
    }
    if (ends_with(name, ".gamma")) {
      w.tensors.emplace(name, Tensor(dims, 1.0f));
      continue;
    }
    // Fan-in is every axis but the last (kh * kw * cin for kernels, rows for matrices).
    std::size_t fan_in = 1;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) fan_in *= dims[i];
    double var = 1.0 / static_cast<double>(fan_in);
    double gain = 1.0;
    if (name.starts_with("fe.") || ends_with(name, ".ffn.w1")) var = 2.0 / static_cast<double>(fan_in);
    if (ends_with(name, ".wo") || ends_with(name, ".ffn.w2")) gain = residual_gain;
    if (name.find(".delta.") != std::string::npos) gain = 1e-2;
    const double stddev = gain * std::sqrt(var);
    Rng rng(derive_seed(seed, fnv1a(name)));
    for (auto& v : t.values()) v = static_cast<float>(rng.normal(0.0, stddev));
    w.tensors.emplace(name, std::move(t));
  }
  return w;
}

Bytes save_weights(const ModelWeights& w) {
  Bytes out;
  ByteWriter bw(out);
  bw.put_bytes("EMWT");
  bw.put<std::uint32_t>(w.version);
  bw.put<std::uint32_t>(static_cast<std::uint32_t>(w.tensors.size()));
  for (const auto& [name, t] : w.tensors) {  // std::map iterates in name order
    bw.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bw.put_bytes(name);
    bw.put<std::uint32_t>(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.dims()) bw.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : t.values()) bw.put<float>(v);
  }
  return out;
}

ModelWeights load_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || r.get_string(4) != "EMWT") throw FormatError("bad weights magic (expected EMWT)");
  ModelWeights w;
  w.version = r.get<std::uint32_t>();
  if (w.version != kWeightsVersion)
    throw FormatError("unsupported weights version " + std::to_string(w.version));
  const auto count = r.get<std::uint32_t>();
  std::string prev;
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto at = r.offset();
    const auto len = r.get<std::uint32_t>();
    if (len == 0 || len > 4096) throw ParseError("implausible weight name length", at);
    std::string name = r.get_string(len);
    if (n > 0 && !(prev < name)) throw ParseError("weight entries not sorted by name", at);
    const auto ndim = r.get<std::uint32_t>();
    if (ndim < 1 || ndim > 4) throw ParseError("weight rank outside [1,4]", at);
    std::vector<std::size_t> dims(ndim);
    std::size_t size = 1;
    for (auto& d : dims) {
      d = r.get<std::uint32_t>();
      if (d == 0) throw ParseError("zero extent in weight '" + name + "'", at);
      size *= d;
    }
    if (r.remaining() / 4 < size) throw ParseError("truncated payload for '" + name + "'", r.offset());
    std::vector<float> values(size);
    for (auto& v : values) v = r.get<float>();
    w.tensors.emplace(name, Tensor(std::move(dims), std::move(values)));
    prev = std::move(name);
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after weight entries", r.offset());
  return w;
}

ModelConfig infer_model_config(const ModelWeights& w) {
  ModelConfig c;
  const auto& stem = w.get("fe.stem.weight");
  if (stem.ndim() != 4) throw ShapeError("fe.stem.weight must be a 4D kernel");
  c.bins = stem.dim(2);
  c.stem_channels = stem.dim(3);
  c.block1_channels = w.get("fe.block1.conv1.weight").dim(3);
  c.block2_channels = w.get("fe.block2.conv1.weight").dim(3);
  c.dim = w.get("fe.head.weight").dim(3);
  std::size_t blocks = 0;
  while (w.contains("enh.block" + std::to_string(blocks) + ".self.wq")) ++blocks;
  c.enhancement.num_blocks = blocks;
  if (blocks > 0) c.enhancement.ffn_expansion = w.get("enh.block0.ffn.w1").dim(1) / c.dim;
  c.refine.gru_hidden = w.get("gru.flow.hidden_init.weight").dim(1);
  c.refine.context_dim = w.get("gru.flow.context.weight").dim(1);
  const std::size_t in = w.get("gru.flow.z.weight").dim(2);
  const std::size_t cost = in - c.refine.gru_hidden - 2 - c.refine.context_dim;
  const auto taps = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(cost))));
  if (taps * taps != cost || taps % 2 == 0) throw ShapeError("cannot infer GRU lookup radius");
  c.refine.lookup_radius = taps / 2;
  w.validate(c);
  return c;
}

// ---------------------------------------------------------------------------

namespace {

Tensor conv(const Tensor& x, const ModelWeights& w, const std::string& name, std::size_t stride,
            std::size_t pad) {
  return conv2d(x, w.get(name + ".weight"), w.vec(name + ".bias"), {stride, pad});
}

Tensor residual_block(const Tensor& x, const ModelWeights& w, const std::string& p, std::size_t stride) {
  Tensor y = instance_norm(conv(x, w, p + ".conv1", stride, 1));
  relu_inplace(y);
  y = instance_norm(conv(y, w, p + ".conv2", 1, 1));
  add_inplace(y, instance_norm(conv(x, w, p + ".shortcut", stride, 0)));
  relu_inplace(y);
  return y;
}

}  // namespace

std::map<std::size_t, FeatureMap> extract_features(const VoxelGrid& voxel, const ModelWeights& w,
                                                   const std::set<std::size_t>& scales) {
  const auto& stem = w.get("fe.stem.weight");
  if (voxel.data.ndim() != 3 || voxel.data.dim(2) != stem.dim(2))
    throw ShapeError("voxel grid has " + std::to_string(voxel.data.ndim() == 3 ? voxel.data.dim(2) : 0) +
                     " bins, extractor expects " + std::to_string(stem.dim(2)));
  for (auto s : scales)
    if (s != 4 && s != 8 && s != 16) throw DomainError("feature scale must be 4, 8 or 16");

  Tensor x = instance_norm(conv(voxel.data, w, "fe.stem", 2, 3));
  relu_inplace(x);
  x = residual_block(x, w, "fe.block1", 2);
  x = residual_block(x, w, "fe.block2", 1);

  std::map<std::size_t, FeatureMap> out;
  for (auto s : scales) out.emplace(s, FeatureMap{conv(x, w, "fe.head", s / 4, 1), s});
  return out;
}

Tensor positional_encoding(std::size_t height, std::size_t width, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw DomainError("positional encoding needs an even feature dimension");
  const std::size_t half = dim / 2;
  Tensor pe({height, width, dim});
  for (std::size_t c = 0; c < half; ++c) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(c / 2) / static_cast<double>(half));
    const bool odd = c % 2 == 1;
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double ax = static_cast<double>(j) * freq, ay = static_cast<double>(i) * freq;
        pe(i, j, c) = static_cast<float>(odd ? std::cos(ax) : std::sin(ax));
        pe(i, j, half + c) = static_cast<float>(odd ? std::cos(ay) : std::sin(ay));
      }
  }
  return pe;
}

FeatureMap add_positional_encoding(const FeatureMap& f) {
  FeatureMap out = f;
  add_inplace(out.data, positional_encoding(f.height(), f.width(), f.dim()));
  return out;
}

}  // namespace eventmatch
