#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "eventmatch/config.hpp"
#include "eventmatch/events.hpp"
#include "eventmatch/tensor.hpp"

namespace eventmatch {

// H' x W' x d features at a downsampling factor of 4, 8 or 16; cell (i, j) is
// centred on input pixel (scale * i, scale * j).
struct FeatureMap {
  Tensor data;
  std::size_t scale = 8;

  std::size_t height() const { return data.dim(0); }
  std::size_t width() const { return data.dim(1); }
  std::size_t dim() const { return data.dim(2); }
};

inline constexpr std::uint32_t kWeightsVersion = 1;

// Named parameter tensors for the extractor ("fe.*"), the enhancement
// transformer ("enh.block{i}.{self|cross|ffn}.*") and the two refinement heads
// ("gru.{flow|disp}.*").
class ModelWeights {
 public:
  std::map<std::string, Tensor> tensors;
  std::uint32_t version = kWeightsVersion;
  std::optional<std::uint64_t> seed;  // set by init_weights, not persisted

  const Tensor& get(const std::string& name) const;
  std::span<const float> vec(const std::string& name) const { return get(name).values(); }
  bool contains(const std::string& name) const { return tensors.contains(name); }

  // Every required name present with the exact shape, nothing extra.
  void validate(const ModelConfig& config) const;
};

std::map<std::string, std::vector<std::size_t>> required_weight_shapes(const ModelConfig& config);

// Variance-preserving Gaussian initialization fully determined by `seed`.
// Convolutions feeding ReLUs use 2/fan_in; linear projections 1/fan_in;
// residual-branch output projections are further scaled by
// 1/sqrt(2 num_blocks), and the refinement delta heads by 1e-2.
ModelWeights init_weights(std::uint64_t seed, const ModelConfig& config);

// "EMWT", u32 version, u32 count, then per entry (sorted by name): u32 name
// length, UTF-8 name, u32 ndim, u32 dims[ndim], f32 little-endian payload.
Bytes save_weights(const ModelWeights& w);
ModelWeights load_weights(std::span<const std::uint8_t> bytes);

// Recovers the architecture from tensor shapes. Window counts are run-time
// settings and keep their defaults.
ModelConfig infer_model_config(const ModelWeights& w);

// Shared trunk at 1/4 followed by the head conv at stride 1, 2 or 4.
std::map<std::size_t, FeatureMap> extract_features(const VoxelGrid& voxel, const ModelWeights& w,
                                                   const std::set<std::size_t>& scales);

// Fixed 2D sinusoidal code: the first d/2 channels encode the column, the rest
// the row; even channels are sines and odd channels cosines of the cell index
// at frequencies 10000^(-2k/(d/2)).
Tensor positional_encoding(std::size_t height, std::size_t width, std::size_t dim);
FeatureMap add_positional_encoding(const FeatureMap& f);

}  // namespace eventmatch
