#pragma once

#include <utility>
#include <vector>

#include "eventmatch/config.hpp"
#include "eventmatch/features.hpp"

namespace eventmatch {

// softmax(q k^T / sqrt(d)) for q [n x d], k [m x d]. Rows sum to one.
Tensor attention_weights(const Tensor& q, const Tensor& k);

// softmax(q k^T / sqrt(d)) v, v [m x dv].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct WindowLayout {
  std::size_t height = 0, width = 0;          // original extent
  std::size_t padded_h = 0, padded_w = 0;     // next multiple of 2K
  std::size_t windows = 1;                    // K per side
  std::size_t shift_h = 0, shift_w = 0;       // padded/(2K) when shifted
  std::size_t channels = 0;

  std::size_t window_h() const { return padded_h / windows; }
  std::size_t window_w() const { return padded_w / windows; }
};

// K*K token blocks in row-major window order; tokens inside a window are
// row-major too. The shifted variant reads the cycled map
// S(i, j) = F((i + shift_h) mod H, (j + shift_w) mod W) of the zero-padded input.
struct WindowPartition {
  std::vector<Tensor> tokens;  // each [window_h * window_w x C]
  WindowLayout layout;
};

WindowPartition partition_windows(const Tensor& f, std::size_t windows, bool shifted);
Tensor unpartition_windows(const WindowPartition& p);

// Maps a pixel of the (padded) map to its window and in-window position.
struct WindowSlot {
  std::size_t window_row, window_col, local_row, local_col;
};
WindowSlot locate_in_windows(const WindowLayout& layout, std::size_t row, std::size_t col, bool shifted);

// One self / cross / FFN block applied identically to both streams:
//   Q_i = F_i + self(LN(F_i))
//   V_1 = Q_1 + cross(LN(Q_1), LN(F_2)),  V_2 symmetric
//   out_i = V_i + FFN(LN(V_i))
// Odd block indices use the shifted partition.
std::pair<FeatureMap, FeatureMap> transformer_block(const FeatureMap& f1, const FeatureMap& f2,
                                                    const ModelWeights& w, const EnhancementConfig& config,
                                                    std::size_t block_index);

std::pair<FeatureMap, FeatureMap> enhance(const FeatureMap& f1, const FeatureMap& f2, const ModelWeights& w,
                                          const EnhancementConfig& config);

}  // namespace eventmatch
