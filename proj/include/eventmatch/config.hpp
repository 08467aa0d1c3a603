#pragma once

#include <cstddef>

namespace eventmatch {

struct EnhancementConfig {
  std::size_t num_blocks = 6;
  std::size_t windows = 2;  // K: windows per side
  std::size_t ffn_expansion = 4;
};

struct RefineConfig {
  std::size_t flow_iters = 6;
  std::size_t disp_iters = 3;
  std::size_t gru_hidden = 96;
  std::size_t context_dim = 64;
  std::size_t lookup_radius = 3;  // GRU cost lookup, (2r+1)^2 taps for flow
  std::size_t fine_windows = 8;   // K used when re-enhancing at 1/4
  std::size_t local_radius = 4;   // 9 x 9 local matching window at 1/4
};

// Shapes of the learned parts. The extractor is a stem conv, two residual
// blocks and a shared head conv whose stride selects the output scale.
struct ModelConfig {
  std::size_t bins = 5;
  std::size_t dim = 128;
  std::size_t stem_channels = 64;
  std::size_t block1_channels = 96;
  std::size_t block2_channels = 128;
  EnhancementConfig enhancement;
  RefineConfig refine;

  void validate() const;
};

struct MatchConfig {
  double temperature = 1.0;
  bool scale_by_sqrt_dim = true;
};

}  // namespace eventmatch
