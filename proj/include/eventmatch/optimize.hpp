#pragma once

#include <vector>

#include "eventmatch/config.hpp"
#include "eventmatch/displacement.hpp"
#include "eventmatch/features.hpp"
#include "eventmatch/matching.hpp"

namespace eventmatch {

// Bilinear resampling to out_h x out_w (default factor * H) with magnitudes
// multiplied by `factor`. Fine cell i sits at coarse coordinate i / factor;
// samples past the last coarse cell clamp to the edge.
DisplacementField upsample_displacement(const DisplacementField& d, std::size_t factor, std::size_t out_h = 0,
                                        std::size_t out_w = 0);

// f2 sampled where each reference pixel points: (x + u, y + v) for flow and
// (x - D, y) for disparity. Out-of-range samples are zero.
Tensor warp_features(const Tensor& f2, const DisplacementField& d);

// softmax(F F^T / sqrt(d)) over all pixels of F, [HW x HW].
Tensor propagation_weights(const FeatureMap& f);

// D^ = softmax(F F^T / sqrt(d)) D.
DisplacementField propagate(const FeatureMap& f1, const DisplacementField& d);

struct MultiScaleResult {
  DisplacementField upsampled;  // coarse estimate at the fine grid
  DisplacementField residual;   // local match on the warped, re-enhanced pair
  DisplacementField refined;    // upsampled + residual
  FeatureMap f1;                // enhanced fine reference features
  FeatureMap f2_warped;         // enhanced fine target features, warped by `upsampled`
};

// Warps the raw 1/4 target by the upsampled coarse field, adds positional
// encoding to both maps, re-enhances them with the shared transformer weights
// at refine.fine_windows windows per side and runs local_match for a residual.
MultiScaleResult multi_scale_refine(const FeatureMap& f1_4, const FeatureMap& f2_4, const DisplacementField& coarse,
                                    const ModelWeights& w, const ModelConfig& config,
                                    const MatchConfig& match_config = {}, bool use_transformer = true);

// Recurrent refinement. `f2_warped` was warped by `base`, so the cost at the
// current estimate D is read by sampling it at the residual offset D - base and
// correlating a (2r+1)^2 (flow) or 2r+1 (disparity) neighbourhood with f1.
// Returns one field per iteration; disparity residuals are horizontal and the
// last disparity output is clamped to D >= 0.
std::vector<DisplacementField> gru_refine(const DisplacementField& init, const DisplacementField& base,
                                          const FeatureMap& f1, const FeatureMap& f2_warped, const ModelWeights& w,
                                          const RefineConfig& config, std::size_t iterations,
                                          const MatchConfig& match_config = {});

}  // namespace eventmatch
