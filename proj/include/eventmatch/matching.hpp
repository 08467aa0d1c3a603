#pragma once

#include <string>
#include <vector>

#include "eventmatch/config.hpp"
#include "eventmatch/displacement.hpp"
#include "eventmatch/features.hpp"

namespace eventmatch {

// Flow: H x W x H x W, C(i, j, k, l) = <F1(i, j), F2(k, l)>.
// Disparity: H x W x W, C(i, j, k) = <FL(i, j), FR(i, k)>.
// Both optionally divided by sqrt(d).
struct CorrelationVolume {
  MatchMode mode = MatchMode::Flow;
  Tensor data;

  std::size_t height() const { return data.dim(0); }
  std::size_t width() const { return data.dim(1); }
  std::size_t candidates() const;  // H*W for flow, W for disparity
};

CorrelationVolume correlation_flow(const Tensor& f1, const Tensor& f2, bool scale_by_sqrt_dim = true);
CorrelationVolume correlation_disparity(const Tensor& left, const Tensor& right, bool scale_by_sqrt_dim = true);

// Softmax over the candidate axes of volume / temperature, then the expected
// candidate coordinate turned into a displacement:
//   flow       D = G~ - (x, y)
//   disparity  D = x - G~   (right-view content sits at x - D)
// `volume` is H x W x H x W or H x W x W according to `mode`. Returns H x W x C.
template <typename T>
BasicTensor<T> soft_argmax_displacement(const BasicTensor<T>& volume, MatchMode mode, double temperature,
                                        BasicTensor<T>* distribution = nullptr);

// Gradient of sum(upstream * D) with respect to the volume entries, using
// dG~/dC(c) = M(c) (coord(c) - G~) / temperature (negated for disparity).
template <typename T>
BasicTensor<T> match_gradient(const BasicTensor<T>& volume, MatchMode mode, double temperature,
                              const BasicTensor<T>& upstream);

struct MatchResult {
  Tensor distribution;
  DisplacementField displacement;
  double negative_fraction = 0.0;  // disparity only: share of pixels with D < -0.5
  std::vector<std::string> warnings;
};

// Raises a convention warning when more than 1% of disparities are below -0.5 px.
MatchResult match(const CorrelationVolume& volume, double temperature, std::size_t scale = 8);

MatchResult global_match(const FeatureMap& f1, const FeatureMap& f2, MatchMode mode, const MatchConfig& config = {});

// Correlation of F1(p) with F2(p + o) for offsets o in [-r, r]^2 (flow, dy
// outer) or [-r, r] along x (disparity). Out-of-range candidates score zero.
Tensor local_correlation(const Tensor& f1, const Tensor& f2, MatchMode mode, std::size_t radius,
                         bool scale_by_sqrt_dim = true);

// Softmax over the local window and expected offset. The residual is the
// expected x/y offset for flow and minus the expected x offset for disparity,
// so it adds directly to the displacement used to warp f2.
DisplacementField local_match(const FeatureMap& f1, const FeatureMap& f2_warped, MatchMode mode,
                              std::size_t radius = 4, const MatchConfig& config = {});

}  // namespace eventmatch
