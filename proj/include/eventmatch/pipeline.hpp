#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eventmatch/config.hpp"
#include "eventmatch/displacement.hpp"
#include "eventmatch/events.hpp"
#include "eventmatch/features.hpp"

namespace eventmatch {

struct StageToggles {
  bool transformer = true;
  bool propagation = true;
  bool multiscale = true;
  bool refinement = true;
};

// Where propagation sits relative to the 1/4 refinement.
enum class StageOrder { PropagateThenRefine, RefineThenPropagate };

struct PipelineConfig {
  MatchMode task = MatchMode::Flow;
  ModelConfig model;
  MatchConfig match;
  StageToggles stages;
  StageOrder order = StageOrder::PropagateThenRefine;
  std::uint64_t seed = 0;  // recorded for reproducibility; weights carry their own

  void validate() const;
};

struct StageOutput {
  std::string name;  // global, propagate, multiscale, gru.N, final
  DisplacementField field;
};

struct PipelineResult {
  DisplacementField final;          // full resolution
  std::vector<StageOutput> stages;  // every intermediate at its own scale
  std::vector<std::string> warnings;
};

// extract -> positional encoding -> enhance -> global match (1/8) -> propagate
// -> multi-scale refine (1/4) -> GRU -> bilinear x4 to the input resolution.
PipelineResult run(const VoxelGrid& v1, const VoxelGrid& v2, const ModelWeights& w, const PipelineConfig& config);

// Bilinear resampling of any stage output to h x w with magnitudes rescaled.
DisplacementField resample_to(const DisplacementField& d, std::size_t h, std::size_t w);

// Predictions in the order they are refined, for supervision.
std::vector<DisplacementField> supervised_predictions(const PipelineResult& r, std::size_t h, std::size_t w);

struct LossConfig {
  double gamma = 0.7;
  double beta = 1.0;  // smooth-l1 transition for disparity

  void validate() const;
};

// gamma^(N - i) for i = 1..N.
std::vector<double> loss_weights(std::size_t n, double gamma);

// sum_i gamma^(N-i) l(gt, pred_i), with l the mean l1 norm (flow) or mean
// smooth-l1 (disparity) over valid pixels.
double supervision_loss(const std::vector<DisplacementField>& predictions, const DisplacementField& gt,
                        const Mask& mask, const LossConfig& config = {});

struct MetricsReport {
  std::size_t valid = 0;
  std::optional<double> epe, ae;    // flow
  std::optional<double> mae, rmse;  // disparity
  std::map<int, double> npe;        // N -> percent of errors above N px
};

MetricsReport flow_metrics(const DisplacementField& pred, const DisplacementField& gt, const Mask& mask);
MetricsReport disparity_metrics(const DisplacementField& pred, const DisplacementField& gt, const Mask& mask);

std::string metrics_json(const MetricsReport& m);

}  // namespace eventmatch
