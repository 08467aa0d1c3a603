#include "eventmatch/pipeline.hpp"

#include <cmath>
#include <numbers>
#include <nlohmann/json.hpp>

#include "eventmatch/enhancement.hpp"
#include "eventmatch/matching.hpp"
#include "eventmatch/optimize.hpp"

namespace eventmatch {

void PipelineConfig::validate() const {
  model.validate();
  if (!(match.temperature > 0.0)) throw DomainError("temperature must be positive");
}

void LossConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("loss gamma must lie in (0, 1]");
  if (!(beta > 0.0)) throw DomainError("smooth-l1 beta must be positive");
}

DisplacementField resample_to(const DisplacementField& d, std::size_t h, std::size_t w) {
  if (d.height() == h && d.width() == w) return d;
  DisplacementField out = upsample_displacement(d, d.scale, h, w);
  out.scale = 1;
  return out;
}

PipelineResult run(const VoxelGrid& v1, const VoxelGrid& v2, const ModelWeights& w, const PipelineConfig& config) {
  config.validate();
  if (v1.data.dims() != v2.data.dims())
    throw ShapeError("input voxel grids differ: " + shape_string(v1.data.dims()) + " vs " +
                     shape_string(v2.data.dims()));
  const auto& cfg = config.model;
  const auto& st = config.stages;
  const MatchMode mode = config.task;
  const std::size_t h = v1.data.dim(0), wd = v1.data.dim(1);
  const bool fine = st.multiscale || st.refinement;

  std::set<std::size_t> scales{8};
  if (fine) scales.insert(4);
  auto f1 = extract_features(v1, w, scales);
  auto f2 = extract_features(v2, w, scales);

  PipelineResult r;
  FeatureMap e1 = add_positional_encoding(f1.at(8)), e2 = add_positional_encoding(f2.at(8));
  if (st.transformer) std::tie(e1, e2) = enhance(e1, e2, w, cfg.enhancement);

  MatchResult global = global_match(e1, e2, mode, config.match);
  r.warnings = global.warnings;
  DisplacementField cur = global.displacement;
  r.stages.push_back({"global", cur});

  const bool propagate_early = st.propagation && (config.order == StageOrder::PropagateThenRefine || !fine);
  if (propagate_early) {
    cur = propagate(e1, cur);
    r.stages.push_back({"propagate", cur});
  }

  if (fine) {
    const auto ms = multi_scale_refine(f1.at(4), f2.at(4), cur, w, cfg, config.match, st.transformer);
    cur = st.multiscale ? ms.refined : ms.upsampled;
    if (st.multiscale) r.stages.push_back({"multiscale", cur});
    if (st.propagation && !propagate_early) {
      cur = propagate(ms.f1, cur);
      r.stages.push_back({"propagate", cur});
    }
    if (st.refinement) {
      const std::size_t n = mode == MatchMode::Flow ? cfg.refine.flow_iters : cfg.refine.disp_iters;
      if (n > 0) {
        const auto iters = gru_refine(cur, ms.upsampled, ms.f1, ms.f2_warped, w, cfg.refine, n, config.match);
        for (std::size_t i = 0; i < iters.size(); ++i) r.stages.push_back({"gru." + std::to_string(i + 1), iters[i]});
        cur = iters.back();
      }
    }
  }

  r.final = resample_to(cur, h, wd);
  if (mode == MatchMode::Disparity)
    for (auto& v : r.final.data.values()) v = std::max(v, 0.0f);
  r.stages.push_back({"final", r.final});
  return r;
}

std::vector<DisplacementField> supervised_predictions(const PipelineResult& r, std::size_t h, std::size_t w) {
  std::vector<DisplacementField> out;
  for (const auto& s : r.stages)
    if (s.name != "final") out.push_back(resample_to(s.field, h, w));
  if (out.empty()) out.push_back(r.final);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> loss_weights(std::size_t n, double gamma) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::pow(gamma, static_cast<double>(n - 1 - i));
  return out;
}

namespace {

void require_same(const DisplacementField& a, const DisplacementField& b, const Mask& mask) {
  if (a.data.dims() != b.data.dims())
    throw ShapeError("prediction " + shape_string(a.data.dims()) + " and ground truth " + shape_string(b.data.dims()) +
                     " differ");
  if (mask.dims() != std::vector<std::size_t>{a.height(), a.width()})
    throw ShapeError("mask " + shape_string(mask.dims()) + " does not match field " + shape_string(a.data.dims()));
}

std::size_t count_valid(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask.values()) n += v != 0;
  if (n == 0) throw DomainError("mask selects no pixels");
  return n;
}

double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
}

}  // namespace

double supervision_loss(const std::vector<DisplacementField>& predictions, const DisplacementField& gt,
                        const Mask& mask, const LossConfig& config) {
  config.validate();
  if (predictions.empty()) throw DomainError("no predictions to supervise");
  const std::size_t n = count_valid(mask);
  const auto weights = loss_weights(predictions.size(), config.gamma);
  const std::size_t c = gt.channels();
  double total = 0.0;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    require_same(predictions[k], gt, mask);
    double sum = 0.0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
      if (!mask[p]) continue;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double e = static_cast<double>(predictions[k].data[p * c + ch]) - gt.data[p * c + ch];
        sum += gt.mode == MatchMode::Flow ? std::abs(e) : smooth_l1(e, config.beta);
      }
    }
    total += weights[k] * sum / static_cast<double>(n);
  }
  return total;
}

MetricsReport flow_metrics(const DisplacementField& pred, const DisplacementField& gt, const Mask& mask) {
  require_same(pred, gt, mask);
  if (gt.channels() != 2) throw ShapeError("flow metrics need two-channel fields");
  MetricsReport m;
  m.valid = count_valid(mask);
  double epe = 0.0, ae = 0.0;
  std::map<int, std::size_t> over{{1, 0}, {2, 0}, {3, 0}};
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    const double pu = pred.data[2 * p], pv = pred.data[2 * p + 1];
    const double gu = gt.data[2 * p], gv = gt.data[2 * p + 1];
    const double e = std::hypot(pu - gu, pv - gv);
    epe += e;
    for (auto& [k, cnt] : over)
      if (e > k) ++cnt;
    const double cosang = (pu * gu + pv * gv + 1.0) / (std::sqrt(pu * pu + pv * pv + 1.0) * std::sqrt(gu * gu + gv * gv + 1.0));
    ae += std::acos(std::clamp(cosang, -1.0, 1.0)) * 180.0 / std::numbers::pi;
  }
  const double n = static_cast<double>(m.valid);
  m.epe = epe / n;
  m.ae = ae / n;
  for (auto& [k, cnt] : over) m.npe[k] = 100.0 * static_cast<double>(cnt) / n;
  return m;
}

MetricsReport disparity_metrics(const DisplacementField& pred, const DisplacementField& gt, const Mask& mask) {
  require_same(pred, gt, mask);
  if (gt.channels() != 1) throw ShapeError("disparity metrics need one-channel fields");
  MetricsReport m;
  m.valid = count_valid(mask);
  double mae = 0.0, mse = 0.0;
  std::map<int, std::size_t> over{{1, 0}, {2, 0}, {3, 0}};
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    const double e = std::abs(static_cast<double>(pred.data[p]) - gt.data[p]);
    mae += e;
    mse += e * e;
    for (auto& [k, cnt] : over)
      if (e > k) ++cnt;
  }
  const double n = static_cast<double>(m.valid);
  m.mae = mae / n;
  m.rmse = std::sqrt(mse / n);
  for (auto& [k, cnt] : over) m.npe[k] = 100.0 * static_cast<double>(cnt) / n;
  return m;
}

std::string metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["valid"] = m.valid;
  if (m.epe) j["epe"] = *m.epe;
  if (m.ae) j["ae_deg"] = *m.ae;
  if (m.mae) j["mae"] = *m.mae;
  if (m.rmse) j["rmse"] = *m.rmse;
  for (const auto& [k, v] : m.npe) j[std::to_string(k) + "pe"] = v;
  return j.dump();
}

}  // namespace eventmatch
