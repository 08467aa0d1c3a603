// Acceptance suite: one PASS/FAIL line per criterion with the measured value
// next to its pinned tolerance. Exit status is 0 when every criterion passes,
// or when the only failures are those listed with --known-failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "eventmatch/enhancement.hpp"
#include "eventmatch/events.hpp"
#include "eventmatch/features.hpp"
#include "eventmatch/geometry.hpp"
#include "eventmatch/matching.hpp"
#include "eventmatch/optimize.hpp"
#include "eventmatch/parallel.hpp"
#include "eventmatch/pipeline.hpp"
#include "eventmatch/rng.hpp"
#include "eventmatch/selfcheck.hpp"
#include "test_support.hpp"

using namespace eventmatch;
using eventmatch::testing::crop;
using eventmatch::testing::plane_scene;
using eventmatch::testing::random_tensor;
using eventmatch::testing::smooth_random_field;

namespace {

// Pinned tolerances.
constexpr double kVoxelMassRel = 1e-3;
constexpr double kVoxelSeconds = 1.0;
constexpr double kEpipolarMax = 1e-12;
constexpr double kRateSlope = 2.0, kRateSlopeTol = 0.2;
constexpr double kOracleMax = 1e-3;
constexpr double kOracleSeconds = 5.0;
constexpr double kShiftEpe = 0.1;
constexpr double kGradRel = 1e-4;
constexpr double kFlowEpe = 0.25;
constexpr double kDispMae = 0.5;
constexpr double kVerticalMean = 0.3;
constexpr double kClosedForm = 1e-6;
constexpr double kRowSum = 1e-6;
constexpr double kSelfcheckSeconds = 60.0;

// End-to-end scene: f' = 200, B = 0.5, Z = 50 gives D = 2 px, and vx = 5 over
// dt = 0.1 gives u = 2 px.
constexpr std::size_t kSceneSize = 128;
constexpr double kSceneDepth = 50.0;
constexpr std::size_t kInteriorMargin = 16;

struct Line {
  int id;
  std::string name;
  bool passed;
  std::string measured;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

EventStream random_stream(Rng& rng, std::size_t n, std::uint32_t w, std::uint32_t h) {
  EventStream s;
  s.width = w;
  s.height = h;
  s.t_start = 0;
  s.t_end = 100000;
  for (std::size_t k = 0; k < n; ++k) {
    Event e;
    e.t = 1 + rng.below(s.t_end - 1);  // strictly interior
    e.x = static_cast<std::uint16_t>(rng.below(w));
    e.y = static_cast<std::uint16_t>(rng.below(h));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
    s.events.push_back(e);
  }
  std::sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return s;
}

Line voxel_mass_conservation() {
  Rng rng(101);
  const auto s = random_stream(rng, 10000, 64, 48);
  const auto t0 = std::chrono::steady_clock::now();
  const double mass = voxel_mass(build_voxel_grid(s));
  const double secs = seconds_since(t0);
  const double rel = std::abs(mass - 10000.0) / 10000.0;
  return {1, "voxel mass conservation", rel <= kVoxelMassRel && secs < kVoxelSeconds,
          "rel err " + fmt(rel) + " (tol " + fmt(kVoxelMassRel) + "), " + fmt(secs) + " s (< " + fmt(kVoxelSeconds) + ")"};
}

Line geometry_identities() {
  Rng rng(202);
  double worst = 0.0;
  for (int n = 0; n < 10000; ++n) {
    CameraRig rig;
    rig.f_prime = rng.uniform(50, 800);
    rig.baseline = rng.uniform(0.01, 1.0);
    rig.width = 640;
    rig.height = 480;
    rig.cx = rng.uniform(200, 440);
    rig.cy = rng.uniform(150, 330);
    const ScenePoint p{{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0.5, 80)},
                       {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)}};
    const auto f = stereo_flow_pair(p, rig);
    worst = std::max(worst, std::abs(f.left.y - f.right.y));
  }

  CameraRig rig;
  rig.f_prime = 200;
  rig.baseline = 0.5;
  rig.width = rig.height = 128;
  rig.cx = rig.cy = 64;
  const ScenePoint p{{0.5, 0.25, 25.0}, {0.2, -0.1, 3.0}};
  std::vector<double> xs, ys;
  for (int k = 0; k <= 16; ++k) {
    const double tau = 1e-3 * std::pow(10.0, k / 8.0);
    const auto r = disparity_rate_identity(p, rig, tau);
    xs.push_back(std::log(std::abs(p.velocity.z) * tau / p.position.z));
    ys.push_back(std::log(std::abs(r.lhs - r.rhs)));
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  const double slope = sxy / sxx;
  return {2, "geometry identities", worst <= kEpipolarMax && std::abs(slope - kRateSlope) <= kRateSlopeTol,
          "max |dyL - dyR| " + fmt(worst) + " (tol " + fmt(kEpipolarMax) + "), rate-error slope " + fmt(slope) + " (" +
              fmt(kRateSlope) + " +- " + fmt(kRateSlopeTol) + ")"};
}

Line matching_oracle() {
  Rng rng(303);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    BasicTensor<double> v({8, 8, 8, 8});
    for (auto& x : v.values()) x = rng.uniform(-1, 1);
    std::vector<std::size_t> arg(64);
    for (std::size_t p = 0; p < 64; ++p) {
      arg[p] = rng.below(64);
      v[p * 64 + arg[p]] = 1.5;  // unique maximum, gap >= 0.5
    }
    const auto d = soft_argmax_displacement(v, MatchMode::Flow, 1e-3);
    for (std::size_t p = 0; p < 64; ++p) {
      // brute force
      std::size_t best = 0;
      for (std::size_t q = 1; q < 64; ++q)
        if (v[p * 64 + q] > v[p * 64 + best]) best = q;
      const double gx = static_cast<double>(best % 8) - static_cast<double>(p % 8);
      const double gy = static_cast<double>(best / 8) - static_cast<double>(p / 8);
      worst = std::max({worst, std::abs(d[2 * p] - gx), std::abs(d[2 * p + 1] - gy)});
    }
  }
  const double secs = seconds_since(t0);
  return {3, "matching oracle equivalence", worst < kOracleMax && secs < kOracleSeconds,
          "max |soft - argmax| " + fmt(worst) + " (tol " + fmt(kOracleMax) + "), " + fmt(secs) + " s (< " +
              fmt(kOracleSeconds) + ")"};
}

Line shift_recovery() {
  const std::size_t h = 24, w = 28, m = 3, d = 128;
  const auto field = smooth_random_field(h + 2 * m, w + 2 * m, d, 1.0, 2.0, 404);
  const FeatureMap f1{crop(field, m, m, h, w), 1};
  double worst = 0.0;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      const FeatureMap f2{crop(field, m - dy, m - dx, h, w), 1};
      const auto r = global_match(f1, f2, MatchMode::Flow);
      double sum = 0;
      std::size_t n = 0;
      for (std::size_t i = m; i < h - m; ++i)
        for (std::size_t j = m; j < w - m; ++j, ++n)
          sum += std::hypot(r.displacement.data(i, j, 0) - dx, r.displacement.data(i, j, 1) - dy);
      worst = std::max(worst, sum / n);
    }
  return {4, "shift recovery", worst < kShiftEpe,
          "worst interior EPE over 49 shifts " + fmt(worst) + " px (tol " + fmt(kShiftEpe) + ")"};
}

Line gradient_check() {
  Rng rng(505);
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    const MatchMode mode = s < 10 ? MatchMode::Flow : MatchMode::Disparity;
    BasicTensor<double> v = mode == MatchMode::Flow ? BasicTensor<double>({6, 6, 6, 6}) : BasicTensor<double>({6, 6, 6});
    for (auto& x : v.values()) x = rng.normal();
    BasicTensor<double> up({6, 6, channels_for(mode)});
    for (auto& x : up.values()) x = rng.normal();
    const double t = 1.0;
    const auto g = match_gradient(v, mode, t, up);
    auto loss = [&](const BasicTensor<double>& vol) {
      const auto d = soft_argmax_displacement(vol, mode, t);
      double l = 0;
      for (std::size_t i = 0; i < d.size(); ++i) l += d[i] * up[i];
      return l;
    };
    const double h = 1e-4;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double lp = loss(v);
      v[i] = keep - h;
      const double lm = loss(v);
      v[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-6, std::abs(fd) + std::abs(g[i])));
    }
  }
  return {5, "gradient check", worst < kGradRel, "max relative error " + fmt(worst) + " (tol " + fmt(kGradRel) + ")"};
}

struct EndToEnd {
  SyntheticOutput data;
  ModelWeights weights;
};

const EndToEnd& end_to_end_inputs() {
  static const EndToEnd e = [] {
    EndToEnd out;
    out.data = render_synthetic(build_scene(plane_scene(kSceneSize, kSceneDepth, {5.0, 0.0, 0.0})), 7);
    out.weights = init_weights(1, ModelConfig{});
    return out;
  }();
  return e;
}

// Mean error over valid pixels at least kInteriorMargin from the border.
double interior_error(const DisplacementField& pred, const DisplacementField& gt) {
  double sum = 0;
  std::size_t n = 0;
  const std::size_t c = gt.channels();
  for (std::size_t i = kInteriorMargin; i + kInteriorMargin < gt.height(); ++i)
    for (std::size_t j = kInteriorMargin; j + kInteriorMargin < gt.width(); ++j) {
      const std::size_t p = i * gt.width() + j;
      if (!gt.valid[p]) continue;
      double e = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const double x = pred.data[p * c + k] - gt.data[p * c + k];
        e += x * x;
      }
      sum += std::sqrt(e);
      ++n;
    }
  return n ? sum / n : std::numeric_limits<double>::infinity();
}

Line end_to_end_flow() {
  const auto& e = end_to_end_inputs();
  PipelineConfig cfg;
  cfg.task = MatchMode::Flow;
  const auto r = run(build_voxel_grid(e.data.left_t), build_voxel_grid(e.data.left_t2), e.weights, cfg);
  const double epe = interior_error(r.final, e.data.gt_flow);
  return {6, "end-to-end synthetic flow", epe < kFlowEpe, "interior EPE " + fmt(epe) + " px (tol " + fmt(kFlowEpe) + ")"};
}

Line end_to_end_disparity() {
  const auto& e = end_to_end_inputs();
  const auto v1 = build_voxel_grid(e.data.left_t), v2 = build_voxel_grid(e.data.right_t);
  PipelineConfig cfg;
  cfg.task = MatchMode::Disparity;
  const auto r = run(v1, v2, e.weights, cfg);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < e.data.gt_disp.valid.size(); ++p)
    if (e.data.gt_disp.valid[p]) {
      sum += std::abs(r.final.data[p] - e.data.gt_disp.data[p]);
      ++n;
    }
  const double mae = n ? sum / n : std::numeric_limits<double>::infinity();

  // diagnostic: unconstrained 2D match of the stereo pair
  cfg.task = MatchMode::Flow;
  const auto diag = run(v1, v2, e.weights, cfg);
  double vsum = 0;
  for (std::size_t p = 0; p < e.data.gt_disp.valid.size(); ++p)
    if (e.data.gt_disp.valid[p]) vsum += std::abs(diag.final.data[2 * p + 1]);
  const double vmean = n ? vsum / n : std::numeric_limits<double>::infinity();
  return {7, "end-to-end synthetic disparity", mae < kDispMae && vmean < kVerticalMean,
          "MAE " + fmt(mae) + " px (tol " + fmt(kDispMae) + "), 2D-match mean |v| " + fmt(vmean) + " px (tol " +
              fmt(kVerticalMean) + ")"};
}

Line loss_and_metrics() {
  const auto w = loss_weights(3, 0.7);
  const bool exact = w.size() == 3 && w[0] == 0.7 * 0.7 && w[1] == 0.7 && w[2] == 1.0;
  double worst = std::max({std::abs(w[0] - 0.49), std::abs(w[1] - 0.7), std::abs(w[2] - 1.0)});

  const Mask all2({2, 2}, 1);
  auto zero = DisplacementField::zeros(MatchMode::Flow, 2, 2);
  auto pred = zero;
  for (std::size_t p = 0; p < 4; ++p) {
    pred.data[2 * p] = 3.0f;
    pred.data[2 * p + 1] = 4.0f;
  }
  auto m = flow_metrics(pred, zero, all2);
  worst = std::max({worst, std::abs(*m.epe - 5.0), std::abs(m.npe.at(1) - 100.0), std::abs(m.npe.at(3) - 100.0)});
  // one pixel off by 2 px, three exact
  auto one = zero;
  one.data[0] = 2.0f;
  m = flow_metrics(one, zero, all2);
  worst = std::max({worst, std::abs(*m.epe - 0.5), std::abs(m.npe.at(1) - 25.0), std::abs(m.npe.at(3))});
  // (1, 0) against (0, 1): homogeneous vectors (1,0,1) and (0,1,1) meet at 60 degrees
  auto a = zero, b = zero;
  a.data[0] = 1.0f;
  b.data[1] = 1.0f;
  m = flow_metrics(a, b, Mask({2, 2}, std::vector<std::uint8_t>{1, 0, 0, 0}));
  worst = std::max(worst, std::abs(*m.ae - 60.0));

  auto dz = DisplacementField::zeros(MatchMode::Disparity, 1, 4);
  auto dp = dz;
  dp.data[0] = 1.0f;
  dp.data[1] = 3.0f;
  const auto dm = disparity_metrics(dp, dz, Mask({1, 4}, 1));
  worst = std::max({worst, std::abs(*dm.mae - 1.0), std::abs(*dm.rmse - std::sqrt(2.5)), std::abs(dm.npe.at(1) - 25.0),
                    std::abs(dm.npe.at(2) - 25.0), std::abs(dm.npe.at(3))});
  return {8, "loss weighting and metric closed forms", exact && worst <= kClosedForm,
          std::string("weights ") + (exact ? "exact" : "inexact") + ", max deviation " + fmt(worst) + " (tol " +
              fmt(kClosedForm) + ")"};
}

Line structural_invariants() {
  std::vector<std::string> broken;

  const ModelConfig cfg;
  const auto w = init_weights(9, cfg);
  const FeatureMap a{random_tensor({6, 8, cfg.dim}, 91), 8}, b{random_tensor({6, 8, cfg.dim}, 92), 8};
  const auto [x1, x2] = enhance(a, b, w, cfg.enhancement);
  const auto [y1, y2] = enhance(b, a, w, cfg.enhancement);
  if (!bitwise_equal(x1.data, y2.data) || !bitwise_equal(x2.data, y1.data)) broken.push_back("swap symmetry");

  const auto pw = propagation_weights(FeatureMap{random_tensor({10, 12, 64}, 93), 8});
  double row = 0;
  for (std::size_t i = 0; i < pw.dim(0); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < pw.dim(1); ++j) s += pw(i, j);
    row = std::max(row, std::abs(s - 1.0));
  }
  if (row > kRowSum) broken.push_back("propagation rows");

  for (auto [h, wd, k] : {std::tuple<std::size_t, std::size_t, std::size_t>{8, 8, 2}, {9, 7, 2}, {16, 12, 8}, {5, 11, 4}}) {
    const auto f = random_tensor({h, wd, 6}, 94 + h);
    for (bool shifted : {false, true})
      if (!bitwise_equal(unpartition_windows(partition_windows(f, k, shifted)), f)) broken.push_back("window round trip");
  }

  const auto t = random_tensor({4, 5, 3}, 95);
  if (!bitwise_equal(read_tensor(write_tensor(t)), t)) broken.push_back("TNSR round trip");
  const auto wb = save_weights(w);
  if (save_weights(load_weights(wb)) != wb) broken.push_back("weights round trip");
  Rng rng(96);
  const auto s = random_stream(rng, 300, 40, 30);
  for (EventFormat f : {EventFormat::Text, EventFormat::Binary})
    if (!(parse_events(write_events(s, f), f).events == s.events)) broken.push_back("event round trip");

  std::string detail = "row-sum deviation " + fmt(row) + " (tol " + fmt(kRowSum) + ")";
  if (broken.empty()) detail += ", swap symmetry and all round trips bitwise";
  for (const auto& x : broken) detail += ", broken: " + x;
  return {9, "structural invariants", broken.empty(), detail};
}

Line selfcheck_runtime() {
  const unsigned threads = thread_count();
  set_thread_count(1);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_selfcheck(0);
  const double secs = seconds_since(t0);
  set_thread_count(threads);
  const auto failed = std::count_if(r.checks.begin(), r.checks.end(), [](const CheckResult& c) { return !c.passed; });
  return {10, "selfcheck suite", r.passed() && secs < kSelfcheckSeconds,
          std::to_string(r.checks.size() - failed) + "/" + std::to_string(r.checks.size()) + " checks, " + fmt(secs) +
              " s (< " + fmt(kSelfcheckSeconds) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only, known;
  app.add_option("--only", only, "run just these criteria");
  app.add_option("--known-failures", known, "criteria whose failure does not affect the exit status");
  CLI11_PARSE(app, argc, argv);

  set_deterministic(true);
  const std::vector<std::function<Line()>> criteria{voxel_mass_conservation, geometry_identities, matching_oracle,
                                                    shift_recovery,          gradient_check,      end_to_end_flow,
                                                    end_to_end_disparity,    loss_and_metrics,    structural_invariants,
                                                    selfcheck_runtime};
  const std::set<int> selected(only.begin(), only.end()), tolerated(known.begin(), known.end());
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Line l;
    try {
      l = criteria[i]();
    } catch (const std::exception& e) {
      l = {id, "criterion " + std::to_string(id), false, std::string("exception: ") + e.what()};
    }
    std::cout << (l.passed ? "PASS" : "FAIL") << " " << std::setw(2) << l.id << " " << l.name << ": " << l.measured
              << "  [" << fmt(seconds_since(t0)) << " s]";
    if (!l.passed && tolerated.contains(id)) std::cout << "  (known failure)";
    std::cout << std::endl;
    if (!l.passed && !tolerated.contains(id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
