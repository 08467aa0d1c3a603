#include "eventmatch/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <nlohmann/json.hpp>

#include "eventmatch/enhancement.hpp"
#include "eventmatch/events.hpp"
#include "eventmatch/features.hpp"
#include "eventmatch/geometry.hpp"
#include "eventmatch/matching.hpp"
#include "eventmatch/optimize.hpp"
#include "eventmatch/parallel.hpp"
#include "eventmatch/pipeline.hpp"
#include "eventmatch/rng.hpp"

namespace eventmatch {

bool SelfcheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace {

struct Outcome {
  double measured;
  double tolerance;
  std::string detail;
};

using CheckFn = std::function<Outcome(std::uint64_t seed, bool broken)>;

EventStream random_interior_stream(Rng& rng, std::size_t n, std::uint32_t w, std::uint32_t h) {
  EventStream s;
  s.width = w;
  s.height = h;
  s.t_start = 1000;
  s.t_end = 1000 + 50000;
  for (std::size_t k = 0; k < n; ++k) {
    Event e;
    e.t = s.t_start + 1 + rng.below(s.t_end - s.t_start - 1);
    e.x = static_cast<std::uint16_t>(rng.below(w));
    e.y = static_cast<std::uint16_t>(rng.below(h));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
    s.events.push_back(e);
  }
  std::stable_sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return s;
}

Outcome voxel_mass_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 1));
  auto s = random_interior_stream(rng, 10000, 64, 48);
  const double n = static_cast<double>(s.events.size());
  if (broken) s.events.resize(s.events.size() * 99 / 100);  // lose 1% of the events
  const double mass = voxel_mass(build_voxel_grid(s));
  return {std::abs(mass - n) / n, 1e-3, "sum V vs N over 10000 interior-time events"};
}

Outcome voxel_permutation_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 2));
  const auto s = random_interior_stream(rng, 2000, 32, 32);
  auto shuffled = s;
  for (std::size_t i = shuffled.events.size(); i > 1; --i)
    std::swap(shuffled.events[i - 1], shuffled.events[rng.below(i)]);
  if (broken) shuffled.events[0].t = std::min(shuffled.t_end, shuffled.events[0].t + 5000);
  const auto a = build_voxel_grid(s), b = build_voxel_grid(shuffled);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) - b.data[i]) / std::max(1.0, std::abs(static_cast<double>(a.data[i]))));
  return {worst, 1e-6, "voxel grid of a shuffled stream"};
}

Outcome event_roundtrip_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 3));
  const auto s = random_interior_stream(rng, 500, 40, 30);
  double mismatches = 0.0;
  for (EventFormat f : {EventFormat::Text, EventFormat::Binary}) {
    auto bytes = write_events(s, f);
    if (broken && f == EventFormat::Binary) bytes[kBinaryEventHeaderSize + 8] ^= 1;  // x of the first record
    const auto back = parse_events(bytes, f);
    if (back.events.size() != s.events.size()) {
      mismatches += 1e6;
      continue;
    }
    for (std::size_t i = 0; i < s.events.size(); ++i) mismatches += !(back.events[i] == s.events[i]);
  }
  return {mismatches, 0.0, "records differing after text and binary write/parse"};
}

Outcome epipolar_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 4));
  double worst = 0.0;
  for (int n = 0; n < 10000; ++n) {
    CameraRig rig;
    rig.f_prime = rng.uniform(50, 500);
    rig.baseline = rng.uniform(0, 1);
    rig.width = 640;
    rig.height = 480;
    rig.cx = 320;
    rig.cy = 240;
    const ScenePoint p{{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(1, 50)},
                       {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)}};
    auto f = stereo_flow_pair(p, rig);
    if (broken && n == 0) f.right.y += 1e-9;
    worst = std::max(worst, std::abs(f.left.y - f.right.y));
  }
  return {worst, 1e-12, "max |d_y^L - d_y^R| over 10000 random points and rigs"};
}

// Least-squares slope of log(err) against log(dZ tau / Z).
double rate_identity_slope(bool broken) {
  CameraRig rig;
  rig.f_prime = 200;
  rig.baseline = 0.5;
  rig.width = 128;
  rig.height = 128;
  rig.cx = 64;
  rig.cy = 64;
  const ScenePoint p{{0.3, -0.2, 20.0}, {0.1, 0.0, 2.0}};
  std::vector<double> xs, ys;
  for (int k = 0; k <= 12; ++k) {
    const double tau = 1e-3 * std::pow(10.0, k / 6.0);
    const auto r = disparity_rate_identity(p, rig, tau);
    const double rhs = broken ? r.rhs * 1.01 : r.rhs;
    xs.push_back(std::log(p.velocity.z * tau / p.position.z));
    ys.push_back(std::log(std::abs(r.lhs - rhs)));
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

Outcome rate_slope_check(std::uint64_t, bool broken) {
  const double slope = rate_identity_slope(broken);
  std::ostringstream os;
  os << "log-log slope " << slope << " of the first-order disparity-rate error";
  return {std::abs(slope - 2.0), 0.2, os.str()};
}

Outcome argmax_oracle_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 6));
  const double temperature = broken ? 1.0 : 1e-3;
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    BasicTensor<double> v({8, 8, 8, 8});
    for (auto& x : v.values()) x = rng.uniform();
    std::vector<std::size_t> best(64);
    for (std::size_t p = 0; p < 64; ++p) {
      best[p] = rng.below(64);
      v[p * 64 + best[p]] = 2.0;  // at least a unit gap over every other candidate
    }
    const auto d = soft_argmax_displacement(v, MatchMode::Flow, temperature);
    for (std::size_t p = 0; p < 64; ++p) {
      const double gx = static_cast<double>(best[p] % 8) - static_cast<double>(p % 8);
      const double gy = static_cast<double>(best[p] / 8) - static_cast<double>(p / 8);
      worst = std::max({worst, std::abs(d[2 * p] - gx), std::abs(d[2 * p + 1] - gy)});
    }
  }
  return {worst, 1e-3, "soft-argmax vs brute-force argmax, 100 volumes, T = 1e-3"};
}

// Gaussian-blurred noise with unit variance per channel.
Tensor smooth_features(std::size_t h, std::size_t w, std::size_t d, double sigma, double amplitude, Rng& rng) {
  const long r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> taps(2 * r + 1);
  for (long k = -r; k <= r; ++k) taps[k + r] = std::exp(-0.5 * k * k / (sigma * sigma));
  const long ph = static_cast<long>(h) + 2 * r, pw = static_cast<long>(w) + 2 * r;
  std::vector<double> noise(ph * pw * d), rows(ph * w * d, 0.0), out(h * w * d, 0.0);
  for (auto& v : noise) v = rng.normal();
  for (long i = 0; i < ph; ++i)
    for (long j = 0; j < static_cast<long>(w); ++j)
      for (long k = -r; k <= r; ++k)
        for (std::size_t c = 0; c < d; ++c) rows[(i * w + j) * d + c] += taps[k + r] * noise[(i * pw + j + r + k) * d + c];
  for (long i = 0; i < static_cast<long>(h); ++i)
    for (long j = 0; j < static_cast<long>(w); ++j)
      for (long k = -r; k <= r; ++k)
        for (std::size_t c = 0; c < d; ++c) out[(i * w + j) * d + c] += taps[k + r] * rows[((i + r + k) * w + j) * d + c];
  Tensor t({h, w, d});
  for (std::size_t c = 0; c < d; ++c) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) {
      s += out[p * d + c];
      s2 += out[p * d + c] * out[p * d + c];
    }
    const double n = static_cast<double>(h * w), mean = s / n, sd = std::sqrt(std::max(1e-12, s2 / n - mean * mean));
    for (std::size_t p = 0; p < h * w; ++p) t[p * d + c] = static_cast<float>(amplitude * (out[p * d + c] - mean) / sd);
  }
  return t;
}

Tensor crop(const Tensor& f, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  Tensor out({h, w, f.dim(2)});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      std::copy_n(&f(top + i, left + j, 0), f.dim(2), &out(i, j, 0));
  return out;
}

Outcome shift_recovery_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 7));
  const std::size_t h = 20, w = 24, m = 3, d = 128;
  const auto field = smooth_features(h + 2 * m, w + 2 * m, d, 1.0, 2.0, rng);
  const FeatureMap f1{crop(field, m, m, h, w), 1};
  double worst = 0.0;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      // content of f1 at p appears at p + (dx, dy) in f2
      const int ex = broken ? -dx : dx;  // mirrored target
      const FeatureMap f2{crop(field, m - dy, m - ex, h, w), 1};
      const auto r = global_match(f1, f2, MatchMode::Flow);
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t i = m; i < h - m; ++i)
        for (std::size_t j = m; j < w - m; ++j) {
          sum += std::hypot(r.displacement.data(i, j, 0) - dx, r.displacement.data(i, j, 1) - dy);
          ++n;
        }
      worst = std::max(worst, sum / n);
    }
  return {worst, 0.1, "worst interior EPE over the 49 integer shifts in [-3, 3]^2"};
}

Outcome gradient_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 8));
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    const MatchMode mode = s % 2 == 0 ? MatchMode::Flow : MatchMode::Disparity;
    BasicTensor<double> v = mode == MatchMode::Flow ? BasicTensor<double>({6, 6, 6, 6}) : BasicTensor<double>({6, 6, 6});
    for (auto& x : v.values()) x = rng.normal();
    BasicTensor<double> up({6, 6, channels_for(mode)});
    for (auto& x : up.values()) x = rng.normal();
    const double t = 0.5 + 0.1 * s;
    auto g = match_gradient(v, mode, t, up);
    if (broken) g[0] *= 1.01;
    auto loss = [&](const BasicTensor<double>& vol) {
      const auto d = soft_argmax_displacement(vol, mode, t);
      double l = 0.0;
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
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-6, std::abs(g[i]) + std::abs(fd)));
    }
  }
  return {worst, 1e-4, "max relative error vs central differences (h = 1e-4), 20 volumes"};
}

ModelConfig small_model() {
  ModelConfig c;
  c.dim = 32;
  c.stem_channels = 8;
  c.block1_channels = 8;
  c.block2_channels = 16;
  c.enhancement.num_blocks = 6;
  c.refine.gru_hidden = 8;
  c.refine.context_dim = 8;
  return c;
}

Tensor normal_tensor(std::vector<std::size_t> dims, Rng& rng) {
  Tensor t(std::move(dims));
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

Outcome swap_symmetry_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 9));
  const auto cfg = small_model();
  const auto w = init_weights(derive_seed(seed, 90), cfg);
  const FeatureMap a{normal_tensor({7, 9, cfg.dim}, rng), 8}, b{normal_tensor({7, 9, cfg.dim}, rng), 8};
  auto b2 = b;
  if (broken) b2.data[0] += 1e-3f;
  const auto [x1, x2] = enhance(a, b, w, cfg.enhancement);
  const auto [y1, y2] = enhance(b2, a, w, cfg.enhancement);
  const double bad = static_cast<double>(!bitwise_equal(x1.data, y2.data)) + !bitwise_equal(x2.data, y1.data);
  return {bad, 0.0, "outputs differing bitwise after swapping the inputs (6 blocks)"};
}

Outcome propagation_rows_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 10));
  const FeatureMap f{normal_tensor({9, 11, 32}, rng), 8};
  auto a = propagation_weights(f);
  if (broken) a[0] += 1e-5f;
  double worst = 0.0;
  const std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a(i, j);
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return {worst, 1e-6, "max |row sum - 1| of the propagation attention"};
}

Outcome window_roundtrip_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 11));
  double bad = 0.0;
  for (auto [h, w, k] : {std::tuple{8, 8, 2}, {7, 9, 2}, {13, 5, 4}, {16, 16, 8}}) {
    const auto f = normal_tensor({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 5}, rng);
    for (bool shifted : {false, true}) {
      auto p = partition_windows(f, k, shifted);
      if (broken && shifted) p.tokens[0][0] += 1.0f;
      bad += !bitwise_equal(unpartition_windows(p), f);
    }
  }
  return {bad, 0.0, "maps not restored bitwise by partition/unpartition"};
}

Outcome serialization_check(std::uint64_t seed, bool broken) {
  Rng rng(derive_seed(seed, 12));
  double bad = 0.0;
  const auto t = normal_tensor({3, 4, 5}, rng);
  auto tb = write_tensor(t);
  if (broken) tb.back() ^= 0x40;
  bad += !bitwise_equal(read_tensor(tb), t);
  const auto w = init_weights(derive_seed(seed, 120), small_model());
  const auto wb = save_weights(w);
  const auto back = load_weights(wb);
  for (const auto& [name, x] : w.tensors) bad += !back.contains(name) || !bitwise_equal(back.get(name), x);
  bad += save_weights(back) != wb;
  return {bad, 0.0, "tensors differing after TNSR and weight-archive round trips"};
}

Outcome loss_weights_check(std::uint64_t, bool broken) {
  const auto w = loss_weights(3, broken ? 0.71 : 0.7);
  const double worst = std::max({std::abs(w[0] - 0.49), std::abs(w[1] - 0.7), std::abs(w[2] - 1.0)});
  return {worst, 1e-12, "N = 3, gamma = 0.7 weights vs (0.49, 0.7, 1.0)"};
}

Outcome metric_check(std::uint64_t, bool broken) {
  double worst = 0.0;
  auto flow = DisplacementField::zeros(MatchMode::Flow, 2, 2);
  auto pred = flow;
  for (std::size_t p = 0; p < 4; ++p) {
    pred.data[2 * p] = 3.0f;
    pred.data[2 * p + 1] = broken ? 4.1f : 4.0f;
  }
  const Mask all({2, 2}, 1);
  const auto m = flow_metrics(pred, flow, all);
  worst = std::max({worst, std::abs(*m.epe - 5.0), std::abs(m.npe.at(3) - 100.0)});
  auto half = flow;
  half.data[0] = half.data[2] = 2.0f;
  const auto h = flow_metrics(half, flow, all);
  worst = std::max({worst, std::abs(*h.epe - 1.0), std::abs(h.npe.at(1) - 50.0), std::abs(h.npe.at(3))});
  auto disp = DisplacementField::zeros(MatchMode::Disparity, 1, 4);
  auto dp = disp;
  dp.data[3] = 2.0f;
  const auto dm = disparity_metrics(dp, disp, Mask({1, 4}, 1));
  worst = std::max({worst, std::abs(*dm.mae - 0.5), std::abs(*dm.rmse - 1.0), std::abs(dm.npe.at(1) - 25.0)});
  return {worst, 1e-6, "EPE/NPE/MAE/RMSE unit cases vs closed forms"};
}

Outcome generator_check(std::uint64_t seed, bool broken) {
  SceneDescription d;
  d.rig.f_prime = 200;
  d.rig.baseline = 0.5;
  d.rig.width = d.rig.height = 48;
  d.rig.cx = d.rig.cy = 24;
  PlanePrimitive p;
  p.depth = 50;
  p.velocity = {5, 0, 0};
  p.density = 4;
  p.rate = 300;
  p.seed = seed;
  d.planes.push_back(p);
  const auto out = render_synthetic(build_scene(d), derive_seed(seed, 13));
  const auto v1 = build_voxel_grid(out.left_t), v2 = build_voxel_grid(out.left_t2);
  auto gt = out.gt_flow;
  if (broken)
    for (std::size_t q = 0; q < gt.height() * gt.width(); ++q) gt.data[2 * q] += 1.0f;
  const auto base = eval_matching_cost(v1.data, v2.data, gt);
  std::vector<CostMap> moved;
  for (auto [du, dv] : {std::pair{1.0f, 0.0f}, {-1.0f, 0.0f}, {0.0f, 1.0f}, {0.0f, -1.0f}}) {
    auto q = gt;
    for (std::size_t i = 0; i < q.height() * q.width(); ++i) {
      q.data[2 * i] += du;
      q.data[2 * i + 1] += dv;
    }
    moved.push_back(eval_matching_cost(v1.data, v2.data, q));
  }
  std::size_t n = 0, ok = 0;
  for (std::size_t i = 0; i < gt.valid.size(); ++i) {
    if (!gt.valid[i] || !base.valid[i]) continue;
    if (!std::all_of(moved.begin(), moved.end(), [&](const CostMap& c) { return c.valid[i] != 0; })) continue;
    ++n;
    ok += std::all_of(moved.begin(), moved.end(), [&](const CostMap& c) { return base.residual[i] <= c.residual[i]; });
  }
  const double frac = n ? static_cast<double>(ok) / n : 0.0;
  return {1.0 - frac, 0.05, "share of valid pixels where ground truth is not the voxel-cost minimum"};
}

const std::vector<std::pair<std::string, CheckFn>>& registry() {
  static const std::vector<std::pair<std::string, CheckFn>> checks{
      {"voxel-mass", voxel_mass_check},
      {"voxel-permutation", voxel_permutation_check},
      {"event-roundtrip", event_roundtrip_check},
      {"epipolar", epipolar_check},
      {"rate-identity-slope", rate_slope_check},
      {"argmax-oracle", argmax_oracle_check},
      {"shift-recovery", shift_recovery_check},
      {"match-gradient", gradient_check},
      {"swap-symmetry", swap_symmetry_check},
      {"propagation-rows", propagation_rows_check},
      {"window-roundtrip", window_roundtrip_check},
      {"serialization-roundtrip", serialization_check},
      {"loss-weights", loss_weights_check},
      {"metric-closed-forms", metric_check},
      {"generator-soundness", generator_check},
  };
  return checks;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

const std::vector<std::string>& selfcheck_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, fn] : registry()) out.push_back(name);
    return out;
  }();
  return names;
}

SelfcheckReport run_selfcheck(std::uint64_t seed, const std::optional<std::string>& broken) {
  if (broken && std::find(selfcheck_names().begin(), selfcheck_names().end(), *broken) == selfcheck_names().end())
    throw DomainError("unknown check '" + *broken + "'");
  const bool was_deterministic = deterministic();
  set_deterministic(true);
  SelfcheckReport r;
  r.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& [name, fn] : registry()) {
    CheckResult c;
    c.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Outcome o = fn(seed, broken && *broken == name);
      c.measured = o.measured;
      c.tolerance = o.tolerance;
      c.detail = o.detail;
      c.passed = std::isfinite(o.measured) && o.measured <= o.tolerance;
    } catch (const std::exception& e) {
      c.passed = false;
      c.measured = std::numeric_limits<double>::quiet_NaN();
      c.detail = std::string("exception: ") + e.what();
    }
    c.seconds = seconds_since(t0);
    r.checks.push_back(std::move(c));
  }
  r.seconds = seconds_since(start);
  set_deterministic(was_deterministic);
  return r;
}

std::string selfcheck_json(const SelfcheckReport& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["passed"] = r.passed();
  j["seconds"] = r.seconds;
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : r.checks) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["passed"] = c.passed;
    if (std::isfinite(c.measured))
      e["measured"] = c.measured;
    else
      e["measured"] = nullptr;
    e["tolerance"] = c.tolerance;
    e["detail"] = c.detail;
    e["seconds"] = c.seconds;
    j["checks"].push_back(std::move(e));
  }
  return j.dump(2);
}

std::string selfcheck_text(const SelfcheckReport& r) {
  std::ostringstream os;
  for (const auto& c : r.checks)
    os << (c.passed ? "ok   " : "FAIL ") << c.name << "  measured=" << c.measured << " tol=" << c.tolerance << "  ("
       << c.detail << ", " << c.seconds << " s)\n";
  const auto failed = std::count_if(r.checks.begin(), r.checks.end(), [](const CheckResult& c) { return !c.passed; });
  os << r.checks.size() - failed << "/" << r.checks.size() << " checks passed in " << r.seconds << " s\n";
  return os.str();
}

}  // namespace eventmatch
