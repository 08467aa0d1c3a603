#include "eventmatch/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "eventmatch/rng.hpp"

namespace eventmatch {

namespace {

void require_front(double z) {
  if (!(z > 0.0)) throw DomainError("point is not in front of the camera (Z = " + std::to_string(z) + ")");
}

}  // namespace

void CameraRig::validate() const {
  if (!(f_prime > 0.0)) throw DomainError("f_prime must be positive");
  if (!(baseline >= 0.0)) throw DomainError("baseline must be non-negative");
  if (width == 0 || height == 0) throw DomainError("image extent must be positive");
  if (cx < 0.0 || cx > static_cast<double>(width) || cy < 0.0 || cy > static_cast<double>(height))
    throw DomainError("principal point lies outside the image");
}

Vec2 project(const ScenePoint& p, const CameraRig& rig) {
  require_front(p.position.z);
  return {rig.f_prime * p.position.x / p.position.z + rig.cx,
          rig.f_prime * p.position.y / p.position.z + rig.cy};
}

Vec2 project_right(const ScenePoint& p, const CameraRig& rig) {
  require_front(p.position.z);
  return {rig.f_prime * (p.position.x - rig.baseline) / p.position.z + rig.cx,
          rig.f_prime * p.position.y / p.position.z + rig.cy};
}

Vec2 flow_from_motion(const ScenePoint& p, const CameraRig& rig) {
  const auto& [x, y, z] = p.position;
  const auto& [dx, dy, dz] = p.velocity;
  require_front(z);
  const double f = rig.f_prime;
  return {f * dx / z - f * x / (z * z) * dz, f * dy / z - f * y / (z * z) * dz};
}

double disparity_from_depth(double z, const CameraRig& rig) {
  require_front(z);
  return rig.f_prime * rig.baseline / z;
}

StereoFlow stereo_flow_pair(const ScenePoint& p, const CameraRig& rig) {
  StereoFlow out;
  out.left = flow_from_motion(p, rig);
  ScenePoint in_right = p;
  in_right.position.x -= rig.baseline;
  out.right = flow_from_motion(in_right, rig);
  return out;
}

RateIdentity disparity_rate_identity(const ScenePoint& p, const CameraRig& rig, double tau) {
  const double z0 = p.position.z;
  const double z1 = z0 + p.velocity.z * tau;
  if (!(z0 > 0.0) || !(z1 > 0.0)) throw DomainError("depth must stay positive over the step");
  const auto pair = stereo_flow_pair(p, rig);
  return {(pair.right.x - pair.left.x) * tau,
          disparity_from_depth(z0, rig) - disparity_from_depth(z1, rig)};
}

// ---------------------------------------------------------------------------

void SyntheticScene::validate() const {
  rig.validate();
  if (!(tau > 0.0)) throw DomainError("tau must be positive");
  if (!(dt > 0.0)) throw DomainError("dt must be positive");
  if (!(time_unit_us > 0.0)) throw DomainError("time_unit_us must be positive");
  for (const auto& p : points) {
    require_front(p.point.position.z);
    const double z_end = p.point.position.z + p.point.velocity.z * (dt + tau);
    if (!(z_end > 0.0)) throw DomainError("point passes behind the camera during the scene");
  }
}

namespace {

Vec3 parse_vec3(const std::string& s, std::size_t line) {
  Vec3 v;
  char c1 = 0, c2 = 0;
  std::istringstream is(s);
  if (!(is >> v.x >> c1 >> v.y >> c2 >> v.z) || c1 != ',' || c2 != ',' || !is.eof())
    throw ParseError("expected x,y,z triple, got '" + s + "'", line);
  return v;
}

double parse_double(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ParseError("bad number '" + s + "'", line);
  return v;
}

}  // namespace

SceneDescription parse_scene(const std::string& text) {
  SceneDescription d;
  bool have_cx = false, have_cy = false;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::vector<std::string> args;
    for (std::string tok; ls >> tok;) args.push_back(tok);

    if (key == "plane" || key == "point") {
      std::vector<std::pair<std::string, std::string>> kv;
      for (const auto& a : args) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value, got '" + a + "'", line_no);
        kv.emplace_back(a.substr(0, eq), a.substr(eq + 1));
      }
      if (key == "plane") {
        PlanePrimitive p;
        for (const auto& [k, v] : kv) {
          if (k == "depth") p.depth = parse_double(v, line_no);
          else if (k == "velocity") p.velocity = parse_vec3(v, line_no);
          else if (k == "density") p.density = parse_double(v, line_no);
          else if (k == "rate") p.rate = parse_double(v, line_no);
          else if (k == "texture") p.texture_scale = parse_double(v, line_no);
          else if (k == "seed") p.seed = static_cast<std::uint64_t>(parse_double(v, line_no));
          else throw ParseError("unknown plane attribute '" + k + "'", line_no);
        }
        if (!(p.depth > 0.0)) throw ParseError("plane depth must be positive", line_no);
        if (p.density < 0.0 || p.rate < 0.0 || !(p.texture_scale > 0.0))
          throw ParseError("plane density/rate must be >= 0 and texture > 0", line_no);
        d.planes.push_back(p);
      } else {
        TexturedPoint p;
        for (const auto& [k, v] : kv) {
          if (k == "position") p.point.position = parse_vec3(v, line_no);
          else if (k == "velocity") p.point.velocity = parse_vec3(v, line_no);
          else if (k == "rate") p.rate = parse_double(v, line_no);
          else throw ParseError("unknown point attribute '" + k + "'", line_no);
        }
        if (!(p.point.position.z > 0.0)) throw ParseError("point depth must be positive", line_no);
        d.points.push_back(p);
      }
      continue;
    }
    if (args.size() != 1) throw ParseError("expected '" + key + " <value>'", line_no);
    const double v = parse_double(args[0], line_no);
    if (key == "f_prime") d.rig.f_prime = v;
    else if (key == "baseline") d.rig.baseline = v;
    else if (key == "width") d.rig.width = static_cast<std::size_t>(v);
    else if (key == "height") d.rig.height = static_cast<std::size_t>(v);
    else if (key == "cx") d.rig.cx = v, have_cx = true;
    else if (key == "cy") d.rig.cy = v, have_cy = true;
    else if (key == "tau") d.tau = v;
    else if (key == "dt") d.dt = v;
    else if (key == "time_unit_us") d.time_unit_us = v;
    else throw ParseError("unknown key '" + key + "'", line_no);
  }
  if (!have_cx) d.rig.cx = static_cast<double>(d.rig.width) / 2.0;
  if (!have_cy) d.rig.cy = static_cast<double>(d.rig.height) / 2.0;
  return d;
}

std::string write_scene(const SceneDescription& d) {
  std::ostringstream os;
  os.precision(17);
  os << "f_prime " << d.rig.f_prime << "\nbaseline " << d.rig.baseline << "\nwidth " << d.rig.width
     << "\nheight " << d.rig.height << "\ncx " << d.rig.cx << "\ncy " << d.rig.cy << "\ntau "
     << d.tau << "\ndt " << d.dt << "\ntime_unit_us " << d.time_unit_us << '\n';
  for (const auto& p : d.planes)
    os << "plane depth=" << p.depth << " velocity=" << p.velocity.x << ',' << p.velocity.y << ','
       << p.velocity.z << " density=" << p.density << " rate=" << p.rate
       << " texture=" << p.texture_scale << " seed=" << p.seed << '\n';
  for (const auto& p : d.points)
    os << "point position=" << p.point.position.x << ',' << p.point.position.y << ','
       << p.point.position.z << " velocity=" << p.point.velocity.x << ',' << p.point.velocity.y
       << ',' << p.point.velocity.z << " rate=" << p.rate << '\n';
  return os.str();
}

namespace {

// Smooth random texture in [0, 1]: a sum of random plane waves squashed by a
// logistic, evaluated in time-0 pixel coordinates of the plane.
class PlaneTexture {
 public:
  PlaneTexture(double scale, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x7E47));
    waves_.resize(kWaves);
    for (auto& w : waves_) {
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double wavelength = 2.0 * scale * rng.uniform(0.7, 1.4);
      const double k = 2.0 * std::numbers::pi / wavelength;
      w = {k * std::cos(theta), k * std::sin(theta), rng.uniform(0.0, 2.0 * std::numbers::pi)};
    }
  }

  double operator()(double u, double v) const {
    double field = 0.0;
    for (const auto& w : waves_) field += std::cos(w.kx * u + w.ky * v + w.phase);
    field *= std::sqrt(2.0 / kWaves);
    return 1.0 / (1.0 + std::exp(-2.0 * field));
  }

 private:
  static constexpr int kWaves = 32;
  struct Wave {
    double kx, ky, phase;
  };
  std::vector<Wave> waves_;
};

// Range of time-0 pixel coordinates along one axis that are in view at some
// instant in [0, dt + tau] in either camera.
std::pair<double, double> lattice_range(const CameraRig& rig, const PlanePrimitive& plane,
                                        double t_end, bool horizontal) {
  const double extent = static_cast<double>(horizontal ? rig.width : rig.height);
  const double c = horizontal ? rig.cx : rig.cy;
  const double vel = horizontal ? plane.velocity.x : plane.velocity.y;
  double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
  for (double t : {0.0, t_end}) {
    const double z = plane.depth + plane.velocity.z * t;
    for (double shift : {0.0, horizontal ? rig.baseline : 0.0}) {
      for (double x : {-1.0, extent}) {
        const double world = (x - c) * z / rig.f_prime + shift - vel * t;
        const double u = rig.f_prime * world / plane.depth + c;
        lo = std::min(lo, u);
        hi = std::max(hi, u);
      }
    }
  }
  return {std::floor(lo) - 2.0, std::ceil(hi) + 2.0};
}

}  // namespace

SyntheticScene build_scene(const SceneDescription& d) {
  SyntheticScene s;
  s.rig = d.rig;
  s.tau = d.tau;
  s.dt = d.dt;
  s.time_unit_us = d.time_unit_us;
  s.planes = d.planes;
  s.points = d.points;
  s.explicit_points = d.points.size();
  const double t_end = d.dt + d.tau;
  for (const auto& plane : d.planes) {
    if (plane.density <= 0.0 || plane.rate <= 0.0) continue;
    if (!(plane.depth + plane.velocity.z * t_end > 0.0))
      throw DomainError("plane passes behind the camera during the scene");
    const PlaneTexture texture(plane.texture_scale, plane.seed);
    const double spacing = 1.0 / std::sqrt(plane.density);
    const auto [u0, u1] = lattice_range(d.rig, plane, t_end, true);
    const auto [v0, v1] = lattice_range(d.rig, plane, t_end, false);
    const double scale = plane.depth / d.rig.f_prime;
    for (double v = v0 + 0.25 * spacing; v < v1; v += spacing) {
      for (double u = u0 + 0.25 * spacing; u < u1; u += spacing) {
        TexturedPoint p;
        p.point.position = {(u - d.rig.cx) * scale, (v - d.rig.cy) * scale, plane.depth};
        p.point.velocity = plane.velocity;
        p.rate = plane.rate * texture(u, v);
        s.points.push_back(p);
      }
    }
  }
  s.validate();
  return s;
}

namespace {

ScenePoint at_time(const ScenePoint& p, double t) {
  return {p.position + t * p.velocity, p.velocity};
}

EventStream empty_stream(const SyntheticScene& s, double t0) {
  EventStream e;
  e.width = static_cast<std::uint32_t>(s.rig.width);
  e.height = static_cast<std::uint32_t>(s.rig.height);
  e.t_start = static_cast<std::uint64_t>(std::llround(t0 * s.time_unit_us));
  e.t_end = static_cast<std::uint64_t>(std::llround((t0 + s.tau) * s.time_unit_us));
  return e;
}

}  // namespace

DisplacementField ground_truth_flow(const SyntheticScene& s) {
  const auto h = s.rig.height, w = s.rig.width;
  auto gt = DisplacementField::zeros(MatchMode::Flow, h, w);
  std::vector<double> depth(h * w, std::numeric_limits<double>::infinity());
  gt.valid = Mask({h, w}, 0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      for (const auto& plane : s.planes) {
        if (plane.depth >= depth[i * w + j]) continue;
        const double k = plane.depth / s.rig.f_prime;
        const ScenePoint p{{(j - s.rig.cx) * k, (i - s.rig.cy) * k, plane.depth}, plane.velocity};
        const Vec2 moved = project(at_time(p, s.dt), s.rig);
        depth[i * w + j] = plane.depth;
        gt.data(i, j, 0) = static_cast<float>(moved.x - static_cast<double>(j));
        gt.data(i, j, 1) = static_cast<float>(moved.y - static_cast<double>(i));
        gt.valid(i, j) = 1;
      }
    }
  for (std::size_t n = 0; n < s.explicit_points; ++n) {
    const auto& p = s.points[n].point;
    const Vec2 a = project(p, s.rig);
    const auto j = std::lround(a.x), i = std::lround(a.y);
    if (i < 0 || j < 0 || i >= static_cast<long>(h) || j >= static_cast<long>(w)) continue;
    if (p.position.z >= depth[i * w + j]) continue;
    depth[i * w + j] = p.position.z;
    const Vec2 b = project(at_time(p, s.dt), s.rig);
    gt.data(i, j, 0) = static_cast<float>(b.x - a.x);
    gt.data(i, j, 1) = static_cast<float>(b.y - a.y);
    gt.valid(i, j) = 1;
  }
  return gt;
}

DisplacementField ground_truth_disparity(const SyntheticScene& s) {
  const auto h = s.rig.height, w = s.rig.width;
  auto gt = DisplacementField::zeros(MatchMode::Disparity, h, w);
  gt.valid = Mask({h, w}, 0);
  std::vector<double> depth(h * w, std::numeric_limits<double>::infinity());
  for (const auto& plane : s.planes)
    for (std::size_t i = 0; i < h * w; ++i)
      if (plane.depth < depth[i]) depth[i] = plane.depth;
  for (std::size_t n = 0; n < s.explicit_points; ++n) {
    const auto& p = s.points[n].point;
    const Vec2 a = project(p, s.rig);
    const auto j = std::lround(a.x), i = std::lround(a.y);
    if (i < 0 || j < 0 || i >= static_cast<long>(h) || j >= static_cast<long>(w)) continue;
    depth[i * w + j] = std::min(depth[i * w + j], p.position.z);
  }
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!std::isfinite(depth[i])) continue;
    gt.data[i] = static_cast<float>(disparity_from_depth(depth[i], s.rig));
    gt.valid[i] = 1;
  }
  return gt;
}

SyntheticOutput render_synthetic(const SyntheticScene& s, std::uint64_t seed) {
  s.validate();
  SyntheticOutput out;
  out.left_t = empty_stream(s, 0.0);
  out.left_t2 = empty_stream(s, s.dt);
  out.right_t = empty_stream(s, 0.0);

  const auto w = static_cast<long>(s.rig.width), h = static_cast<long>(s.rig.height);
  std::vector<double> phase;
  std::vector<std::int8_t> polarity;
  for (std::size_t n = 0; n < s.points.size(); ++n) {
    const auto& tp = s.points[n];
    const auto count = static_cast<std::size_t>(std::floor(tp.rate * s.tau + 0.5));
    if (count == 0) continue;
    // A point fires at the same phases in every window and in both cameras,
    // so the streams differ only by the geometry.
    Rng rng(derive_seed(seed, n));
    phase.resize(count);
    polarity.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      phase[k] = (static_cast<double>(k) + rng.uniform()) / static_cast<double>(count);
      polarity[k] = rng.uniform() < 0.5 ? -1 : 1;
    }
    bool seen = false;
    auto emit = [&](EventStream& stream, double t0, bool right) {
      for (std::size_t k = 0; k < count; ++k) {
        const double t = t0 + s.tau * phase[k];
        const std::int8_t pol = polarity[k];
        const ScenePoint p = at_time(tp.point, t);
        if (!(p.position.z > 0.0)) {
          ++out.dropped_events;
          continue;
        }
        const Vec2 px = right ? project_right(p, s.rig) : project(p, s.rig);
        const long x = std::lround(px.x), y = std::lround(px.y);
        if (x < 0 || y < 0 || x >= w || y >= h) {
          ++out.dropped_events;
          continue;
        }
        seen = true;
        const auto us = static_cast<std::uint64_t>(std::llround(t * s.time_unit_us));
        stream.events.push_back({std::clamp(us, stream.t_start, stream.t_end),
                                 static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), pol});
      }
    };
    emit(out.left_t, 0.0, false);
    emit(out.left_t2, s.dt, false);
    emit(out.right_t, 0.0, true);
    if (!seen) ++out.dropped_points;
  }
  auto by_time = [](const Event& a, const Event& b) { return a.t < b.t; };
  for (auto* stream : {&out.left_t, &out.left_t2, &out.right_t})
    std::stable_sort(stream->events.begin(), stream->events.end(), by_time);

  out.gt_flow = ground_truth_flow(s);
  out.gt_disp = ground_truth_disparity(s);
  Mask hit({s.rig.height, s.rig.width}, 0);
  for (const auto& e : out.left_t.events) hit(e.y, e.x) = 1;
  for (std::size_t i = 0; i < hit.size(); ++i) {
    out.gt_flow.valid[i] &= hit[i];
    out.gt_disp.valid[i] &= hit[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

CostMap eval_matching_cost(const Tensor& f1, const Tensor& f2, const DisplacementField& d) {
  if (f1.ndim() != 3 || f1.dims() != f2.dims())
    throw ShapeError("feature maps differ: " + shape_string(f1.dims()) + " vs " + shape_string(f2.dims()));
  const auto h = f1.dim(0), w = f1.dim(1), c = f1.dim(2);
  if (d.height() != h || d.width() != w)
    throw ShapeError("displacement field does not match the feature grid");
  Tensor coords({h, w, 2});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (d.mode == MatchMode::Flow) {
        coords(i, j, 0) = static_cast<float>(j) + d.data(i, j, 0);
        coords(i, j, 1) = static_cast<float>(i) + d.data(i, j, 1);
      } else {
        coords(i, j, 0) = static_cast<float>(j) - d.data(i, j, 0);
        coords(i, j, 1) = static_cast<float>(i);
      }
    }
  auto sampled = bilinear_sample(f2, coords);
  CostMap out{Tensor({h, w}), std::move(sampled.valid)};
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (!out.valid(i, j)) continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double diff = f1(i, j, k) - sampled.values(i, j, k);
        acc += diff * diff;
      }
      out.residual(i, j) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace eventmatch
