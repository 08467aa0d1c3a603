#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eventmatch/displacement.hpp"
#include "eventmatch/events.hpp"

namespace eventmatch {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }

// Rectified stereo pair. The right camera center sits `baseline` meters along
// +X from the left one; f_prime is the focal length in pixels.
struct CameraRig {
  double f_prime = 1.0;
  double baseline = 0.0;
  std::size_t width = 1;
  std::size_t height = 1;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;
};

struct ScenePoint {
  Vec3 position;  // meters, left-camera frame
  Vec3 velocity;  // meters per unit time
};

// Pinhole projection into the left view: f' (X, Y) / Z + (cx, cy).
Vec2 project(const ScenePoint& p, const CameraRig& rig);
// Same point seen from the right camera.
Vec2 project_right(const ScenePoint& p, const CameraRig& rig);

// Instantaneous image velocity f' (dX, dY) / Z - f' (X, Y) dZ / Z^2.
Vec2 flow_from_motion(const ScenePoint& p, const CameraRig& rig);

// D = f' * baseline / Z.
double disparity_from_depth(double z, const CameraRig& rig);

struct StereoFlow {
  Vec2 left;
  Vec2 right;
};

// Image velocities of the same point in both views. The vertical components
// agree exactly and right.x - left.x = f' * baseline * dZ / Z^2.
StereoFlow stereo_flow_pair(const ScenePoint& p, const CameraRig& rig);

struct RateIdentity {
  double lhs = 0.0;  // (d_x^R - d_x^L) over the step
  double rhs = 0.0;  // D_t - D_{t+tau} from the depths at both ends
};

// Both sides of the horizontal disparity-rate identity for a step of length
// tau. They agree to first order in dZ * tau / Z.
RateIdentity disparity_rate_identity(const ScenePoint& p, const CameraRig& rig, double tau = 1.0);

// ---------------------------------------------------------------------------
// Synthetic stereo event scenes.

struct TexturedPoint {
  ScenePoint point;
  double rate = 0.0;  // events per unit time
};

// Fronto-parallel textured plane. Points sit on a regular lattice with
// `density` points per square pixel (measured at time 0); each point's rate
// is `rate` times a smooth random texture value in [0, 1] whose feature size
// is about `texture_scale` pixels.
struct PlanePrimitive {
  double depth = 10.0;
  Vec3 velocity;
  double density = 4.0;
  double rate = 300.0;
  double texture_scale = 8.0;
  std::uint64_t seed = 1;
};

// Scene file contents.
struct SceneDescription {
  CameraRig rig;
  double tau = 0.01;  // stereo accumulation window
  double dt = 0.1;    // flow interval
  double time_unit_us = 1e6;
  std::vector<PlanePrimitive> planes;
  std::vector<TexturedPoint> points;
};

// Expanded scene: every primitive turned into textured points. The planes are
// kept for analytic ground truth.
struct SyntheticScene {
  CameraRig rig;
  std::vector<TexturedPoint> points;
  std::vector<PlanePrimitive> planes;
  std::size_t explicit_points = 0;  // leading entries of `points` given individually
  double tau = 0.01;
  double dt = 0.1;
  double time_unit_us = 1e6;

  void validate() const;
};

// Key-value text: one "key value" per line for f_prime, baseline, width,
// height, cx, cy, tau, dt, time_unit_us; primitives as
//   plane depth=Z velocity=vx,vy,vz density=n rate=r texture=s seed=k
//   point position=X,Y,Z velocity=vx,vy,vz rate=r
// '#' starts a comment. Throws ParseError with the line number.
SceneDescription parse_scene(const std::string& text);
std::string write_scene(const SceneDescription& desc);

// Expands primitives into textured points. Plane lattices cover the view at
// both window ends and in both cameras.
SyntheticScene build_scene(const SceneDescription& desc);

struct SyntheticOutput {
  EventStream left_t;   // left camera, [0, tau]
  EventStream left_t2;  // left camera, [dt, dt + tau]
  EventStream right_t;  // right camera, [0, tau]
  DisplacementField gt_flow;  // left image, displacement over dt
  DisplacementField gt_disp;  // left image, D = f' B / Z at time 0
  std::size_t dropped_events = 0;  // emitted outside the sensor
  std::size_t dropped_points = 0;  // never visible in any stream
};

// Event times are stratified-jittered within the window using `seed`. Each
// point keeps its phases and polarities across all three streams; ground
// truth depends only on the scene. Validity marks left-image pixels that
// received at least one event in left_t.
SyntheticOutput render_synthetic(const SyntheticScene& scene, std::uint64_t seed);

// Analytic ground truth for the visible surface at each left pixel. Pixels not
// covered by any plane stay zero and invalid.
DisplacementField ground_truth_flow(const SyntheticScene& scene);
DisplacementField ground_truth_disparity(const SyntheticScene& scene);

// ---------------------------------------------------------------------------

struct CostMap {
  Tensor residual;  // H x W squared feature distance
  Mask valid;
};

// || F1(x, y) - F2(x', y') ||^2 with (x', y') = (x + u, y + v) for flow and
// (x - d, y) for disparity; F2 is sampled bilinearly and out-of-bounds samples
// are invalid.
CostMap eval_matching_cost(const Tensor& f1, const Tensor& f2, const DisplacementField& d);

}  // namespace eventmatch
