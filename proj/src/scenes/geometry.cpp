#include "wmmoe/scenes/geometry.hpp"

#include <cmath>
#include <numbers>

#include "wmmoe/nd/array.hpp"

namespace wmmoe::scenes {

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  if (a > -pi && a <= pi) return a;
  a = std::fmod(a + pi, 2 * pi);
  if (a <= 0) a += 2 * pi;
  return a - pi;
}

namespace {

struct Pose {
  double x = 0, y = 0, c = 1, s = 0, yaw = 0;

  Point2 point(double px, double py) const {
    const double dx = px - x, dy = py - y;
    // Adding +0.0 folds -0.0 into +0.0 so repeated transforms print identically.
    return {c * dx + s * dy + 0.0, -s * dx + c * dy + 0.0};
  }
  Point2 vector(double vx, double vy) const {
    return {c * vx + s * vy + 0.0, -s * vx + c * vy + 0.0};
  }
};

Pose pose_at(const State& st) {
  Pose p;
  p.x = st[kX];
  p.y = st[kY];
  p.yaw = st[kYaw];
  p.c = std::cos(p.yaw);
  p.s = std::sin(p.yaw);
  return p;
}

Pose reference_pose(const Scene& scene) {
  return scene.target.observed_now() ? pose_at(scene.target.now()) : Pose{};
}

AgentTrack transform_track(const AgentTrack& t, const Pose& pose) {
  AgentTrack out = t;
  for (std::size_t f = 0; f < t.states.size(); ++f) {
    if (!t.mask[f]) continue;
    const State& s = t.states[f];
    State& o = out.states[f];
    const auto p = pose.point(s[kX], s[kY]);
    const auto v = pose.vector(s[kVx], s[kVy]);
    const auto a = pose.vector(s[kAx], s[kAy]);
    o = {p[0], p[1], v[0], v[1], a[0], a[1], wrap_angle(s[kYaw] - pose.yaw)};
  }
  return out;
}

struct Footprint {
  double length, width;
};

Footprint footprint(AgentClass c) {
  switch (c) {
    case AgentClass::Vehicle: return {4.6, 1.9};
    case AgentClass::Cyclist: return {1.8, 0.7};
    case AgentClass::Pedestrian: return {0.7, 0.7};
  }
  return {4.6, 1.9};
}

void draw_footprint(BevRaster& r, int channel, const AgentTrack& t, const Pose& pose) {
  if (!t.observed_now()) return;
  const State& s = t.now();
  const auto c = pose.point(s[kX], s[kY]);
  const double yaw = s[kYaw] - pose.yaw;
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const Footprint fp = footprint(t.cls);
  const double reach = 0.5 * std::hypot(fp.length, fp.width);
  const auto lo = to_pixel(r, c[0] - reach, c[1] + reach);
  const auto hi = to_pixel(r, c[0] + reach, c[1] - reach);
  for (int row = std::max(0, lo[0]); row <= std::min(r.height - 1, hi[0]); ++row) {
    for (int col = std::max(0, lo[1]); col <= std::min(r.width - 1, hi[1]); ++col) {
      const double px = (col + 0.5 - r.width / 2.0) * r.m_per_px + r.origin_x - c[0];
      const double py = (r.height / 2.0 - row - 0.5) * r.m_per_px + r.origin_y - c[1];
      const double along = cy * px + sy * py;
      const double across = -sy * px + cy * py;
      if (std::abs(along) <= fp.length / 2 && std::abs(across) <= fp.width / 2) {
        r.at(channel, row, col) = 1.0f;
      }
    }
  }
  const auto center = to_pixel(r, c[0], c[1]);
  if (center[0] >= 0 && center[0] < r.height && center[1] >= 0 && center[1] < r.width) {
    r.at(channel, center[0], center[1]) = 1.0f;
  }
}

void draw_line(BevRaster& r, std::array<int, 2> a, std::array<int, 2> b) {
  int x0 = a[1], y0 = a[0];
  const int x1 = b[1], y1 = b[0];
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (y0 >= 0 && y0 < r.height && x0 >= 0 && x0 < r.width) r.at(0, y0, x0) = 1.0f;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

std::array<int, 2> to_pixel(const BevRaster& r, double x, double y) {
  const int col = static_cast<int>(std::floor((x - r.origin_x) / r.m_per_px + r.width / 2.0));
  const int row = static_cast<int>(std::floor(r.height / 2.0 - (y - r.origin_y) / r.m_per_px));
  return {row, col};
}

namespace {

Scene transform_scene(const Scene& scene, const Pose& pose, const BevConfig& bev) {
  Scene out = scene;
  out.target = transform_track(scene.target, pose);
  for (std::size_t i = 0; i < scene.neighbors.size(); ++i) {
    out.neighbors[i] = transform_track(scene.neighbors[i], pose);
  }
  for (auto& lane : out.lanes)
    for (auto& p : lane.points) p = pose.point(p[0], p[1]);
  for (auto& p : out.future) p = pose.point(p[0], p[1]);
  if (scene.bev) out.bev = rasterize_bev(out, bev);
  return out;
}

}  // namespace

Scene to_target_frame(const Scene& scene, const BevConfig& bev) {
  if (!scene.target.observed_now()) {
    throw nd::ContractError("scene " + scene.scene_id + ": target frame t=0 is unobserved");
  }
  return transform_scene(scene, reference_pose(scene), bev);
}

int latest_observed(const AgentTrack& track) {
  for (int f = track.frames() - 1; f >= 0; --f)
    if (track.observed(f)) return f;
  return -1;
}

Scene to_reference_frame(const Scene& scene, const BevConfig& bev) {
  const int slot = latest_observed(scene.target);
  if (slot < 0) throw nd::ContractError("scene " + scene.scene_id + ": target has no observed frame");
  return transform_scene(scene, pose_at(scene.target.states[static_cast<std::size_t>(slot)]), bev);
}

BevRaster rasterize_bev(const Scene& scene, const BevConfig& config) {
  if (config.height < 8 || config.width < 8 || config.channels < 3) {
    throw nd::ConfigError("raster needs at least 3 channels and 8x8 pixels");
  }
  BevRaster r;
  r.channels = config.channels;
  r.height = config.height;
  r.width = config.width;
  r.m_per_px = config.m_per_px;
  r.values.assign(static_cast<std::size_t>(r.channels) * r.height * r.width, 0.0f);
  r.derived = true;
  const Pose pose = reference_pose(scene);
  for (const auto& lane : scene.lanes) {
    for (std::size_t k = 1; k < lane.points.size(); ++k) {
      const auto a = pose.point(lane.points[k - 1][0], lane.points[k - 1][1]);
      const auto b = pose.point(lane.points[k][0], lane.points[k][1]);
      draw_line(r, to_pixel(r, a[0], a[1]), to_pixel(r, b[0], b[1]));
    }
  }
  for (const auto& n : scene.neighbors) draw_footprint(r, 1, n, pose);
  draw_footprint(r, 2, scene.target, pose);
  return r;
}

}  // namespace wmmoe::scenes
