#include <algorithm>
#include <cmath>
#include <numbers>

#include "wmmoe/corpus/corpus.hpp"
#include "wmmoe/nd/array.hpp"
#include "wmmoe/nd/rng.hpp"
#include "wmmoe/scenes/geometry.hpp"

namespace wmmoe::corpus {

using scenes::AgentClass;
using scenes::AgentTrack;
using scenes::Point2;
using scenes::Scene;
using scenes::State;

namespace {

constexpr double kPi = std::numbers::pi;

struct Motion {
  double speed_start = 0.0;
  double accel = 0.0;
  double speed_cap = 1e9;
  double yaw_rate = 0.0;
  // Turning stops once |heading change| reaches this.
  double turn_limit = 0.0;
};

struct Sampled {
  std::vector<State> frames;  // history then future, in the start frame
  std::vector<Point2> path;   // dense positions for lane building
};

// Integrates a unicycle from t0 = -(history-1)*dt through the last future step.
Sampled simulate(const Motion& m, int history, int future, double dt) {
  constexpr int kSub = 20;
  const double h = dt / kSub;
  double x = 0, y = 0, yaw = 0, v = m.speed_start;
  Sampled out;
  auto record = [&]() {
    const bool turning = std::abs(yaw) < m.turn_limit;
    const double w = turning ? m.yaw_rate : 0.0;
    const bool stopped = v <= 0.0 && m.accel < 0;
    const bool capped = v >= m.speed_cap && m.accel > 0;
    const double a = (stopped || capped) ? 0.0 : m.accel;
    const double c = std::cos(yaw), s = std::sin(yaw);
    out.frames.push_back({x, y, v * c, v * s, a * c - v * w * s, a * s + v * w * c, yaw});
  };
  const int total = history + future;
  for (int f = 0; f < total; ++f) {
    record();
    out.path.push_back({x, y});
    if (f + 1 == total) break;
    for (int k = 0; k < kSub; ++k) {
      const double w = std::abs(yaw) < m.turn_limit ? m.yaw_rate : 0.0;
      double a = m.accel;
      if ((v <= 0.0 && a < 0) || (v >= m.speed_cap && a > 0)) a = 0.0;
      // midpoint step for position
      const double ym = yaw + 0.5 * h * w;
      const double vm = std::clamp(v + 0.5 * h * a, 0.0, std::max(m.speed_cap, v));
      x += h * vm * std::cos(ym);
      y += h * vm * std::sin(ym);
      yaw += h * w;
      if (m.turn_limit > 0 && std::abs(yaw) > m.turn_limit) yaw = std::copysign(m.turn_limit, yaw);
      v = std::clamp(v + h * a, 0.0, std::max(m.speed_cap, v));
      if (k % 5 == 4) out.path.push_back({x, y});
    }
  }
  return out;
}

struct Rigid {
  double c = 1, s = 0, tx = 0, ty = 0, yaw = 0;
  Point2 point(double x, double y) const { return {c * x - s * y + tx, s * x + c * y + ty}; }
  Point2 vec(double x, double y) const { return {c * x - s * y, s * x + c * y}; }
  State state(const State& st) const {
    const auto p = point(st[scenes::kX], st[scenes::kY]);
    const auto v = vec(st[scenes::kVx], st[scenes::kVy]);
    const auto a = vec(st[scenes::kAx], st[scenes::kAy]);
    return {p[0], p[1], v[0], v[1], a[0], a[1], scenes::wrap_angle(st[scenes::kYaw] + yaw)};
  }
};

Rigid make_rigid(double yaw, double tx, double ty) {
  return {std::cos(yaw), std::sin(yaw), tx, ty, yaw};
}

// Inverse of the pose (x, y, yaw): maps that pose to the origin with heading 0.
Rigid inverse_pose(const State& st) {
  const double yaw = -st[scenes::kYaw];
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c, s, -(c * st[scenes::kX] - s * st[scenes::kY]), -(s * st[scenes::kX] + c * st[scenes::kY]), yaw};
}

void transform_track(AgentTrack& t, const Rigid& r) {
  for (std::size_t i = 0; i < t.states.size(); ++i)
    if (t.mask[i]) t.states[i] = r.state(t.states[i]);
}

void transform_scene(Scene& s, const Rigid& r) {
  transform_track(s.target, r);
  for (auto& n : s.neighbors) transform_track(n, r);
  for (auto& l : s.lanes)
    for (auto& p : l.points) p = r.point(p[0], p[1]);
  for (auto& p : s.future) p = r.point(p[0], p[1]);
}

Motion target_motion(ScenarioClass cls, const GeneratorConfig& g, double horizon, nd::RngStream& rng) {
  const auto& c = g.curation;
  Motion m;
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  switch (cls) {
    case ScenarioClass::Common:
      m.speed_start = rng.uniform(5.0, 15.0);
      m.accel = rng.uniform(-0.3, 0.3);
      break;
    case ScenarioClass::Turning: {
      const double lo = c.yaw_turn_rad + g.yaw_margin;
      const double hi = std::min(c.yaw_uturn_rad - g.yaw_margin, c.yaw_turn_rad + 0.35);
      m.speed_start = rng.uniform(3.0, 8.0);
      m.yaw_rate = sign * rng.uniform(lo, std::max(lo, hi)) / horizon;
      m.turn_limit = kPi / 2;
      break;
    }
    case ScenarioClass::UTurn: {
      const double lo = c.yaw_uturn_rad + g.yaw_margin;
      m.speed_start = rng.uniform(2.0, 5.0);
      m.yaw_rate = sign * rng.uniform(lo, lo + 0.45) / horizon;
      m.turn_limit = kPi;
      break;
    }
    case ScenarioClass::Congested:
      m.speed_start = rng.uniform(1.0, 4.0);
      break;
    case ScenarioClass::Braking: {
      const double now = rng.uniform(4.0, 8.0);
      m.accel = rng.uniform(c.brake_accel_mps2 - 2.5, c.brake_accel_mps2 - g.accel_margin);
      m.speed_start = now - m.accel * horizon;
      break;
    }
    case ScenarioClass::Acceleration: {
      m.accel = rng.uniform(c.accel_mps2 + g.accel_margin, c.accel_mps2 + 2.0);
      m.speed_start = rng.uniform(1.0, 6.0);
      m.speed_cap = 25.0;
      break;
    }
  }
  return m;
}

AgentTrack straight_agent(const std::string& id, AgentClass cls, double x, double y, double heading,
                          double speed, int history, double dt) {
  AgentTrack t;
  t.id = id;
  t.cls = cls;
  const double vx = speed * std::cos(heading), vy = speed * std::sin(heading);
  for (int f = 0; f < history; ++f) {
    const double time = (f - (history - 1)) * dt;
    t.states.push_back({x + vx * time, y + vy * time, vx, vy, 0.0, 0.0, heading});
    t.mask.push_back(1);
  }
  return t;
}

void mask_leading(AgentTrack& t, int k) {
  for (int f = 0; f < k && f < t.frames(); ++f) {
    t.states[static_cast<std::size_t>(f)] = {};
    t.mask[static_cast<std::size_t>(f)] = 0;
  }
}

std::vector<AgentTrack> sparse_neighbors(nd::RngStream& rng, int history, double dt) {
  std::vector<AgentTrack> out;
  const int n = 2 + static_cast<int>(rng.below(7));
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const AgentClass cls = u < 0.8 ? AgentClass::Vehicle : (u < 0.95 ? AgentClass::Pedestrian : AgentClass::Cyclist);
    double speed = 0;
    double heading = rng.uniform(-kPi, kPi);
    if (cls == AgentClass::Vehicle) {
      speed = rng.uniform(0.0, 12.0);
      heading = rng.bernoulli(0.5) ? rng.normal(0.0, 0.1) : rng.normal(kPi, 0.1);
    } else if (cls == AgentClass::Pedestrian) {
      speed = rng.uniform(0.5, 1.8);
    } else {
      speed = rng.uniform(2.0, 6.0);
    }
    auto t = straight_agent("n" + std::to_string(i), cls, rng.uniform(-35.0, 35.0), rng.uniform(-20.0, 20.0),
                            heading, speed, history, dt);
    if (rng.bernoulli(0.3)) mask_leading(t, 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(history - 1))));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<AgentTrack> congested_neighbors(const CurationConfig& c, nd::RngStream& rng, int history, double dt) {
  std::vector<AgentTrack> out;
  auto add = [&](AgentClass cls, double x, double y, double heading, double speed) {
    auto t = straight_agent("n" + std::to_string(out.size()), cls, x, y, heading, speed, history, dt);
    if (rng.bernoulli(0.2)) mask_leading(t, 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(history - 1))));
    out.push_back(std::move(t));
  };
  if (rng.bernoulli(0.5)) {
    // the target counts as one vehicle, so this many neighbors exceed the threshold
    const int n = c.congested_vehicles + static_cast<int>(rng.below(10));
    for (int i = 0; i < n; ++i) {
      const double lane = 3.5 * static_cast<double>(static_cast<int>(rng.below(5)) - 2);
      add(AgentClass::Vehicle, rng.uniform(-40.0, 40.0), lane + rng.normal(0.0, 0.3), rng.normal(0.0, 0.05),
          rng.uniform(0.0, 3.0));
    }
  } else {
    const int n = c.congested_pedestrians + 1 + static_cast<int>(rng.below(10));
    for (int i = 0; i < n; ++i) {
      add(AgentClass::Pedestrian, rng.uniform(-25.0, 25.0), rng.uniform(-25.0, 25.0), rng.uniform(-kPi, kPi),
          rng.uniform(0.5, 1.5));
    }
    const int v = static_cast<int>(rng.below(5));
    for (int i = 0; i < v; ++i) add(AgentClass::Vehicle, rng.uniform(-30.0, 30.0), 3.5, kPi, rng.uniform(0.0, 3.0));
  }
  return out;
}

std::vector<Point2> resample(const std::vector<Point2>& path, double spacing) {
  std::vector<Point2> out{path.front()};
  double carry = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const double dx = path[i][0] - path[i - 1][0], dy = path[i][1] - path[i - 1][1];
    const double len = std::hypot(dx, dy);
    if (len <= 0) continue;
    double at = spacing - carry;
    while (at <= len) {
      out.push_back({path[i - 1][0] + dx * at / len, path[i - 1][1] + dy * at / len});
      at += spacing;
    }
    carry = len - (at - spacing);
  }
  return out;
}

std::vector<scenes::LanePolyline> build_lanes(const std::vector<Point2>& path, nd::RngStream& rng) {
  // extend 15 m past both ends so the lane covers standing starts
  std::vector<Point2> p;
  auto ext = [](const Point2& a, const Point2& b, double d) {
    const double len = std::hypot(a[0] - b[0], a[1] - b[1]);
    if (len < 1e-9) return a;
    return Point2{a[0] + (a[0] - b[0]) / len * d, a[1] + (a[1] - b[1]) / len * d};
  };
  std::vector<Point2> dense;
  for (const auto& q : path)
    if (dense.empty() || std::hypot(q[0] - dense.back()[0], q[1] - dense.back()[1]) > 1e-6) dense.push_back(q);
  if (dense.size() < 2) dense.push_back({dense[0][0] + 1.0, dense[0][1]});
  p.push_back(ext(dense[0], dense[1], 15.0));
  p.insert(p.end(), dense.begin(), dense.end());
  p.push_back(ext(dense[dense.size() - 1], dense[dense.size() - 2], 15.0));

  double length = 0;
  for (std::size_t i = 1; i < p.size(); ++i) length += std::hypot(p[i][0] - p[i - 1][0], p[i][1] - p[i - 1][1]);
  const auto center = resample(p, std::max(4.0, length / 15.0));

  const int count = 1 + static_cast<int>(rng.below(3));
  const double offsets[] = {0.0, 3.5, -3.5};
  std::vector<scenes::LanePolyline> lanes;
  for (int l = 0; l < count; ++l) {
    scenes::LanePolyline lane;
    lane.id = "lane" + std::to_string(l);
    for (std::size_t i = 0; i < center.size(); ++i) {
      const auto& a = center[i == 0 ? 0 : i - 1];
      const auto& b = center[i + 1 < center.size() ? i + 1 : i];
      const double dx = b[0] - a[0], dy = b[1] - a[1];
      const double len = std::max(std::hypot(dx, dy), 1e-9);
      lane.points.push_back({center[i][0] - dy / len * offsets[l], center[i][1] + dx / len * offsets[l]});
    }
    lanes.push_back(std::move(lane));
  }
  return lanes;
}

}  // namespace

Scene generate_scene(ScenarioClass cls, const GeneratorConfig& config, std::uint64_t seed, std::int64_t index) {
  const int history = config.scene.history_frames;
  const int future = config.scene.future_steps;
  const double dt = config.scene.dt;
  if (history < 2 || future < 1 || !(dt > 0)) throw nd::ConfigError("generator needs history >= 2, future >= 1, dt > 0");
  const double horizon = (history - 1) * dt;

  const nd::RngStream base(seed, static_cast<std::uint64_t>(index));
  auto dyn = base.fork(1), agents = base.fork(2), map = base.fork(3), noise = base.fork(4), pose = base.fork(5);

  const Motion motion = target_motion(cls, config, horizon, dyn);
  Sampled sim = simulate(motion, history, future, dt);

  // express everything relative to the target's t=0 pose
  const Rigid to_now = inverse_pose(sim.frames[static_cast<std::size_t>(history - 1)]);

  Scene s;
  s.scene_id = "syn-" + std::to_string(seed) + "-" + std::to_string(index);
  s.target.id = "target";
  s.target.cls = AgentClass::Vehicle;
  for (int f = 0; f < history; ++f) {
    State st = to_now.state(sim.frames[static_cast<std::size_t>(f)]);
    st[scenes::kYaw] = scenes::wrap_angle(st[scenes::kYaw] + noise.normal(0.0, 0.003));
    s.target.states.push_back(st);
    s.target.mask.push_back(1);
  }
  for (int f = history; f < history + future; ++f) {
    const auto& st = sim.frames[static_cast<std::size_t>(f)];
    auto p = to_now.point(st[scenes::kX], st[scenes::kY]);
    p[0] += noise.normal(0.0, config.future_noise);
    p[1] += noise.normal(0.0, config.future_noise);
    s.future.push_back(p);
  }
  std::vector<Point2> path;
  for (const auto& q : sim.path) path.push_back(to_now.point(q[0], q[1]));
  s.lanes = build_lanes(path, map);

  if (cls == ScenarioClass::Congested) {
    s.neighbors = congested_neighbors(config.curation, agents, history, dt);
  } else {
    s.neighbors = sparse_neighbors(agents, history, dt);
    if (cls == ScenarioClass::Braking) {
      // a slower lead vehicle close enough to be a collision risk
      const double now = s.target.now()[scenes::kVx];
      const double lead = now * agents.uniform(0.0, 0.4);
      const double ttc = agents.uniform(1.0, 1.9);
      s.neighbors.push_back(straight_agent("lead", AgentClass::Vehicle, ttc * (now - lead), 0.0, 0.0, lead, history, dt));
    }
  }

  if (config.random_world_pose) {
    transform_scene(s, make_rigid(pose.uniform(-kPi, kPi), pose.uniform(-300.0, 300.0), pose.uniform(-300.0, 300.0)));
  }
  s.label = to_string(cls);
  s.bev = scenes::rasterize_bev(s, config.scene.bev);
  return s;
}

std::vector<Scene> generate_synthetic(const GeneratorConfig& config, std::int64_t n, std::uint64_t seed) {
  if (n < 0) throw nd::ConfigError("scene count must be non-negative");
  std::vector<std::pair<ScenarioClass, double>> weights;
  double total = 0;
  for (const auto& [cls, w] : config.mix) {
    if (!(w >= 0) || !std::isfinite(w)) throw nd::ConfigError("mix weight for " + to_string(cls) + " must be finite and >= 0");
    if (w > 0) weights.emplace_back(cls, w);
    total += w;
  }
  if (n > 0 && total <= 0) throw nd::ConfigError("mix weights sum to zero");
  nd::RngStream pick(seed, nd::fnv1a64("class-mix"));
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double u = pick.uniform() * total;
    ScenarioClass cls = weights.back().first;
    for (const auto& [c, w] : weights) {
      if (u < w) {
        cls = c;
        break;
      }
      u -= w;
    }
    out.push_back(generate_scene(cls, config, seed, i));
  }
  return out;
}

}  // namespace wmmoe::corpus
