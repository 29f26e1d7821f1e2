#include <algorithm>
#include <cmath>

#include "wmmoe/corpus/corpus.hpp"
#include "wmmoe/nd/array.hpp"
#include "wmmoe/nd/rng.hpp"
#include "wmmoe/scenes/geometry.hpp"

namespace wmmoe::corpus {

using scenes::AgentTrack;
using scenes::Scene;

std::string to_string(ScenarioClass c) {
  switch (c) {
    case ScenarioClass::Turning: return "Turning";
    case ScenarioClass::UTurn: return "UTurn";
    case ScenarioClass::Congested: return "Congested";
    case ScenarioClass::Braking: return "Braking";
    case ScenarioClass::Acceleration: return "Acceleration";
    case ScenarioClass::Common: return "Common";
  }
  return "Common";
}

ScenarioClass parse_scenario(const std::string& name) {
  for (auto c : kAllClasses)
    if (to_string(c) == name) return c;
  throw std::invalid_argument("unknown scenario class '" + name + "'");
}

void CurationConfig::validate() const {
  if (!(ttc_risk_s > 0)) throw nd::ConfigError("ttc_risk_s must be positive");
  if (!(yaw_turn_rad > 0)) throw nd::ConfigError("yaw_turn_rad must be positive");
  if (!(yaw_uturn_rad > yaw_turn_rad)) throw nd::ConfigError("yaw_uturn_rad must exceed yaw_turn_rad");
  if (congested_vehicles < 0 || congested_pedestrians < 0) {
    throw nd::ConfigError("congestion counts must be non-negative");
  }
  if (!(brake_accel_mps2 < 0)) throw nd::ConfigError("brake_accel_mps2 must be negative");
  if (!(accel_mps2 > 0)) throw nd::ConfigError("accel_mps2 must be positive");
}

double compute_ttc(const AgentTrack& a, const AgentTrack& b) {
  if (!a.observed_now() || !b.observed_now()) return kInfiniteTtc;
  const auto& sa = a.now();
  const auto& sb = b.now();
  const double dx = sb[scenes::kX] - sa[scenes::kX];
  const double dy = sb[scenes::kY] - sa[scenes::kY];
  const double dist = std::hypot(dx, dy);
  if (dist == 0.0) return 0.0;
  const double rvx = sb[scenes::kVx] - sa[scenes::kVx];
  const double rvy = sb[scenes::kVy] - sa[scenes::kVy];
  const double closing = -(dx * rvx + dy * rvy) / dist;
  if (closing <= 1e-9) return kInfiniteTtc;
  return dist / closing;
}

double min_ttc(const Scene& scene) {
  double best = kInfiniteTtc;
  for (const auto& n : scene.neighbors) best = std::min(best, compute_ttc(scene.target, n));
  return best;
}

ScenarioFeatures scenario_features(const Scene& scene) {
  ScenarioFeatures f;
  const auto& t = scene.target;
  int prev = -1;
  bool any = false;
  for (int s = 0; s < t.frames(); ++s) {
    if (!t.observed(s)) continue;
    const auto& st = t.states[static_cast<std::size_t>(s)];
    if (prev >= 0) {
      f.net_yaw += scenes::wrap_angle(st[scenes::kYaw] - t.states[static_cast<std::size_t>(prev)][scenes::kYaw]);
    }
    prev = s;
    const double along = st[scenes::kAx] * std::cos(st[scenes::kYaw]) + st[scenes::kAy] * std::sin(st[scenes::kYaw]);
    if (!any) {
      f.min_long_accel = f.max_long_accel = along;
      any = true;
    } else {
      f.min_long_accel = std::min(f.min_long_accel, along);
      f.max_long_accel = std::max(f.max_long_accel, along);
    }
  }
  auto count = [&f](const AgentTrack& a) {
    if (!a.observed_now()) return;
    if (a.cls == scenes::AgentClass::Vehicle) ++f.vehicles;
    if (a.cls == scenes::AgentClass::Pedestrian) ++f.pedestrians;
  };
  count(t);
  for (const auto& n : scene.neighbors) count(n);
  return f;
}

ScenarioClass classify_scenario(const Scene& scene, const CurationConfig& config) {
  const ScenarioFeatures f = scenario_features(scene);
  const double turn = std::abs(f.net_yaw);
  if (turn > config.yaw_uturn_rad) return ScenarioClass::UTurn;
  if (turn > config.yaw_turn_rad) return ScenarioClass::Turning;
  if (f.vehicles > config.congested_vehicles || f.pedestrians > config.congested_pedestrians) {
    return ScenarioClass::Congested;
  }
  if (f.min_long_accel < config.brake_accel_mps2) return ScenarioClass::Braking;
  if (f.max_long_accel > config.accel_mps2) return ScenarioClass::Acceleration;
  return ScenarioClass::Common;
}

namespace {

void drop_track(AgentTrack& t, int m, nd::RngStream rng) {
  std::vector<int> slots;
  for (int s = 0; s < t.frames(); ++s)
    if (t.observed(s)) slots.push_back(s);
  const int k = std::min<int>(m, static_cast<int>(slots.size()));
  for (int i = 0; i < k; ++i) {
    const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(slots.size() - i)));
    std::swap(slots[static_cast<std::size_t>(i)], slots[static_cast<std::size_t>(j)]);
    const auto slot = static_cast<std::size_t>(slots[static_cast<std::size_t>(i)]);
    t.states[slot] = {};
    t.mask[slot] = 0;
  }
}

}  // namespace

Scene drop_frames(const Scene& scene, int m, std::uint64_t seed, const scenes::BevConfig& bev) {
  const int frames = scene.target.frames();
  if (m < 0 || m >= frames) {
    throw nd::ConfigError("frames to drop must lie in [0, " + std::to_string(frames - 1) + "], got " +
                          std::to_string(m));
  }
  if (m == 0) return scene;
  Scene out = scene;
  const nd::RngStream base(seed, nd::fnv1a64(scene.scene_id));
  drop_track(out.target, m, base.fork(0));
  for (std::size_t i = 0; i < out.neighbors.size(); ++i) drop_track(out.neighbors[i], m, base.fork(i + 1));
  if (!out.bev || out.bev->derived) out.bev = scenes::rasterize_bev(out, bev);
  return out;
}

SplitSpec SplitSpec::preset(char name, double scale) {
  auto n = [scale](double v) { return static_cast<std::int64_t>(std::llround(v * scale)); };
  SplitSpec s;
  const std::map<ScenarioClass, std::int64_t> corner = {{ScenarioClass::Turning, n(1070)},
                                                        {ScenarioClass::Congested, n(934)},
                                                        {ScenarioClass::Braking, n(782)},
                                                        {ScenarioClass::Acceleration, n(406)}};
  switch (name) {
    case 'a': s.counts = {{ScenarioClass::Common, n(46345)}}; break;
    case 'b': s.counts = corner; s.counts[ScenarioClass::Common] = n(46345); break;
    case 'c': s.counts = corner; s.counts[ScenarioClass::Common] = n(20000); break;
    case 'd': s.counts = corner; s.counts[ScenarioClass::Common] = n(5000); break;
    case 'e': s.counts = corner; s.counts[ScenarioClass::Common] = n(1000); break;
    default: throw nd::ConfigError(std::string("unknown split preset '") + name + "' (expected a-e)");
  }
  return s;
}

std::vector<Scene> make_imbalance_splits(const std::vector<Scene>& corpus, const SplitSpec& spec,
                                         std::uint64_t seed) {
  std::map<ScenarioClass, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].label) {
      throw std::invalid_argument("scene " + corpus[i].scene_id + " has no label; run curate first");
    }
    by_class[parse_scenario(*corpus[i].label)].push_back(i);
  }
  std::vector<char> keep(corpus.size(), 0);
  for (const auto& [cls, count] : spec.counts) {
    if (count < 0) throw std::invalid_argument("negative count for class " + to_string(cls));
    auto& idx = by_class[cls];
    if (static_cast<std::int64_t>(idx.size()) < count) {
      throw std::invalid_argument("class " + to_string(cls) + " has " + std::to_string(idx.size()) +
                                  " scenes, " + std::to_string(count) + " requested (short by " +
                                  std::to_string(count - static_cast<std::int64_t>(idx.size())) + ")");
    }
    nd::RngStream rng(seed, nd::fnv1a64(to_string(cls)));
    for (std::int64_t i = 0; i < count; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.below(idx.size() - static_cast<std::size_t>(i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
      keep[idx[static_cast<std::size_t>(i)]] = 1;
    }
  }
  std::vector<Scene> out;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (keep[i]) out.push_back(corpus[i]);
  return out;
}

std::map<ScenarioClass, std::int64_t> class_counts(const std::vector<Scene>& corpus,
                                                   const CurationConfig& config) {
  std::map<ScenarioClass, std::int64_t> out;
  for (auto c : kAllClasses) out[c] = 0;
  for (const auto& s : corpus) {
    ++out[s.label ? parse_scenario(*s.label) : classify_scenario(s, config)];
  }
  return out;
}

}  // namespace wmmoe::corpus
