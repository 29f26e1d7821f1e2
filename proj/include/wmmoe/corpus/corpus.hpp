#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wmmoe/scenes/scene.hpp"

namespace wmmoe::corpus {

enum class ScenarioClass { Turning, UTurn, Congested, Braking, Acceleration, Common };

inline constexpr std::array<ScenarioClass, 6> kAllClasses = {
    ScenarioClass::Turning, ScenarioClass::UTurn,        ScenarioClass::Congested,
    ScenarioClass::Braking, ScenarioClass::Acceleration, ScenarioClass::Common};

std::string to_string(ScenarioClass c);
/// Throws std::invalid_argument naming the unknown label.
ScenarioClass parse_scenario(const std::string& name);

struct CurationConfig {
  double ttc_risk_s = 2.0;
  double yaw_turn_rad = 0.3;
  double yaw_uturn_rad = 0.7;
  int congested_vehicles = 35;
  int congested_pedestrians = 50;
  double brake_accel_mps2 = -1.5;
  double accel_mps2 = 2.5;

  /// Throws nd::ConfigError when the thresholds are inconsistent.
  void validate() const;
};

inline constexpr double kInfiniteTtc = std::numeric_limits<double>::infinity();

/// Time to collision at t=0: center distance over the closing speed along the
/// joining line, or +inf when the agents are not closing. Both tracks must be
/// observed at t=0 (otherwise +inf).
double compute_ttc(const scenes::AgentTrack& a, const scenes::AgentTrack& b);
/// Smallest TTC between the target and any neighbor.
double min_ttc(const scenes::Scene& scene);
inline bool high_risk(double ttc, const CurationConfig& config) { return ttc < config.ttc_risk_s; }

/// Quantities the classifier thresholds.
struct ScenarioFeatures {
  /// Net heading change of the target over its observed history (rad, signed).
  double net_yaw = 0.0;
  /// Agents observed at t=0, target included.
  int vehicles = 0;
  int pedestrians = 0;
  /// Extreme longitudinal (heading-projected) target acceleration over history.
  double min_long_accel = 0.0;
  double max_long_accel = 0.0;
};

ScenarioFeatures scenario_features(const scenes::Scene& scene);

/// Precedence UTurn > Turning > Congested > Braking > Acceleration > Common.
ScenarioClass classify_scenario(const scenes::Scene& scene, const CurationConfig& config);

/// Zeroes `m` distinct observed history frames of every track (target and
/// neighbors) and clears their mask bits; tracks with fewer observed frames
/// lose all of them. The future is untouched. Frame choice is drawn from the
/// stream (seed, hash(scene_id)), so it does not depend on corpus order.
/// Throws nd::ConfigError unless 0 <= m < history length.
scenes::Scene drop_frames(const scenes::Scene& scene, int m, std::uint64_t seed,
                          const scenes::BevConfig& bev = {});

/// Exact per-class counts for a training subset.
struct SplitSpec {
  std::map<ScenarioClass, std::int64_t> counts;

  /// Imbalance presets 'a'..'e' (Common-only, full, and reduced-Common
  /// 20k / 5k / 1k), each count multiplied by `scale` and rounded.
  static SplitSpec preset(char name, double scale = 1.0);
};

/// Seeded per-class subsample with exact counts; kept scenes retain corpus
/// order. Scenes need a label. Throws std::invalid_argument naming the class
/// and the shortfall when a class has too few scenes.
std::vector<scenes::Scene> make_imbalance_splits(const std::vector<scenes::Scene>& corpus,
                                                 const SplitSpec& spec, std::uint64_t seed);

struct GeneratorConfig {
  scenes::SceneConfig scene;
  CurationConfig curation;
  /// Relative class frequencies for mixed corpora.
  std::map<ScenarioClass, double> mix = {
      {ScenarioClass::Turning, 1.0}, {ScenarioClass::UTurn, 1.0},        {ScenarioClass::Congested, 1.0},
      {ScenarioClass::Braking, 1.0}, {ScenarioClass::Acceleration, 1.0}, {ScenarioClass::Common, 1.0}};
  /// Minimum distance of generated yaw changes from the yaw thresholds (rad).
  double yaw_margin = 0.05;
  /// Minimum distance of generated accelerations from the accel thresholds (m/s^2).
  double accel_margin = 0.5;
  /// Std of the noise added to ground-truth future positions (m).
  double future_noise = 0.05;
  /// Place scenes at a random world pose (true) or already in the target frame.
  bool random_world_pose = true;
};

/// One labeled scene of class `cls`; `index` feeds the scene id and its stream.
scenes::Scene generate_scene(ScenarioClass cls, const GeneratorConfig& config, std::uint64_t seed,
                             std::int64_t index);

/// `n` scenes with classes drawn from `config.mix`.
std::vector<scenes::Scene> generate_synthetic(const GeneratorConfig& config, std::int64_t n,
                                              std::uint64_t seed);

/// Per-class counts of a labeled corpus; unlabeled scenes are classified.
std::map<ScenarioClass, std::int64_t> class_counts(const std::vector<scenes::Scene>& corpus,
                                                   const CurationConfig& config);

}  // namespace wmmoe::corpus
