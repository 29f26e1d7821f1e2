#pragma once

#include <string>
#include <vector>

#include "wmmoe/nd/array.hpp"
#include "wmmoe/scenes/scene.hpp"

namespace wmmoe::perception {

using nd::Array;
using nd::Index;

/// x, y, vx, vy, ax, ay, yaw, observed bit.
inline constexpr Index kAgentFeatures = 8;
/// x, y, dx, dy of a lane node.
inline constexpr Index kLaneFeatures = 4;
/// Positions, velocities and lane offsets are divided by this before encoding.
inline constexpr double kPositionScale = 10.0;

struct BatchConfig {
  scenes::SceneConfig scene;
  /// Neighbors beyond this count are dropped, farthest first.
  int max_neighbors = 64;
  /// Lane nodes beyond this count are dropped in polyline order.
  int max_lane_nodes = 64;
};

/// Padded model inputs for B scenes, each expressed in its target's reference
/// frame. Agent, lane and neighbor axes are padded to the batch maximum and to
/// at least one slot; padding is masked out.
struct SceneBatch {
  Index B = 0, T = 0, N = 0, M = 0, F = 0;
  Array<double> target;         // [B, T, 8]
  Array<double> neighbors;      // [B, N, T, 8]
  Array<double> neighbor_steps; // [B, N, T] per-frame observed bits
  Array<double> neighbor_mask;  // [B, N] agent has any observed frame
  Array<double> lane_nodes;     // [B, M, 4]
  Array<double> lane_mask;      // [B, M]
  Array<double> lane_adj;       // [B, M, M] consecutive nodes and self, valid nodes only
  Array<double> bev;            // [B, H, W, C]
  Array<double> future;         // [B, F, 2] meters, reference frame
  std::vector<std::string> ids;
  std::vector<std::string> labels;
};

/// Throws nd::ContractError if a target has no observed frame and
/// nd::DimensionError if a stored raster does not match the configured size.
SceneBatch make_batch(const std::vector<const scenes::Scene*>& scenes, const BatchConfig& config);
SceneBatch make_batch(const std::vector<scenes::Scene>& scenes, const BatchConfig& config);

}  // namespace wmmoe::perception
