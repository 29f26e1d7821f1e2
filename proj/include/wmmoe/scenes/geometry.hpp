#pragma once

#include "wmmoe/scenes/scene.hpp"

namespace wmmoe::scenes {

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Rigid transform placing the target's t=0 position at the origin with yaw 0.
/// Positions, velocities, accelerations, yaws, lanes and the future are all
/// mapped; unobserved frames stay zero. Any stored raster is re-derived.
/// Throws nd::ContractError if the target's t=0 frame is unobserved.
Scene to_target_frame(const Scene& scene, const BevConfig& bev = {});

/// Slot of the most recent observed frame, -1 if none.
int latest_observed(const AgentTrack& track);

/// Like to_target_frame but anchored at the target's most recent observed
/// frame, so scenes whose t=0 frame was dropped can still be normalized.
/// Throws nd::ContractError if the target has no observed frame.
Scene to_reference_frame(const Scene& scene, const BevConfig& bev = {});

/// Top-down raster centered on the target's t=0 pose (identity pose if that
/// frame is unobserved). Channel 0: lane polylines as 1-pixel lines.
/// Channel 1: neighbor footprints at t=0. Channel 2: target footprint at t=0.
/// Extra channels stay zero. Requires height, width >= 8.
BevRaster rasterize_bev(const Scene& scene, const BevConfig& config);

/// Pixel (row, col) containing point (x, y) of the raster frame; may lie outside.
std::array<int, 2> to_pixel(const BevRaster& raster, double x, double y);

}  // namespace wmmoe::scenes
