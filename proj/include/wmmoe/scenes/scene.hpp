#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmmoe::scenes {

enum class AgentClass { Vehicle, Pedestrian, Cyclist };

std::string to_string(AgentClass c);
/// Throws std::invalid_argument for unknown names.
AgentClass parse_agent_class(const std::string& name);

/// Per-frame kinematic state: x, y (m), vx, vy (m/s), ax, ay (m/s^2), yaw (rad).
using State = std::array<double, 7>;
using Point2 = std::array<double, 2>;

enum StateField { kX = 0, kY, kVx, kVy, kAx, kAy, kYaw };
inline constexpr int kStateDim = 7;

/// History of one agent. Slot 0 is the oldest frame, the last slot is t = 0.
/// Unobserved frames hold exact zeros.
struct AgentTrack {
  std::string id;
  AgentClass cls = AgentClass::Vehicle;
  std::vector<State> states;
  std::vector<std::uint8_t> mask;

  int frames() const { return static_cast<int>(states.size()); }
  bool observed(int slot) const { return mask[static_cast<std::size_t>(slot)] != 0; }
  bool observed_now() const { return !mask.empty() && mask.back() != 0; }
  const State& now() const { return states.back(); }
  int observed_count() const;
};

struct LanePolyline {
  std::string id;
  std::vector<Point2> points;
};

/// C x H x W raster with values in [0, 1]. Pixel (row, col) covers the square
/// whose center lies at x = (col + 0.5 - W/2) * m_per_px + origin_x,
/// y = (H/2 - row - 0.5) * m_per_px + origin_y in the raster's frame.
struct BevRaster {
  int channels = 0, height = 0, width = 0;
  double m_per_px = 1.0;
  double origin_x = 0.0, origin_y = 0.0;
  std::vector<float> values;
  /// True when rasterized from the vector scene rather than read from file.
  bool derived = false;

  float at(int c, int row, int col) const {
    return values[(static_cast<std::size_t>(c) * height + row) * width + col];
  }
  float& at(int c, int row, int col) {
    return values[(static_cast<std::size_t>(c) * height + row) * width + col];
  }
};

struct Scene {
  std::string scene_id;
  AgentTrack target;
  std::vector<AgentTrack> neighbors;
  std::vector<LanePolyline> lanes;
  std::optional<BevRaster> bev;
  std::vector<Point2> future;
  std::optional<std::string> label;
};

struct BevConfig {
  int channels = 3;
  int height = 64;
  int width = 64;
  double m_per_px = 1.0;
};

struct SceneConfig {
  /// Observed history slots per track.
  int history_frames = 5;
  /// Ground-truth future steps.
  int future_steps = 12;
  /// Seconds between frames.
  double dt = 0.5;
  BevConfig bev;
};

/// Schema or invariant violation while reading a corpus. `line` is 1-based, 0 when unknown.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(int line, std::string field, const std::string& message);
  int line() const { return line_; }
  const std::string& field() const { return field_; }
  const std::string& message() const { return message_; }

 private:
  int line_;
  std::string field_;
  std::string message_;
};

/// Checks every Scene invariant against `config`; throws SchemaError naming the field.
void validate(const Scene& scene, const SceneConfig& config);

}  // namespace wmmoe::scenes
