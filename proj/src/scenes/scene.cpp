#include "wmmoe/scenes/scene.hpp"

#include <cmath>

namespace wmmoe::scenes {

std::string to_string(AgentClass c) {
  switch (c) {
    case AgentClass::Vehicle: return "vehicle";
    case AgentClass::Pedestrian: return "pedestrian";
    case AgentClass::Cyclist: return "cyclist";
  }
  return "vehicle";
}

AgentClass parse_agent_class(const std::string& name) {
  if (name == "vehicle") return AgentClass::Vehicle;
  if (name == "pedestrian") return AgentClass::Pedestrian;
  if (name == "cyclist") return AgentClass::Cyclist;
  throw std::invalid_argument("unknown agent class '" + name + "'");
}

int AgentTrack::observed_count() const {
  int n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

SchemaError::SchemaError(int line, std::string field, const std::string& message)
    : std::runtime_error((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) +
                         "field '" + field + "': " + message),
      line_(line),
      field_(std::move(field)),
      message_(message) {}

namespace {

void validate_track(const AgentTrack& t, const SceneConfig& config, const std::string& where) {
  if (t.states.size() != static_cast<std::size_t>(config.history_frames)) {
    throw SchemaError(0, where + ".states",
                      "expected " + std::to_string(config.history_frames) + " frames, got " +
                          std::to_string(t.states.size()));
  }
  if (t.mask.size() != t.states.size()) {
    throw SchemaError(0, where + ".mask", "length " + std::to_string(t.mask.size()) +
                                              " does not match states");
  }
  for (std::size_t f = 0; f < t.states.size(); ++f) {
    for (double v : t.states[f]) {
      if (!std::isfinite(v)) throw SchemaError(0, where + ".states", "non-finite value");
      if (t.mask[f] == 0 && v != 0.0) {
        throw SchemaError(0, where + ".states",
                          "unobserved frame " + std::to_string(f) + " must hold zeros");
      }
    }
    if (t.mask[f] > 1) throw SchemaError(0, where + ".mask", "entries must be 0 or 1");
  }
}

}  // namespace

void validate(const Scene& scene, const SceneConfig& config) {
  if (scene.scene_id.empty()) throw SchemaError(0, "scene_id", "must be non-empty");
  validate_track(scene.target, config, "target");
  for (std::size_t i = 0; i < scene.neighbors.size(); ++i) {
    validate_track(scene.neighbors[i], config, "neighbors[" + std::to_string(i) + "]");
  }
  for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
    const auto& pts = scene.lanes[i].points;
    const std::string where = "lanes[" + std::to_string(i) + "].points";
    if (pts.size() < 2) throw SchemaError(0, where, "a lane needs at least 2 points");
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (!std::isfinite(pts[k][0]) || !std::isfinite(pts[k][1])) {
        throw SchemaError(0, where, "non-finite point");
      }
      if (k > 0 && pts[k] == pts[k - 1]) {
        throw SchemaError(0, where, "consecutive points " + std::to_string(k - 1) + " and " +
                                        std::to_string(k) + " coincide");
      }
    }
  }
  if (scene.future.size() != static_cast<std::size_t>(config.future_steps)) {
    throw SchemaError(0, "future", "expected " + std::to_string(config.future_steps) +
                                       " steps, got " + std::to_string(scene.future.size()));
  }
  for (const auto& p : scene.future) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw SchemaError(0, "future", "non-finite point");
  }
  if (scene.bev) {
    const auto& b = *scene.bev;
    if (b.channels < 1 || b.height < 1 || b.width < 1 ||
        b.values.size() != static_cast<std::size_t>(b.channels) * b.height * b.width) {
      throw SchemaError(0, "bev", "values do not match channels x height x width");
    }
    for (float v : b.values) {
      if (!(v >= 0.0f && v <= 1.0f)) throw SchemaError(0, "bev", "values must lie in [0, 1]");
    }
    if (!(b.m_per_px > 0)) throw SchemaError(0, "bev", "m_per_px must be positive");
  }
}

}  // namespace wmmoe::scenes
