#include "wmmoe/scenes/io.hpp"

#include <fstream>
#include <sstream>

#include "wmmoe/scenes/geometry.hpp"

namespace wmmoe::scenes {

using nlohmann::json;

namespace {

const json& require(const json& j, const char* key, const std::string& where, int line) {
  if (!j.is_object() || !j.contains(key)) {
    throw SchemaError(line, where.empty() ? key : where + "." + key, "missing");
  }
  return j.at(key);
}

double number(const json& j, const std::string& field, int line) {
  if (!j.is_number()) throw SchemaError(line, field, "expected a number");
  return j.get<double>();
}

std::string id_string(const json& j, const std::string& field, int line) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw SchemaError(line, field, "expected a string or integer id");
}

AgentTrack track_from_json(const json& j, const std::string& where, int line) {
  if (!j.is_object()) throw SchemaError(line, where, "expected an object");
  AgentTrack t;
  t.id = id_string(require(j, "id", where, line), where + ".id", line);
  const json& cls = require(j, "class", where, line);
  if (!cls.is_string()) throw SchemaError(line, where + ".class", "expected a string");
  try {
    t.cls = parse_agent_class(cls.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(line, where + ".class", e.what());
  }
  const json& states = require(j, "states", where, line);
  if (!states.is_array()) throw SchemaError(line, where + ".states", "expected an array");
  for (const auto& s : states) {
    if (!s.is_array() || s.size() != kStateDim) {
      throw SchemaError(line, where + ".states", "each state must be [x,y,vx,vy,ax,ay,yaw]");
    }
    State st{};
    for (int k = 0; k < kStateDim; ++k) st[k] = number(s[k], where + ".states", line);
    t.states.push_back(st);
  }
  const json& mask = require(j, "mask", where, line);
  if (!mask.is_array()) throw SchemaError(line, where + ".mask", "expected an array");
  for (const auto& m : mask) {
    if (!m.is_number_integer() && !m.is_boolean()) {
      throw SchemaError(line, where + ".mask", "entries must be 0 or 1");
    }
    const long long v = m.is_boolean() ? (m.get<bool>() ? 1 : 0) : m.get<long long>();
    if (v != 0 && v != 1) throw SchemaError(line, where + ".mask", "entries must be 0 or 1");
    t.mask.push_back(static_cast<std::uint8_t>(v));
  }
  return t;
}

json track_to_json(const AgentTrack& t) {
  json states = json::array();
  for (const auto& s : t.states) states.push_back(json(std::vector<double>(s.begin(), s.end())));
  json mask = json::array();
  for (auto m : t.mask) mask.push_back(static_cast<int>(m));
  return json{{"id", t.id}, {"class", to_string(t.cls)}, {"states", states}, {"mask", mask}};
}

Point2 point_from_json(const json& p, const std::string& field, int line) {
  if (!p.is_array() || p.size() != 2) throw SchemaError(line, field, "points must be [x, y]");
  return {number(p[0], field, line), number(p[1], field, line)};
}

}  // namespace

Scene scene_from_json(const json& j, const SceneConfig& config, int line) {
  if (!j.is_object()) throw SchemaError(line, "scene", "expected a JSON object");
  Scene s;
  s.scene_id = id_string(require(j, "scene_id", "", line), "scene_id", line);
  s.target = track_from_json(require(j, "target", "", line), "target", line);
  const json& neighbors = require(j, "neighbors", "", line);
  if (!neighbors.is_array()) throw SchemaError(line, "neighbors", "expected an array");
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    s.neighbors.push_back(track_from_json(neighbors[i], "neighbors[" + std::to_string(i) + "]", line));
  }
  const json& lanes = require(j, "lanes", "", line);
  if (!lanes.is_array()) throw SchemaError(line, "lanes", "expected an array");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const std::string where = "lanes[" + std::to_string(i) + "]";
    LanePolyline lane;
    lane.id = id_string(require(lanes[i], "id", where, line), where + ".id", line);
    const json& pts = require(lanes[i], "points", where, line);
    if (!pts.is_array()) throw SchemaError(line, where + ".points", "expected an array");
    for (const auto& p : pts) lane.points.push_back(point_from_json(p, where + ".points", line));
    s.lanes.push_back(std::move(lane));
  }
  const json& future = require(j, "future", "", line);
  if (!future.is_array()) throw SchemaError(line, "future", "expected an array");
  for (const auto& p : future) s.future.push_back(point_from_json(p, "future", line));
  if (j.contains("label") && !j.at("label").is_null()) {
    if (!j.at("label").is_string()) throw SchemaError(line, "label", "expected a string");
    s.label = j.at("label").get<std::string>();
  }
  if (j.contains("bev") && !j.at("bev").is_null()) {
    const json& b = j.at("bev");
    BevRaster r;
    try {
      r.channels = b.at("channels").get<int>();
      r.height = b.at("height").get<int>();
      r.width = b.at("width").get<int>();
      r.m_per_px = b.at("m_per_px").get<double>();
      r.origin_x = b.at("origin").at(0).get<double>();
      r.origin_y = b.at("origin").at(1).get<double>();
      r.values = b.at("values").get<std::vector<float>>();
    } catch (const json::exception& e) {
      throw SchemaError(line, "bev", e.what());
    }
    s.bev = std::move(r);
  }
  try {
    validate(s, config);
  } catch (const SchemaError& e) {
    throw SchemaError(line, e.field(), e.message());
  }
  if (!s.bev) {
    s.bev = rasterize_bev(s, config.bev);
  }
  return s;
}

json scene_to_json(const Scene& s) {
  json j;
  j["scene_id"] = s.scene_id;
  j["target"] = track_to_json(s.target);
  json neighbors = json::array();
  for (const auto& n : s.neighbors) neighbors.push_back(track_to_json(n));
  j["neighbors"] = neighbors;
  json lanes = json::array();
  for (const auto& l : s.lanes) {
    json pts = json::array();
    for (const auto& p : l.points) pts.push_back({p[0], p[1]});
    lanes.push_back(json{{"id", l.id}, {"points", pts}});
  }
  j["lanes"] = lanes;
  if (s.bev && !s.bev->derived) {
    const auto& b = *s.bev;
    j["bev"] = json{{"channels", b.channels}, {"height", b.height},     {"width", b.width},
                    {"m_per_px", b.m_per_px}, {"origin", {b.origin_x, b.origin_y}},
                    {"values", b.values}};
  }
  json future = json::array();
  for (const auto& p : s.future) future.push_back({p[0], p[1]});
  j["future"] = future;
  if (s.label) j["label"] = *s.label;
  return j;
}

std::vector<Scene> read_corpus(std::istream& in, const SceneConfig& config) {
  std::vector<Scene> out;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError(line, "<json>", e.what());
    }
    out.push_back(scene_from_json(j, config, line));
  }
  return out;
}

std::vector<Scene> parse_corpus(const std::string& path, const SceneConfig& config) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  return read_corpus(in, config);
}

void write_corpus(std::ostream& out, const std::vector<Scene>& scenes) {
  for (const auto& s : scenes) out << scene_to_json(s).dump() << '\n';
}

void write_corpus(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  write_corpus(out, scenes);
}

}  // namespace wmmoe::scenes
