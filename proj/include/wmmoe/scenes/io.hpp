#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmmoe/scenes/scene.hpp"

namespace wmmoe::scenes {

/// Parses one scene object. Errors carry `line` and the offending field.
/// A missing `bev` is rasterized and flagged as derived.
Scene scene_from_json(const nlohmann::json& j, const SceneConfig& config, int line = 0);
/// Derived rasters are omitted so a read/write cycle reproduces the input.
nlohmann::json scene_to_json(const Scene& scene);

std::vector<Scene> read_corpus(std::istream& in, const SceneConfig& config);
std::vector<Scene> parse_corpus(const std::string& path, const SceneConfig& config);
void write_corpus(std::ostream& out, const std::vector<Scene>& scenes);
void write_corpus(const std::string& path, const std::vector<Scene>& scenes);

}  // namespace wmmoe::scenes
