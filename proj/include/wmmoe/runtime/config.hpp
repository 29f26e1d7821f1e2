#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmmoe/corpus/corpus.hpp"
#include "wmmoe/decision/decision.hpp"
#include "wmmoe/memory/memory.hpp"
#include "wmmoe/objectives/losses.hpp"
#include "wmmoe/perception/batch.hpp"
#include "wmmoe/perception/encoder.hpp"

namespace wmmoe::runtime {

/// Training and model settings. JSON and CLI flags use these member names.
struct TrainConfig {
  double lr = 5e-4;
  int t_max = 150;
  double eta_min = 5e-6;
  int batch_size = 32;
  int epochs = 20;
  std::uint64_t seed = 1;
  int experts = 4;
  int blocks = 4;
  int modes = 10;
  int d_emb = 64;
  /// "nuscenes" (ADE + Laplace NLL + mode CE) or "rmse" (MSE + CE).
  std::string loss = "nuscenes";

  int heads = 4;
  double dropout = 0.1;
  int top_k = 0;
  bool dense = false;
  bool noise = true;
  int ssm_state = 8;
  int backbone_width = 128;
  int backbone_blocks = 2;
  int backbone_heads = 4;
  double grad_clip = 5.0;
  int max_neighbors = 64;
  int max_lane_nodes = 64;
  int bev_size = 64;
  double bev_m_per_px = 1.0;
  int history_frames = 5;
  int future_steps = 12;
  double dt = 0.5;
  double lambda_reg = 1.0;
  double lambda_cls = 0.5;
  double gamma_mse = 1.0;
  double gamma_ce = 1.0;
  int eval_batch_size = 64;

  corpus::CurationConfig curation;

  /// Throws nd::ConfigError naming the offending field.
  void validate() const;

  /// Smaller model and batch used by the CLI default and the acceptance runs.
  static TrainConfig desk();

  objectives::LossProfile loss_profile() const;
  objectives::LossWeights loss_weights() const;
  scenes::SceneConfig scene_config() const;
  perception::BatchConfig batch_config() const;
  perception::PerceptionConfig perception_config() const;
  memory::MemoryConfig memory_config() const;
  decision::DecisionConfig decision_config() const;
};

/// Flat object holding every TrainConfig and CurationConfig field.
nlohmann::json to_json(const TrainConfig& c);
/// Fields absent from `j` keep their value in `base`; unknown fields throw nd::ConfigError.
TrainConfig config_from_json(const nlohmann::json& j, const TrainConfig& base = {});
TrainConfig load_config(const std::string& path, const TrainConfig& base = {});
/// Applies textual overrides (field name -> value) with the JSON field types.
TrainConfig apply_overrides(const TrainConfig& base, const std::map<std::string, std::string>& overrides);
/// Names of every configurable field, in JSON order.
std::vector<std::string> config_fields();

}  // namespace wmmoe::runtime
