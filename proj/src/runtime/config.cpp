#include "wmmoe/runtime/config.hpp"

#include <fstream>

namespace wmmoe::runtime {

#define WMMOE_TRAIN_FIELDS(X)                                                                                  \
  X(lr) X(t_max) X(eta_min) X(batch_size) X(epochs) X(seed) X(experts) X(blocks) X(modes) X(d_emb) X(loss)     \
  X(heads) X(dropout) X(top_k) X(dense) X(noise) X(ssm_state) X(backbone_width) X(backbone_blocks)             \
  X(backbone_heads) X(grad_clip) X(max_neighbors) X(max_lane_nodes) X(bev_size) X(bev_m_per_px)               \
  X(history_frames) X(future_steps) X(dt) X(lambda_reg) X(lambda_cls) X(gamma_mse) X(gamma_ce) X(eval_batch_size)

#define WMMOE_CURATION_FIELDS(X)                                                                   \
  X(ttc_risk_s) X(yaw_turn_rad) X(yaw_uturn_rad) X(congested_vehicles) X(congested_pedestrians) \
  X(brake_accel_mps2) X(accel_mps2)

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& message) {
  throw nd::ConfigError("config field '" + field + "': " + message);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0)) fail("lr", "must be > 0");
  if (!(eta_min > 0) || !(eta_min < lr)) fail("eta_min", "must satisfy 0 < eta_min < lr");
  if (t_max <= 0) fail("t_max", "must be > 0");
  if (batch_size <= 0) fail("batch_size", "must be > 0");
  if (eval_batch_size <= 0) fail("eval_batch_size", "must be > 0");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (experts <= 0) fail("experts", "must be > 0");
  if (blocks <= 0) fail("blocks", "must be > 0");
  if (modes <= 0) fail("modes", "must be > 0");
  if (d_emb <= 0 || d_emb % 2 != 0) fail("d_emb", "must be positive and even");
  if (heads <= 0 || d_emb % heads != 0) fail("heads", "must divide d_emb");
  if (loss != "nuscenes" && loss != "rmse") fail("loss", "must be 'nuscenes' or 'rmse', got '" + loss + "'");
  if (top_k < 0 || top_k > experts) fail("top_k", "must be in [0, experts]");
  if (dropout < 0 || dropout >= 1) fail("dropout", "must be in [0, 1)");
  if (backbone_width <= 0 || backbone_width % 2 != 0) fail("backbone_width", "must be positive and even");
  if (backbone_heads <= 0 || backbone_width % backbone_heads != 0) fail("backbone_heads", "must divide backbone_width");
  if (backbone_blocks < 0) fail("backbone_blocks", "must be >= 0");
  if (ssm_state <= 0) fail("ssm_state", "must be > 0");
  if (!(grad_clip > 0)) fail("grad_clip", "must be > 0");
  if (max_neighbors <= 0) fail("max_neighbors", "must be > 0");
  if (max_lane_nodes <= 0) fail("max_lane_nodes", "must be > 0");
  if (bev_size < 8) fail("bev_size", "must be >= 8");
  if (!(bev_m_per_px > 0)) fail("bev_m_per_px", "must be > 0");
  if (history_frames <= 0) fail("history_frames", "must be > 0");
  if (future_steps <= 0) fail("future_steps", "must be > 0");
  if (!(dt > 0)) fail("dt", "must be > 0");
  curation.validate();
  decision_config().validate();
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.d_emb = 32;
  c.heads = 4;
  c.modes = 6;
  c.experts = 4;
  c.blocks = 2;
  c.backbone_width = 32;
  c.backbone_heads = 4;
  c.ssm_state = 4;
  c.max_neighbors = 16;
  c.max_lane_nodes = 24;
  c.bev_size = 32;
  c.bev_m_per_px = 2.0;
  c.batch_size = 32;
  c.lr = 2e-3;
  c.eta_min = 2e-5;
  c.t_max = c.epochs;
  return c;
}

objectives::LossProfile TrainConfig::loss_profile() const {
  return loss == "rmse" ? objectives::LossProfile::Rmse : objectives::LossProfile::MultiModal;
}

objectives::LossWeights TrainConfig::loss_weights() const {
  return {lambda_reg, lambda_cls, gamma_mse, gamma_ce};
}

scenes::SceneConfig TrainConfig::scene_config() const {
  scenes::SceneConfig s;
  s.history_frames = history_frames;
  s.future_steps = future_steps;
  s.dt = dt;
  s.bev.height = bev_size;
  s.bev.width = bev_size;
  s.bev.m_per_px = bev_m_per_px;
  return s;
}

perception::BatchConfig TrainConfig::batch_config() const {
  perception::BatchConfig b;
  b.scene = scene_config();
  b.max_neighbors = max_neighbors;
  b.max_lane_nodes = max_lane_nodes;
  return b;
}

perception::PerceptionConfig TrainConfig::perception_config() const {
  perception::PerceptionConfig p;
  p.d_model = d_emb;
  p.heads = heads;
  p.dropout = dropout;
  return p;
}

memory::MemoryConfig TrainConfig::memory_config() const {
  memory::MemoryConfig m;
  m.d_model = d_emb;
  m.heads = heads;
  m.modes = modes;
  m.history = history_frames;
  m.future = future_steps;
  m.dropout = dropout;
  m.backbone_width = backbone_width;
  m.backbone_blocks = backbone_blocks;
  m.backbone_heads = backbone_heads;
  return m;
}

decision::DecisionConfig TrainConfig::decision_config() const {
  decision::DecisionConfig d;
  d.d_model = d_emb;
  d.heads = heads;
  d.modes = modes;
  d.future = future_steps;
  d.experts = experts;
  d.blocks = blocks;
  d.top_k = top_k;
  d.dense = dense;
  d.ssm_state = ssm_state;
  d.noise = noise;
  d.dropout = dropout;
  return d;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
#define X(f) j[#f] = c.f;
  WMMOE_TRAIN_FIELDS(X)
#undef X
#define X(f) j[#f] = c.curation.f;
  WMMOE_CURATION_FIELDS(X)
#undef X
  return j;
}

std::vector<std::string> config_fields() {
  std::vector<std::string> names;
#define X(f) names.push_back(#f);
  WMMOE_TRAIN_FIELDS(X)
  WMMOE_CURATION_FIELDS(X)
#undef X
  return names;
}

TrainConfig config_from_json(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw nd::ConfigError("config must be a JSON object");
  const nlohmann::json defaults = to_json(base);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) fail(key, "unknown field");
    const auto& d = defaults[key];
    const bool ok = (d.is_boolean() && value.is_boolean()) || (d.is_string() && value.is_string()) ||
                    (d.is_number_float() && value.is_number()) ||
                    (d.is_number_integer() && value.is_number_integer());
    if (!ok) fail(key, "expected " + std::string(d.type_name()) + ", got " + value.type_name());
  }
  TrainConfig c = base;
#define X(f) \
  if (j.contains(#f)) c.f = j[#f].get<decltype(c.f)>();
  WMMOE_TRAIN_FIELDS(X)
#undef X
#define X(f) \
  if (j.contains(#f)) c.curation.f = j[#f].get<decltype(c.curation.f)>();
  WMMOE_CURATION_FIELDS(X)
#undef X
  return c;
}

TrainConfig load_config(const std::string& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw nd::ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw nd::ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j, base);
}

TrainConfig apply_overrides(const TrainConfig& base, const std::map<std::string, std::string>& overrides) {
  const nlohmann::json defaults = to_json(base);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, text] : overrides) {
    if (!defaults.contains(key)) fail(key, "unknown field");
    const auto& d = defaults[key];
    try {
      if (d.is_boolean()) {
        if (text == "true" || text == "1") j[key] = true;
        else if (text == "false" || text == "0") j[key] = false;
        else fail(key, "expected true or false, got '" + text + "'");
      } else if (d.is_string()) {
        j[key] = text;
      } else if (d.is_number_unsigned()) {
        std::size_t used = 0;
        j[key] = static_cast<std::uint64_t>(std::stoull(text, &used));
        if (used != text.size()) fail(key, "expected an integer, got '" + text + "'");
      } else if (d.is_number_integer()) {
        std::size_t used = 0;
        j[key] = std::stoll(text, &used);
        if (used != text.size()) fail(key, "expected an integer, got '" + text + "'");
      } else {
        std::size_t used = 0;
        j[key] = std::stod(text, &used);
        if (used != text.size()) fail(key, "expected a number, got '" + text + "'");
      }
    } catch (const std::logic_error&) {
      fail(key, "cannot parse '" + text + "'");
    }
  }
  return config_from_json(j, base);
}

}  // namespace wmmoe::runtime
