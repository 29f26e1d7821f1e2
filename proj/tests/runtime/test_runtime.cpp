#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "wmmoe/runtime/pipeline.hpp"

using namespace wmmoe;
using namespace wmmoe::runtime;
using nd::Array;

namespace {

TrainConfig tiny() {
  TrainConfig c;
  c.d_emb = 8;
  c.heads = 2;
  c.modes = 5;
  c.experts = 2;
  c.blocks = 1;
  c.ssm_state = 2;
  c.backbone_width = 8;
  c.backbone_heads = 2;
  c.backbone_blocks = 1;
  c.max_neighbors = 4;
  c.max_lane_nodes = 8;
  c.bev_size = 16;
  c.bev_m_per_px = 4.0;
  c.batch_size = 4;
  c.eval_batch_size = 3;
  c.epochs = 1;
  c.lr = 1e-3;
  c.eta_min = 1e-5;
  c.t_max = 4;
  return c;
}

std::vector<scenes::Scene> scenes_for(const TrainConfig& c, int n, std::uint64_t seed = 3) {
  corpus::GeneratorConfig g;
  g.scene = c.scene_config();
  g.curation = c.curation;
  return corpus::generate_synthetic(g, n, seed);
}

template <typename T>
Array<T> forward_mu(const WmMoeModel<T>& m, const std::vector<scenes::Scene>& s) {
  nd::Tape<T> tape({false, false, 0, 0});
  return m(tape, perception::make_batch(s, m.config().batch_config())).mu.value();
}

std::string to_bytes(const Checkpoint& c) {
  std::stringstream ss;
  write_checkpoint(ss, c);
  return ss.str();
}

Checkpoint from_bytes(const std::string& s) {
  std::stringstream ss(s);
  return read_checkpoint(ss);
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  auto c = TrainConfig::desk();
  c.loss = "rmse";
  c.curation.yaw_turn_rad = 0.25;
  c.seed = 0xFFFFFFFFFFULL;
  const auto back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_fields().size(), to_json(c).size());
}

TEST(Config, UnknownFieldAndTypeMismatchThrow) {
  EXPECT_THROW(config_from_json({{"learning_rate", 1.0}}), nd::ConfigError);
  EXPECT_THROW(config_from_json({{"epochs", "ten"}}), nd::ConfigError);
  EXPECT_THROW(config_from_json({{"epochs", 2.5}}), nd::ConfigError);
  EXPECT_EQ(config_from_json({{"lr", 1}}).lr, 1.0);
}

TEST(Config, OverridesUseFieldTypes) {
  const auto c = apply_overrides({}, {{"epochs", "7"}, {"lr", "0.01"}, {"dense", "true"}, {"loss", "rmse"},
                                      {"yaw_uturn_rad", "0.9"}, {"seed", "18446744073709551615"}});
  EXPECT_EQ(c.epochs, 7);
  EXPECT_DOUBLE_EQ(c.lr, 0.01);
  EXPECT_TRUE(c.dense);
  EXPECT_EQ(c.loss, "rmse");
  EXPECT_DOUBLE_EQ(c.curation.yaw_uturn_rad, 0.9);
  EXPECT_EQ(c.seed, 18446744073709551615ULL);
  EXPECT_THROW(apply_overrides({}, {{"epochs", "7x"}}), nd::ConfigError);
  EXPECT_THROW(apply_overrides({}, {{"dense", "maybe"}}), nd::ConfigError);
  EXPECT_THROW(apply_overrides({}, {{"nope", "1"}}), nd::ConfigError);
}

TEST(Config, ValidateRejectsBadValues) {
  TrainConfig c;
  c.eta_min = c.lr;
  EXPECT_THROW(c.validate(), nd::ConfigError);
  c = {};
  c.loss = "l1";
  EXPECT_THROW(c.validate(), nd::ConfigError);
  c = {};
  c.top_k = c.experts + 1;
  EXPECT_THROW(c.validate(), nd::ConfigError);
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_NO_THROW(TrainConfig::desk().validate());
}

TEST(Schedule, EndpointsAndMidpoint) {
  EXPECT_EQ(cosine_lr(5e-4, 5e-6, 150, 0), 5e-4);
  EXPECT_EQ(cosine_lr(5e-4, 5e-6, 150, 150), 5e-6);
  EXPECT_NEAR(cosine_lr(5e-4, 5e-6, 150, 75), (5e-4 + 5e-6) / 2, 1e-18);
  for (int e = 1; e <= 150; ++e) EXPECT_LT(cosine_lr(5e-4, 5e-6, 150, e), cosine_lr(5e-4, 5e-6, 150, e - 1));
  EXPECT_THROW(cosine_lr(1, 0, 0, 0), nd::ConfigError);
}

TEST(Adam, MatchesHandComputedSteps) {
  nd::ParamStore<double> store(1);
  auto& w = store.create("w", {2}, nd::Init::constant(1.0));
  auto& f = store.create("frozen/w", {1}, nd::Init::constant(2.0));
  Adam<double> adam;
  const double g1[2] = {0.5, -2.0}, g2[2] = {0.1, 1.0};
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1, 1};
  for (int t = 1; t <= 2; ++t) {
    const double* g = t == 1 ? g1 : g2;
    w.grad = {g[0], g[1]};
    f.grad = {1.0};
    adam.step(store, 0.1);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      x[i] -= 0.1 * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.999, t))) + 1e-8);
      EXPECT_NEAR(w.value[i], x[i], 1e-15);
    }
  }
  EXPECT_EQ(f.value[0], 2.0);
  EXPECT_EQ(adam.state().count("frozen/w"), 0u);
  EXPECT_EQ(adam.steps(), 2);
}

TEST(Clip, ScalesToGlobalNorm) {
  nd::ParamStore<double> store(1);
  auto& a = store.create("a", {1}, nd::Init::zeros());
  auto& b = store.create("b", {1}, nd::Init::zeros());
  a.grad = {3.0};
  b.grad = {4.0};
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(store, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  b.grad = {std::nan("")};
  EXPECT_THROW(clip_grad_norm(store, 1.0), TrainingError);
}

TEST(Checkpoint, RoundTripReproducesOutputsBitForBit) {
  const auto cfg = tiny();
  nd::ParamStore<float> a(cfg.seed);
  WmMoeModel<float> ma(a, cfg);
  const auto ckpt = from_bytes(to_bytes(capture(a, cfg, {cfg.seed, 3})));
  EXPECT_EQ(ckpt.rng.epoch, 3);
  EXPECT_EQ(to_json(ckpt.config), to_json(cfg));

  auto other = cfg;
  other.seed = 99;
  nd::ParamStore<float> b(other.seed);
  WmMoeModel<float> mb(b, other);
  EXPECT_NE(store_checksum(a), store_checksum(b));
  restore(ckpt, b);
  EXPECT_EQ(store_checksum(a), store_checksum(b));

  const auto s = scenes_for(cfg, 3);
  const auto ya = forward_mu(ma, s), yb = forward_mu(mb, s);
  ASSERT_EQ(ya.size(), yb.size());
  for (nd::Index i = 0; i < ya.size(); ++i) ASSERT_EQ(ya[i], yb[i]);
}

TEST(Checkpoint, ManifestIsContiguousAndNamesEveryParameter) {
  const auto cfg = tiny();
  nd::ParamStore<float> a(cfg.seed);
  WmMoeModel<float> m(a, cfg);
  const auto c = capture(a, cfg);
  ASSERT_EQ(c.manifest.size(), a.all().size());
  std::uint64_t end = 0;
  for (const auto& e : c.manifest) {
    EXPECT_EQ(e.offset, end);
    EXPECT_EQ(e.dtype, "f32");
    end += e.nbytes;
  }
  EXPECT_EQ(end, c.payload.size());
}

TEST(Checkpoint, FloatToDoubleConversion) {
  const auto cfg = tiny();
  nd::ParamStore<float> a(cfg.seed);
  WmMoeModel<float> ma(a, cfg);
  auto loaded = load_model(capture(a, cfg));
  for (auto* p : a.all()) {
    const auto& q = loaded.store->at(p->name);
    ASSERT_EQ(q.value.shape(), p->value.shape());
    for (nd::Index i = 0; i < p->value.size(); ++i) ASSERT_EQ(q.value[i], static_cast<double>(p->value[i]));
  }
}

TEST(Checkpoint, CorruptedByteFailsClosed) {
  const auto cfg = tiny();
  nd::ParamStore<float> a(cfg.seed);
  WmMoeModel<float> m(a, cfg);
  const auto bytes = to_bytes(capture(a, cfg));
  for (std::size_t pos : {std::size_t{30}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
    EXPECT_THROW(from_bytes(bad), CheckpointError) << "byte " << pos;
  }
}

TEST(Checkpoint, TruncationAndVersionMismatchThrow) {
  const auto cfg = tiny();
  nd::ParamStore<float> a(cfg.seed);
  WmMoeModel<float> m(a, cfg);
  const auto bytes = to_bytes(capture(a, cfg));
  EXPECT_THROW(from_bytes(bytes.substr(0, bytes.size() - 4)), CheckpointError);
  EXPECT_THROW(from_bytes(bytes.substr(0, 10)), CheckpointError);
  auto bumped = bytes;
  bumped[8] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(from_bytes(bumped), CheckpointError);
  EXPECT_THROW(from_bytes(bytes + "x"), CheckpointError);
}

TEST(Checkpoint, MismatchedModelLeavesStoreUntouched) {
  const auto cfg = tiny();
  nd::ParamStore<float> a(cfg.seed);
  WmMoeModel<float> ma(a, cfg);
  auto ckpt = capture(a, cfg);
  auto wider = cfg;
  wider.d_emb = 12;
  wider.seed = 5;
  nd::ParamStore<float> b(wider.seed);
  WmMoeModel<float> mb(b, wider);
  const auto before = store_checksum(b);
  EXPECT_THROW(restore(ckpt, b), CheckpointError);
  EXPECT_EQ(store_checksum(b), before);
}

TEST(Checkpoint, FrozenBackboneRestoredReadOnly) {
  const auto cfg = tiny();
  Trainer t(cfg);
  t.fit(scenes_for(cfg, 4));
  for (const auto& [name, st] : t.optimizer().state()) EXPECT_NE(name.rfind("frozen/", 0), 0u) << name;
  EXPECT_FALSE(t.optimizer().state().empty());
  auto loaded = load_model(t.checkpoint());
  int frozen = 0;
  for (auto* p : loaded.store->all()) {
    const bool backbone = p->name.rfind("frozen/", 0) == 0;
    EXPECT_EQ(p->frozen, backbone) << p->name;
    frozen += backbone;
  }
  EXPECT_GT(frozen, 0);
  for (auto* p : loaded.store->trainable()) EXPECT_NE(p->name.rfind("frozen/", 0), 0u);
}

TEST(Trainer, ZeroEpochsEqualsInitialization) {
  auto cfg = tiny();
  cfg.epochs = 0;
  Trainer t(cfg);
  EXPECT_TRUE(t.fit(scenes_for(cfg, 4)).empty());
  nd::ParamStore<float> fresh(cfg.seed);
  WmMoeModel<float> m(fresh, cfg);
  EXPECT_EQ(store_checksum(t.store()), store_checksum(fresh));
  const auto c = t.checkpoint();
  nd::ParamStore<float> again(cfg.seed);
  WmMoeModel<float> m2(again, cfg);
  EXPECT_EQ(c.checksum(), capture(again, cfg).checksum());
}

TEST(Trainer, SameSeedGivesIdenticalRuns) {
  auto cfg = tiny();
  cfg.epochs = 2;
  const auto data = scenes_for(cfg, 10);
  Trainer a(cfg), b(cfg);
  const auto la = a.fit(data), lb = b.fit(data);
  ASSERT_EQ(la.size(), 2u);
  for (std::size_t e = 0; e < la.size(); ++e) {
    EXPECT_EQ(la[e].loss, lb[e].loss);
    EXPECT_EQ(la[e].grad_norm, lb[e].grad_norm);
    EXPECT_EQ(la[e].batches, 3);
  }
  EXPECT_EQ(store_checksum(a.store()), store_checksum(b.store()));
  EXPECT_EQ(la[1].lr, cosine_lr(cfg.lr, cfg.eta_min, cfg.t_max, 1));

  cfg.seed = 2;
  Trainer c(cfg);
  c.fit(data);
  EXPECT_NE(store_checksum(c.store()), store_checksum(a.store()));
}

TEST(Trainer, ResumeContinuesFromCheckpointEpoch) {
  auto cfg = tiny();
  cfg.epochs = 2;
  const auto data = scenes_for(cfg, 8);
  auto one = cfg;
  one.epochs = 1;
  Trainer first(one);
  first.fit(data);
  auto ckpt = first.checkpoint();
  ckpt.config.epochs = 2;
  Trainer resumed(ckpt);
  EXPECT_EQ(resumed.epoch(), 1);
  EXPECT_EQ(store_checksum(resumed.store()), store_checksum(first.store()));
  const auto log = resumed.fit(data);
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0].epoch, 1);
  EXPECT_EQ(log[0].lr, cosine_lr(cfg.lr, cfg.eta_min, cfg.t_max, 1));
  EXPECT_EQ(resumed.epoch(), 2);
}

TEST(Trainer, NonFiniteLossNamesBatch) {
  const auto cfg = tiny();
  Trainer t(cfg);
  auto& w = t.store().at("decision/decoder/loc/fc2/b");
  w.value = Array<float>(w.value.shape(), std::vector<float>(static_cast<std::size_t>(w.value.size()), NAN));
  try {
    t.run_epoch(scenes_for(cfg, 4));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0 batch 0"), std::string::npos) << e.what();
  }
}

TEST(Trainer, LossCsvHeader) {
  auto cfg = tiny();
  std::ostringstream out;
  Trainer t(cfg);
  t.fit(scenes_for(cfg, 4), &out);
  const auto text = out.str();
  EXPECT_EQ(text.rfind("epoch,lr,loss,ade,reg,cls,mse,ce,grad_norm,batches,seconds\n0,", 0), 0u) << text;
}

TEST(Evaluate, RepeatedSceneMatchesHandComputation) {
  const auto cfg = tiny();
  nd::ParamStore<double> store(cfg.seed);
  WmMoeModel<double> model(store, cfg);
  const auto one = scenes_for(cfg, 1);
  const std::vector<scenes::Scene> rep(4, one[0]);

  nd::Tape<double> tape({false, false, 0, 0});
  const auto batch = perception::make_batch(one, cfg.batch_config());
  const auto f = model(tape, batch);
  const auto& mu = f.mu.value();
  const auto& pi = f.pi.value();
  const nd::Index K = cfg.modes, F = cfg.future_steps;
  auto expected_ade = [&](int g) {
    std::vector<nd::Index> idx(static_cast<std::size_t>(K));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return pi[a] > pi[b]; });
    double best = INFINITY;
    for (int j = 0; j < g; ++j) {
      double s = 0;
      for (nd::Index t = 0; t < F; ++t) {
        const auto k = idx[static_cast<std::size_t>(j)];
        s += std::hypot(mu[(k * F + t) * 2] - batch.future[t * 2], mu[(k * F + t) * 2 + 1] - batch.future[t * 2 + 1]);
      }
      best = std::min(best, s / F);
    }
    return best;
  };
  const auto r = evaluate(model, rep, {{1, 5}});
  EXPECT_EQ(r.overall.n_samples, 4);
  EXPECT_NEAR(r.overall.min_ade.at(1), expected_ade(1), 1e-12);
  EXPECT_NEAR(r.overall.min_ade.at(5), expected_ade(5), 1e-12);
  EXPECT_LE(r.overall.min_ade.at(5), r.overall.min_ade.at(1));
}

TEST(Evaluate, RejectsBadGList) {
  const auto cfg = tiny();
  nd::ParamStore<double> store(cfg.seed);
  WmMoeModel<double> model(store, cfg);
  const auto s = scenes_for(cfg, 2);
  EXPECT_THROW(evaluate(model, s, {{}}), nd::ConfigError);
  EXPECT_THROW(evaluate(model, s, {{1, 6}}), nd::ConfigError);
  EXPECT_THROW(evaluate(model, s, {{0}}), nd::ConfigError);
  EXPECT_THROW(evaluate(model, std::vector<scenes::Scene>{}, {{1}}), nd::ContractError);
}

TEST(Evaluate, PerClassCountsSumToCorpus) {
  const auto cfg = tiny();
  nd::ParamStore<double> store(cfg.seed);
  WmMoeModel<double> model(store, cfg);
  auto s = scenes_for(cfg, 13);
  s[0].label.reset();
  const auto r = evaluate(model, s, {{1, 5}, {2, 12}});
  nd::Index total = 0;
  for (const auto& [c, rep] : r.per_class) total += rep.n_samples;
  EXPECT_EQ(total, 13);
  EXPECT_GT(r.per_class.size(), 1u);
  EXPECT_EQ(r.overall.rmse.size(), 2u);

  std::ostringstream a, b;
  write_eval_csv(a, r);
  write_class_csv(b, r);
  EXPECT_EQ(a.str().rfind("metric,g,value,n_samples\nminADE,1,", 0), 0u);
  EXPECT_EQ(b.str().rfind("scenario,metric,g,value,n_samples\n", 0), 0u);
}

// Tokenizer statistics span the batch, so metrics are reproducible only for a
// fixed batching; evaluation always batches in corpus order.
TEST(Evaluate, FixedBatchingIsDeterministic) {
  const auto cfg = tiny();
  nd::ParamStore<double> store(cfg.seed);
  WmMoeModel<double> model(store, cfg);
  const auto s = scenes_for(cfg, 7);
  const auto a = evaluate(model, s), b = evaluate(model, s);
  EXPECT_EQ(a.overall.min_ade, b.overall.min_ade);
  EXPECT_EQ(a.overall.miss_rate, b.overall.miss_rate);
}

TEST(RouteStats, SingleExpertWeightsAreOne) {
  auto cfg = tiny();
  cfg.experts = 1;
  nd::ParamStore<double> store(cfg.seed);
  WmMoeModel<double> model(store, cfg);
  const auto tel = route_stats(model, scenes_for(cfg, 5));
  ASSERT_FALSE(tel.cells().empty());
  for (const auto& [key, cell] : tel.cells()) EXPECT_EQ(cell.weight_sum / static_cast<double>(cell.tokens), 1.0);
}

TEST(RouteStats, BlockWeightsSumToOne) {
  auto cfg = tiny();
  cfg.blocks = 2;
  cfg.experts = 3;
  nd::ParamStore<double> store(cfg.seed);
  WmMoeModel<double> model(store, cfg);
  const auto tel = route_stats(model, scenes_for(cfg, 6));
  EXPECT_LE(tel.max_simplex_error(), 1e-9);
  std::map<std::pair<nd::Index, std::string>, double> sums;
  for (const auto& [key, cell] : tel.cells()) {
    sums[{std::get<0>(key), std::get<2>(key)}] += cell.weight_sum / static_cast<double>(cell.tokens);
  }
  for (const auto& [key, s] : sums) EXPECT_NEAR(s, 1.0, 1e-9);
  EXPECT_EQ(tel.scene_vectors().size(), 6u);
  EXPECT_EQ(tel.scene_vectors().begin()->second.size(), 6u);
}

TEST(GateDivergence, SeparatedClassesAreSignificant) {
  decision::GateTelemetry sep, mixed;
  nd::RngStream rng(4, 0);
  for (int i = 0; i < 40; ++i) {
    const std::string label = i % 2 ? "Turning" : "Common";
    const double base = i % 2 ? 0.7 : 0.3;
    const double p = base + 0.05 * rng.normal();
    const double q = 0.5 + 0.05 * rng.normal();
    sep.record(0, Array<double>({1, 1, 2}, {p, 1 - p}), {label}, {"s" + std::to_string(i)});
    mixed.record(0, Array<double>({1, 1, 2}, {q, 1 - q}), {label}, {"s" + std::to_string(i)});
  }
  const auto a = gate_divergence(sep, 199, 1);
  EXPECT_TRUE(a.significant());
  EXPECT_LT(a.p_value, 0.01);
  const auto b = gate_divergence(mixed, 199, 1);
  EXPECT_GT(b.p_value, 0.01);
  EXPECT_EQ(gate_divergence(sep, 199, 1).null_p95, a.null_p95);
  EXPECT_THROW(gate_divergence(decision::GateTelemetry{}, 10), nd::ContractError);
}
