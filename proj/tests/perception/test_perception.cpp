#include <gtest/gtest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "support/scene_builders.hpp"
#include "wmmoe/corpus/corpus.hpp"
#include "wmmoe/perception/encoder.hpp"
#include "wmmoe/scenes/geometry.hpp"

using namespace wmmoe::perception;
using wmmoe::nd::Shape;
using wmmoe::scenes::Scene;
using wmmoe::testing::random_array;
using wmmoe::testing::random_scene;
using wmmoe::testing::straight_track;

namespace {

void fill(wmmoe::nd::Parameter<double>& p, double v) { p.value = Array<double>::full(p.value.shape(), v); }

PerceptionConfig small_config(Index d = 16) {
  PerceptionConfig c;
  c.d_model = d;
  c.heads = 4;
  return c;
}

Scene scene_with(int neighbors, int lanes, std::uint64_t seed = 1) {
  auto s = random_scene(seed, neighbors, lanes);
  return s;
}

double max_abs_diff(const Array<double>& a, const Array<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Batch, ShapesAndPadding) {
  std::vector<Scene> scenes = {scene_with(0, 0, 1), scene_with(3, 2, 2)};
  const BatchConfig cfg;
  const auto b = make_batch(scenes, cfg);
  EXPECT_EQ(b.B, 2);
  EXPECT_EQ(b.target.shape(), (Shape{2, 5, kAgentFeatures}));
  EXPECT_EQ(b.N, 3);
  EXPECT_EQ(b.M, 8);
  EXPECT_EQ(b.bev.shape(), (Shape{2, 64, 64, 3}));
  EXPECT_EQ(b.future.shape(), (Shape{2, 12, 2}));
  for (Index j = 0; j < 3; ++j) EXPECT_EQ(b.neighbor_mask.at({0, j}), 0.0);
  for (Index j = 0; j < 3; ++j) EXPECT_EQ(b.neighbor_mask.at({1, j}), 1.0);
  // odd neighbors miss their oldest frame
  EXPECT_EQ(b.neighbor_steps.at({1, 1, 0}), 0.0);
  EXPECT_EQ(b.neighbor_steps.at({1, 1, 1}), 1.0);

  const auto empty = make_batch(std::vector<Scene>{scene_with(0, 0, 3)}, cfg);
  EXPECT_EQ(empty.N, 1);
  EXPECT_EQ(empty.M, 1);
  EXPECT_EQ(empty.lane_mask.at({0, 0}), 0.0);
}

TEST(Batch, TargetFrameFeatures) {
  const auto b = make_batch(std::vector<Scene>{scene_with(2, 1, 5)}, BatchConfig{});
  EXPECT_NEAR(b.target.at({0, 4, 0}), 0.0, 1e-12);
  EXPECT_NEAR(b.target.at({0, 4, 1}), 0.0, 1e-12);
  EXPECT_NEAR(b.target.at({0, 4, 6}), 0.0, 1e-12);
  for (Index f = 0; f < 5; ++f) EXPECT_EQ(b.target.at({0, f, 7}), 1.0);
}

TEST(Batch, DroppedCurrentFrameUsesLatestObserved) {
  Scene s = scene_with(1, 1, 6);
  s.target.states[4] = {};
  s.target.mask[4] = 0;
  const auto b = make_batch(std::vector<Scene>{s}, BatchConfig{});
  EXPECT_NEAR(b.target.at({0, 3, 0}), 0.0, 1e-12);
  EXPECT_EQ(b.target.at({0, 4, 7}), 0.0);
  for (Index j = 0; j < kAgentFeatures; ++j) EXPECT_EQ(b.target.at({0, 4, j}), 0.0);
}

TEST(Batch, LaneNodesAndAdjacency) {
  Scene s = scene_with(0, 0, 7);
  s.lanes.push_back({"a", {{0, 0}, {10, 0}}});
  s.lanes.push_back({"b", {{0, 5}, {5, 5}, {10, 5}}});
  const auto b = make_batch(std::vector<Scene>{s}, BatchConfig{});
  ASSERT_EQ(b.M, 5);
  // nodes 0-1 form lane a, 2-4 lane b; lanes are disconnected
  const int expect[5][5] = {{1, 1, 0, 0, 0}, {1, 1, 0, 0, 0}, {0, 0, 1, 1, 0}, {0, 0, 1, 1, 1}, {0, 0, 0, 1, 1}};
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) EXPECT_EQ(b.lane_adj.at({0, i, j}), expect[i][j]) << i << "," << j;
}

TEST(Batch, NeighborCapKeepsNearest) {
  Scene s = scene_with(0, 0, 8);
  s.neighbors.push_back(straight_track("far", 50, 0, 0, 0));
  s.neighbors.push_back(straight_track("near", s.target.now()[0] + 3, s.target.now()[1], 0, 0));
  BatchConfig cfg;
  cfg.max_neighbors = 1;
  const auto b = make_batch(std::vector<Scene>{s}, cfg);
  ASSERT_EQ(b.N, 1);
  EXPECT_NEAR(std::hypot(b.neighbors.at({0, 0, 4, 0}), b.neighbors.at({0, 0, 4, 1})), 0.3, 1e-9);
}

TEST(Batch, RasterSizeChecked) {
  Scene s = scene_with(1, 1, 9);
  BatchConfig cfg;
  s.bev = wmmoe::scenes::rasterize_bev(s, cfg.scene.bev);
  s.bev->derived = false;
  cfg.scene.bev.height = 32;
  EXPECT_NO_THROW(make_batch(std::vector<Scene>{s}, cfg));  // re-rasterized at the configured size
  cfg.scene.history_frames = 4;
  EXPECT_THROW(make_batch(std::vector<Scene>{s}, cfg), wmmoe::nd::DimensionError);
}

TEST(TargetEncoder, ZeroInputClosedForm) {
  ParamStore<double> store(1);
  PerceptionEncoder<double> enc(store, "p", small_config(8));
  for (const char* n : {"p/target_mlp/fc1/w", "p/target_mlp/fc1/b", "p/target_mlp/fc2/w", "p/target_mlp/fc2/b"})
    fill(store.at(n), 0.0);
  Tape<double> tape;
  auto out = enc.encode_target(tape, Array<double>::zeros({2, 3, kAgentFeatures})).value();
  ASSERT_EQ(out.shape(), (Shape{2, 3, 8}));
  // x = 0, h0 = 0: r, z from biases, n = tanh(b_xn + r b_hn), h' = (1 - z) h + z n
  const auto& bx = store.at("p/target_gru/bx").value;
  const auto& bh = store.at("p/target_gru/bh").value;
  const auto& wh = store.at("p/target_gru/wh").value;
  std::vector<double> h(8, 0.0);
  for (Index t = 0; t < 3; ++t) {
    std::vector<double> next(8);
    for (Index j = 0; j < 8; ++j) {
      double hr = bh[j], hz = bh[8 + j], hn = bh[16 + j];
      for (Index i = 0; i < 8; ++i) {
        hr += h[i] * wh.at({i, j});
        hz += h[i] * wh.at({i, 8 + j});
        hn += h[i] * wh.at({i, 16 + j});
      }
      const double r = 1 / (1 + std::exp(-(bx[j] + hr)));
      const double z = 1 / (1 + std::exp(-(bx[8 + j] + hz)));
      const double n = std::tanh(bx[16 + j] + r * hn);
      next[j] = (1 - z) * h[j] + z * n;
    }
    h = next;
    for (Index j = 0; j < 8; ++j) EXPECT_NEAR(out.at({1, t, j}), h[j], 1e-12);
  }
}

TEST(TargetEncoder, SingleFrameIsOneGruStep) {
  ParamStore<double> store(2);
  PerceptionEncoder<double> enc(store, "p", small_config(8));
  const auto x = random_array({3, 1, kAgentFeatures}, 4);
  Tape<double> tape;
  auto out = enc.encode_target(tape, x).value();
  wmmoe::nd::Mlp<double> mlp;
  mlp.first.weight = &store.at("p/target_mlp/fc1/w");
  mlp.first.bias = &store.at("p/target_mlp/fc1/b");
  mlp.second.weight = &store.at("p/target_mlp/fc2/w");
  mlp.second.bias = &store.at("p/target_mlp/fc2/b");
  mlp.first.in = kAgentFeatures;
  mlp.first.out = mlp.second.in = mlp.second.out = 8;
  wmmoe::nd::Gru<double> gru;
  gru.wx = &store.at("p/target_gru/wx");
  gru.wh = &store.at("p/target_gru/wh");
  gru.bx = &store.at("p/target_gru/bx");
  gru.bh = &store.at("p/target_gru/bh");
  gru.d_in = gru.d_h = 8;
  auto e = mlp(tape, tape.constant(x.reshaped({3, kAgentFeatures})));
  auto ref = gru.step(tape, e, tape.constant(Array<double>::zeros({3, 8}))).value();
  EXPECT_LT(max_abs_diff(out.reshaped({3, 8}), ref), 1e-14);
}

TEST(TargetEncoder, DefaultWidth) {
  ParamStore<double> store(3);
  PerceptionEncoder<double> enc(store, "p", PerceptionConfig{});
  Tape<double> tape;
  EXPECT_EQ(enc.encode_target(tape, random_array({2, 5, kAgentFeatures}, 1)).shape(), (Shape{2, 5, 64}));
  EXPECT_THROW(enc.encode_target(tape, random_array({2, 5, 7}, 1)), wmmoe::nd::DimensionError);
}

TEST(NeighborEncoder, MaskedRowsZeroAndDuplicatesEqual) {
  ParamStore<double> store(4);
  PerceptionEncoder<double> enc(store, "p", small_config());
  auto h = random_array({1, 3, 5, kAgentFeatures}, 5).to_vector();
  for (Index i = 0; i < 5 * kAgentFeatures; ++i) h[static_cast<std::size_t>(2 * 5 * kAgentFeatures + i)] = h[static_cast<std::size_t>(i)];
  std::vector<double> steps(15, 1.0);
  steps[5] = 0.0;  // agent 1 misses its first frame
  Tape<double> tape;
  auto out = enc.encode_neighbors(tape, Array<double>({1, 3, 5, kAgentFeatures}, h), Array<double>({1, 3, 5}, steps),
                                  Array<double>({1, 3}, {1, 0, 1}))
                 .value();
  for (Index j = 0; j < 16; ++j) {
    EXPECT_EQ(out.at({0, 1, j}), 0.0);
    EXPECT_EQ(out.at({0, 0, j}), out.at({0, 2, j}));
  }
  // a scene without neighbors is one fully masked slot
  const auto b = make_batch(std::vector<Scene>{scene_with(0, 1, 3)}, BatchConfig{});
  auto empty = enc.encode_neighbors(tape, b.neighbors, b.neighbor_steps, b.neighbor_mask).value();
  EXPECT_EQ(empty.shape(), (Shape{1, 1, 16}));
  for (double v : empty.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(enc.encode_neighbors(tape, Array<double>::zeros({1, 2, 5, kAgentFeatures}), Array<double>::zeros({1, 2, 4}),
                                    Array<double>::zeros({1, 2})),
               wmmoe::nd::DimensionError);
}

TEST(NeighborEncoder, UnobservedStepHoldsState) {
  ParamStore<double> store(5);
  PerceptionEncoder<double> enc(store, "p", small_config());
  const auto h = random_array({1, 2, 5, kAgentFeatures}, 6);
  auto v = h.to_vector();
  // agent 1: garbage in its last (unobserved) frame must not matter
  std::vector<double> steps(10, 1.0);
  steps[9] = 0.0;
  Tape<double> tape;
  auto a = enc.encode_neighbors(tape, h, Array<double>({1, 2, 5}, steps), Array<double>({1, 2}, {1, 1})).value();
  for (Index j = 0; j < kAgentFeatures; ++j) v[static_cast<std::size_t>((5 + 4) * kAgentFeatures + j)] = 100.0;
  auto b = enc.encode_neighbors(tape, Array<double>({1, 2, 5, kAgentFeatures}, v), Array<double>({1, 2, 5}, steps),
                                Array<double>({1, 2}, {1, 1}))
               .value();
  EXPECT_LT(max_abs_diff(a, b), 1e-15);
}

TEST(GraphAttention, MatchesDenseMaskedOracle) {
  ParamStore<double> store(6);
  GraphAttention<double> gat(store, "g", 4);
  const auto h = random_array({2, 3, 4}, 7);
  const Array<double> adj({2, 3, 3}, {1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0});
  Tape<double> tape;
  auto out = gat(tape, tape.constant(h), adj).value();
  const auto& W = gat.proj.weight->value;
  const auto& as = gat.a_src->value;
  const auto& ad = gat.a_dst->value;
  for (Index b = 0; b < 2; ++b) {
    double z[3][4] = {};
    for (Index i = 0; i < 3; ++i)
      for (Index c = 0; c < 4; ++c)
        for (Index k = 0; k < 4; ++k) z[i][c] += h.at({b, i, k}) * W.at({k, c});
    for (Index i = 0; i < 3; ++i) {
      double e[3], mx = -1e300, den = 0;
      for (Index j = 0; j < 3; ++j) {
        double s = 0;
        for (Index c = 0; c < 4; ++c) s += as.at({c, 0}) * z[i][c] + ad.at({c, 0}) * z[j][c];
        e[j] = s > 0 ? s : 0.2 * s;
        if (adj.at({b, i, j}) != 0) mx = std::max(mx, e[j]);
      }
      for (Index j = 0; j < 3; ++j) den += adj.at({b, i, j}) != 0 ? std::exp(e[j] - mx) : 0.0;
      for (Index c = 0; c < 4; ++c) {
        double ctx = 0;
        for (Index j = 0; j < 3; ++j)
          if (adj.at({b, i, j}) != 0) ctx += std::exp(e[j] - mx) / den * z[j][c];
        EXPECT_NEAR(out.at({b, i, c}), h.at({b, i, c}) + std::max(ctx, 0.0), 1e-12);
      }
    }
  }
}

TEST(GraphAttention, GradientMatchesFiniteDifference) {
  ParamStore<double> store(7);
  GraphAttention<double> gat(store, "g", 3);
  const Array<double> adj({1, 3, 3}, {1, 1, 0, 1, 1, 1, 0, 1, 1});
  auto r = wmmoe::testing::grad_check(
      [&](Tape<double>& t, const auto& x) { return wmmoe::nd::sum(wmmoe::nd::square(gat(t, x[0], adj))); },
      {random_array({1, 3, 3}, 8)});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(LaneEncoder, DisconnectedLanesIndependent) {
  ParamStore<double> store(8);
  PerceptionEncoder<double> enc(store, "p", small_config());
  Scene s = scene_with(0, 0, 9);
  s.lanes.push_back({"a", {{0, 0}, {10, 0}}});
  s.lanes.push_back({"b", {{0, 5}, {5, 5}, {10, 5}}});
  Scene t = s;
  t.lanes[0].points[1] = {12, 3};
  const auto ba = make_batch(std::vector<Scene>{s}, BatchConfig{});
  const auto bb = make_batch(std::vector<Scene>{t}, BatchConfig{});
  Tape<double> tape;
  auto la = enc.encode_lanes(tape, ba.lane_nodes, ba.lane_mask, ba.lane_adj).value();
  auto lb = enc.encode_lanes(tape, bb.lane_nodes, bb.lane_mask, bb.lane_adj).value();
  ASSERT_EQ(la.shape(), (Shape{5, 1, 16}));
  for (Index n = 2; n < 5; ++n)
    for (Index c = 0; c < 16; ++c) EXPECT_EQ(la.at({n, 0, c}), lb.at({n, 0, c}));
  double moved = 0;
  for (Index c = 0; c < 16; ++c) moved += std::abs(la.at({0, 0, c}) - lb.at({0, 0, c}));
  EXPECT_GT(moved, 0.0);
}

TEST(BevEncoder, ZeroRasterGivesZeroFeatures) {
  ParamStore<double> store(9);
  PerceptionEncoder<double> enc(store, "p", small_config());
  Tape<double> tape;
  auto out = enc.encode_bev(tape, Array<double>::zeros({2, 64, 64, 3})).value();
  EXPECT_EQ(bev_feature_size(64), 8);
  ASSERT_EQ(out.shape(), (Shape{2, 64, 16}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(bev_feature_size(32), 4);
  EXPECT_EQ(enc.encode_bev(tape, Array<double>::zeros({1, 32, 32, 3})).shape(), (Shape{1, 16, 16}));
}

TEST(BevEncoder, EvalIsDeterministic) {
  ParamStore<double> store(10);
  PerceptionEncoder<double> enc(store, "p", small_config());
  const auto x = random_array({1, 64, 64, 3}, 11);
  Tape<double> a, b;
  EXPECT_EQ(max_abs_diff(enc.encode_bev(a, x).value(), enc.encode_bev(b, x).value()), 0.0);
  wmmoe::nd::TapeOptions tr;
  tr.training = true;
  tr.seed = 1;
  Tape<double> c(tr);
  EXPECT_GT(max_abs_diff(enc.encode_bev(c, x).value(), enc.encode_bev(a, x).value()), 0.0);
}

TEST(FuseScene, EmptyModalitiesLeaveTargetBranch) {
  ParamStore<double> store(11);
  PerceptionEncoder<double> enc(store, "p", small_config());
  const auto b = make_batch(std::vector<Scene>{scene_with(0, 0, 12), scene_with(0, 0, 13)}, BatchConfig{});
  Tape<double> tape;
  const auto e = enc(tape, b);
  ASSERT_EQ(e.s_enc.shape(), (Shape{5, 2, 16}));

  // the same names in a fresh store with the same seed rebuild identical weights
  ParamStore<double> twin(11);
  wmmoe::nd::LayerNorm<double> ln(twin, "p/ln_target", 16);
  wmmoe::nd::MultiHeadAttention<double> mha(twin, "p/self_target", 16, 4);
  auto tn = ln(tape, e.t_enc);
  auto ref = wmmoe::nd::permute(e.t_enc + mha(tape, tn, tn, tn), {1, 0, 2}).value();
  EXPECT_LT(max_abs_diff(e.s_enc.value(), ref), 1e-14);
}

TEST(FuseScene, NeighborPermutationInvariant) {
  ParamStore<double> store(12);
  PerceptionEncoder<double> enc(store, "p", small_config());
  Scene s = scene_with(5, 2, 14);
  Scene p = s;
  std::swap(p.neighbors[0], p.neighbors[3]);
  std::swap(p.neighbors[1], p.neighbors[4]);
  Tape<double> tape;
  auto a = enc(tape, make_batch(std::vector<Scene>{s}, BatchConfig{})).s_enc.value();
  auto b = enc(tape, make_batch(std::vector<Scene>{p}, BatchConfig{})).s_enc.value();
  EXPECT_LT(max_abs_diff(a, b), 1e-9);
}

TEST(FuseScene, NeighborsAndLanesChangeOutput) {
  ParamStore<double> store(13);
  PerceptionEncoder<double> enc(store, "p", small_config());
  Scene s = scene_with(3, 2, 15);
  Scene bare = s;
  bare.neighbors.clear();
  bare.lanes.clear();
  Tape<double> tape;
  auto a = enc(tape, make_batch(std::vector<Scene>{s}, BatchConfig{})).s_enc.value();
  auto b = enc(tape, make_batch(std::vector<Scene>{bare}, BatchConfig{})).s_enc.value();
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
}

TEST(Encoder, DefaultShapesAndFiniteOnGeneratedScenes) {
  ParamStore<float> store(14);
  PerceptionEncoder<float> enc(store, "p", PerceptionConfig{});
  wmmoe::corpus::GeneratorConfig g;
  const auto scenes = wmmoe::corpus::generate_synthetic(g, 6, 3);
  const auto b = make_batch(scenes, BatchConfig{});
  Tape<float> tape;
  const auto e = enc(tape, b);
  EXPECT_EQ(e.s_enc.shape(), (Shape{5, 6, 64}));
  EXPECT_EQ(e.v_enc.shape(), (Shape{6, 64, 64}));
  EXPECT_EQ(e.l_enc.shape(), (Shape{b.M, 6, 64}));
  for (float v : e.s_enc.value().data()) EXPECT_TRUE(std::isfinite(v));
}
