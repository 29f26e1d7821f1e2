#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <sstream>

#include "support/gradcheck.hpp"
#include "wmmoe/decision/decision.hpp"

using namespace wmmoe::decision;
using wmmoe::nd::Shape;
using wmmoe::nd::TapeOptions;
using wmmoe::testing::random_array;

namespace {

DecisionConfig small_config() {
  DecisionConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.modes = 3;
  c.future = 4;
  c.experts = 3;
  c.blocks = 2;
  c.ssm_state = 4;
  c.dropout = 0.0;
  return c;
}

void fill(wmmoe::nd::Parameter<double>& p, double v) { p.value = Array<double>::full(p.value.shape(), v); }

void set_identity(wmmoe::nd::Linear<double>& l) {
  const Index n = l.weight->value.dim(0);
  std::vector<double> v(static_cast<std::size_t>(n * n), 0.0);
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i * n + i)] = 1.0;
  l.weight->value = Array<double>({n, n}, std::move(v));
  if (l.bias) fill(*l.bias, 0.0);
}

double max_abs_diff(const Array<double>& a, const Array<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tape<double> training_tape(std::uint64_t seed) {
  TapeOptions o;
  o.training = true;
  o.seed = seed;
  return Tape<double>(o);
}

struct Inputs {
  Array<double> q, t_llm, v, t_enc;
};

Inputs random_inputs(const DecisionConfig& c, Index B, Index P, std::uint64_t seed) {
  return {random_array({c.future, c.modes, B, c.d_model}, seed), random_array({B, 5, c.d_model}, seed + 1),
          random_array({B, P, c.d_model}, seed + 2), random_array({B, 5, c.d_model}, seed + 3)};
}

wmmoe::objectives::Forecast<double> run(const DecisionModule<double>& m, Tape<double>& tape, const Inputs& x,
                                        DecisionTrace<double>* trace = nullptr) {
  return m(tape, tape.constant(x.q), tape.constant(x.t_llm), tape.constant(x.v), tape.constant(x.t_enc), trace);
}

}  // namespace

TEST(Noise, EvalAndZeroWeightsAreIdentity) {
  ParamStore<double> store(1);
  NoiseInjector<double> noise(store, "n", 4, true);
  const auto x = random_array({2, 3, 4}, 1);
  Tape<double> eval;
  EXPECT_EQ(max_abs_diff(noise(eval, eval.constant(x)).value(), x), 0.0);

  auto train = training_tape(5);
  EXPECT_GT(max_abs_diff(noise(train, train.constant(x)).value(), x), 1e-6);
  fill(*noise.projection().weight, 0.0);
  auto train2 = training_tape(5);
  EXPECT_EQ(max_abs_diff(noise(train2, train2.constant(x)).value(), x), 0.0);
}

TEST(Noise, SameSeedSamePerturbation) {
  ParamStore<double> store(2);
  NoiseInjector<double> noise(store, "n", 4, true);
  const auto x = random_array({3, 4}, 2);
  auto a = training_tape(9), b = training_tape(9), c = training_tape(10);
  const auto ya = noise(a, a.constant(x)).value();
  EXPECT_EQ(max_abs_diff(ya, noise(b, b.constant(x)).value()), 0.0);
  EXPECT_GT(max_abs_diff(ya, noise(c, c.constant(x)).value()), 1e-6);
}

TEST(CrossModalFusion, SingleTokenWithIdentityProjections) {
  ParamStore<double> store(3);
  auto cfg = small_config();
  CrossModalFusion<double> fuse(store, "f", cfg);
  auto& att = const_cast<wmmoe::nd::MultiHeadAttention<double>&>(fuse.attention());
  set_identity(att.wq);
  set_identity(att.wk);
  set_identity(att.wv);
  set_identity(att.wo);
  Tape<double> tape;
  const auto q = random_array({4, 3, 2, 8}, 30);
  const auto v = random_array({2, 1, 8}, 31);
  const auto out = fuse(tape, tape.constant(random_array({2, 5, 8}, 32)), tape.constant(v), tape.constant(q)).value();
  ASSERT_EQ(out.shape(), q.shape());
  for (Index f = 0; f < 4; ++f)
    for (Index k = 0; k < 3; ++k)
      for (Index b = 0; b < 2; ++b)
        for (Index d = 0; d < 8; ++d) EXPECT_NEAR(out.at({f, k, b, d}) - q.at({f, k, b, d}), v.at({b, 0, d}), 1e-12);
}

TEST(CrossModalFusion, MaskedTokensEqualDeletedTokens) {
  ParamStore<double> store(4);
  CrossModalFusion<double> fuse(store, "f", small_config());
  Tape<double> tape;
  const auto q = tape.constant(random_array({4, 3, 1, 8}, 40));
  const auto t = tape.constant(random_array({1, 5, 8}, 41));
  const auto v = random_array({1, 4, 8}, 42);
  const Array<double> mask({1, 4}, {1, 1, 0, 0});
  const auto masked = fuse(tape, t, tape.constant(v), q, &mask).value();
  auto kept = v.to_vector();
  kept.resize(16);
  const auto deleted = fuse(tape, t, tape.constant(Array<double>({1, 2, 8}, kept)), q).value();
  EXPECT_LE(max_abs_diff(masked, deleted), 1e-12);
}

TEST(CrossModalFusion, LanguageContextModulatesKeys) {
  ParamStore<double> store(5);
  CrossModalFusion<double> fuse(store, "f", small_config());
  Tape<double> tape;
  const auto q = tape.constant(random_array({4, 3, 1, 8}, 50));
  const auto v = tape.constant(random_array({1, 6, 8}, 51));
  const auto a = fuse(tape, tape.constant(random_array({1, 5, 8}, 52)), v, q).value();
  const auto b = fuse(tape, tape.constant(random_array({1, 5, 8}, 53)), v, q).value();
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
}

TEST(TemporalConv, ZeroKernelsGiveIdentity) {
  ParamStore<double> store(6);
  TemporalConv<double> tcn(store, "t", small_config());
  for (auto* p : store.all()) fill(*p, 0.0);
  Tape<double> tape;
  const auto x = random_array({2, 4, 3, 8}, 60);
  EXPECT_EQ(max_abs_diff(tcn(tape.constant(x)).value(), x), 0.0);
}

TEST(TemporalConv, CausalReceptiveFieldIsFifteenSteps) {
  ParamStore<double> store(7);
  ConvStack<double> stack(store, "s", 2, {1, 2, 4}, 1);
  const Index L = 20;
  const auto x = random_array({1, L, 2}, 70);
  Tape<double> tape;
  const auto base = stack(tape.constant(x)).value();
  for (Index s = 0; s < L; ++s) {
    auto v = x.to_vector();
    v[static_cast<std::size_t>(s * 2)] += 1.0;
    const auto y = stack(tape.constant(Array<double>({1, L, 2}, v))).value();
    double last = 0;
    for (Index c = 0; c < 2; ++c) last = std::max(last, std::abs(y.at({0, L - 1, c}) - base.at({0, L - 1, c})));
    if (s >= L - 15) {
      EXPECT_GT(last, 0.0) << "step " << s;
    } else {
      EXPECT_EQ(last, 0.0) << "step " << s;
    }
    for (Index t = 0; t < s; ++t)
      for (Index c = 0; c < 2; ++c) EXPECT_EQ(y.at({0, t, c}), base.at({0, t, c}));
  }
}

TEST(TemporalConv, GradientMatchesFiniteDifference) {
  ParamStore<double> store(8);
  auto cfg = small_config();
  cfg.d_model = 3;
  TemporalConv<double> tcn(store, "t", cfg);
  auto r = wmmoe::testing::grad_check(
      [&](Tape<double>&, const auto& x) { return wmmoe::nd::sum(wmmoe::nd::square(tcn(x[0]))); },
      {random_array({1, 4, 3, 3}, 80)});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(SelectiveScan, LargeStepForgetsThePast) {
  Tape<double> tape;
  const Index L = 4, E = 2, S = 3;
  auto u = random_array({1, L, E}, 90);
  const auto delta = tape.constant(Array<double>::full({1, L, E}, 60.0));
  const auto A = tape.constant(Array<double>::full({E, S}, -1.0));
  const auto B = tape.constant(random_array({1, L, S}, 91));
  const auto C = tape.constant(random_array({1, L, S}, 92));
  const auto D = tape.constant(Array<double>::full({E}, 0.5));
  const auto y = wmmoe::nd::selective_scan(tape.constant(u), delta, A, B, C, D).value();
  for (Index t = 0; t < L; ++t)
    for (Index e = 0; e < E; ++e) {
      double expect = 0.5 * u.at({0, t, e});
      for (Index s = 0; s < S; ++s) expect += C.value().at({0, t, s}) * 60.0 * B.value().at({0, t, s}) * u.at({0, t, e});
      EXPECT_NEAR(y.at({0, t, e}), expect, 1e-9 * std::max(1.0, std::abs(expect)));
    }
}

TEST(SsmBranch, SingleStepIsGatedLinearMap) {
  ParamStore<double> store(9);
  SsmBranch<double> m(store, "m", 4, 2, 1);
  Tape<double> tape;
  const auto x = random_array({1, 1, 1, 4}, 100);
  const auto y = m(tape, tape.constant(x)).value();
  // hand evaluation of the same chain for one step
  auto xz = m.in_proj(tape, tape.constant(x)).value();
  std::vector<double> u(4), z(4);
  auto silu = [](double a) { return a / (1 + std::exp(-a)); };
  const auto& k = m.pre_kernel->value;
  for (Index o = 0; o < 4; ++o) {
    double acc = m.pre_bias->value[o];
    for (Index i = 0; i < 4; ++i) acc += xz[i] * k[i * 4 + o];
    u[static_cast<std::size_t>(o)] = silu(acc);
    z[static_cast<std::size_t>(o)] = xz[4 + o];
  }
  const auto us = tape.constant(Array<double>({1, 1, 4}, u));
  const auto dl = m.delta_proj(tape, us).value();
  const auto bb = m.b_proj(tape, us).value();
  const auto cc = m.c_proj(tape, us).value();
  std::vector<double> gated(4);
  for (Index e = 0; e < 4; ++e) {
    const double delta = std::log1p(std::exp(dl[e]));
    double ye = m.skip->value[e] * u[static_cast<std::size_t>(e)];
    for (Index s = 0; s < 2; ++s) ye += cc[s] * delta * bb[s] * u[static_cast<std::size_t>(e)];
    gated[static_cast<std::size_t>(e)] = ye * silu(z[static_cast<std::size_t>(e)]);
  }
  const auto expect = m.out_proj(tape, tape.constant(Array<double>({1, 4}, gated))).value();
  for (Index d = 0; d < 4; ++d) EXPECT_NEAR(y[d], expect[d], 1e-12);
}

TEST(SsmBranch, GradientMatchesFiniteDifference) {
  ParamStore<double> store(10);
  SsmRefine<double> ssm(store, "s", [] {
    auto c = small_config();
    c.d_model = 3;
    c.ssm_state = 2;
    return c;
  }());
  auto r = wmmoe::testing::grad_check(
      [&](Tape<double>& t, const auto& x) { return wmmoe::nd::sum(wmmoe::nd::square(ssm(t, x[0]))); },
      {random_array({1, 4, 2, 3}, 110)});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(SsmBranch, RuntimeLinearInSequenceLength) {
  ParamStore<float> store(11);
  SsmBranch<float> m(store, "m", 32, 8, 3);
  auto time_for = [&](Index L) {
    double best = 1e30;
    for (int rep = 0; rep < 5; ++rep) {
      Tape<float> tape(TapeOptions{false, false, 0, 0});
      auto x = tape.constant(Array<float>::full({4, L, 4, 32}, 0.1f));
      const auto t0 = std::chrono::steady_clock::now();
      auto y = m(tape, x);
      const auto t1 = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
      EXPECT_EQ(y.dim(1), L);
    }
    return best;
  };
  time_for(16);
  const double a = time_for(128), b = time_for(256);
  EXPECT_LE(b / a, 2.5) << a << " s vs " << b << " s";
}

TEST(Router, EqualLogitsAndSingleExpert) {
  auto cfg = small_config();
  ParamStore<double> store(12);
  MoeBlock<double> block(store, "b", cfg);
  for (auto* p : store.all())
    if (p->name.find("/router/fc2/") != std::string::npos) fill(*p, 0.0);
  Tape<double> tape;
  const auto p = block.route(tape, tape.constant(random_array({2, 5, 8}, 120))).value();
  for (Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], 1.0 / 3.0, 1e-15);

  cfg.experts = 1;
  ParamStore<double> one(13);
  MoeBlock<double> single(one, "b", cfg);
  const auto q = single.route(tape, tape.constant(random_array({2, 5, 8}, 121))).value();
  for (Index i = 0; i < q.size(); ++i) EXPECT_EQ(q[i], 1.0);
}

TEST(Router, TopKRenormalizes) {
  Tape<double> tape;
  const auto p = tape.constant(Array<double>({1, 4}, {0.5, 0.3, 0.15, 0.05}));
  const auto k2 = top_k_gates(p, 2).value();
  EXPECT_NEAR(k2[0], 0.625, 1e-15);
  EXPECT_NEAR(k2[1], 0.375, 1e-15);
  EXPECT_EQ(k2[2], 0.0);
  EXPECT_EQ(k2[3], 0.0);
  EXPECT_EQ(max_abs_diff(top_k_gates(p, 4).value(), p.value()), 0.0);
  EXPECT_THROW(top_k_gates(p, 5), wmmoe::nd::ConfigError);
  EXPECT_THROW(top_k_gates(p, 0), wmmoe::nd::ConfigError);
  auto cfg = small_config();
  cfg.top_k = 4;
  EXPECT_THROW(cfg.validate(), wmmoe::nd::ConfigError);
}

TEST(Router, TopKAtInferenceKeepsExactlyK) {
  auto cfg = small_config();
  cfg.top_k = 2;
  ParamStore<double> store(14);
  MoeBlock<double> block(store, "b", cfg);
  Tape<double> tape;
  Var<double> gates;
  block(tape, tape.constant(random_array({2, 5, 8}, 140)), &gates);
  const auto& g = gates.value();
  for (Index r = 0; r < 10; ++r) {
    int positive = 0;
    double total = 0;
    for (Index k = 0; k < 3; ++k) {
      positive += g[r * 3 + k] > 0;
      total += g[r * 3 + k];
    }
    EXPECT_EQ(positive, 2);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  auto train = training_tape(1);
  Var<double> full;
  block(train, train.constant(random_array({2, 5, 8}, 140)), &full);
  for (Index i = 0; i < full.value().size(); ++i) EXPECT_GT(full.value()[i], 0.0);
}

TEST(MoeBlock, IdenticalExpertsIgnoreTheRouter) {
  ParamStore<double> store(15);
  MoeBlock<double> block(store, "b", small_config());
  const auto& e = block.experts();
  for (std::size_t i = 1; i < e.size(); ++i) {
    e[i].first.weight->value = e[0].first.weight->value;
    e[i].first.bias->value = e[0].first.bias->value;
    e[i].second.weight->value = e[0].second.weight->value;
    e[i].second.bias->value = e[0].second.bias->value;
  }
  const auto x = random_array({2, 6, 8}, 150);
  Tape<double> tape;
  const auto before = block(tape, tape.constant(x)).value();
  for (auto* p : store.all())
    if (p->name.find("/router/") != std::string::npos) p->value = random_array(p->value.shape(), 151, 3.0);
  const auto after = block(tape, tape.constant(x)).value();
  EXPECT_LE(max_abs_diff(before, after), 1e-9);
}

TEST(MoeBlock, SingleExpertMatchesRouterFreeModelBitForBit) {
  auto cfg = small_config();
  cfg.experts = 1;
  auto dense = cfg;
  dense.dense = true;
  ParamStore<double> sa(16), sb(16);
  DecisionModule<double> moe(sa, "d", cfg), plain(sb, "d", dense);
  const auto x = random_inputs(cfg, 2, 5, 160);
  Tape<double> ta, tb;
  const auto fa = run(moe, ta, x), fb = run(plain, tb, x);
  EXPECT_EQ(max_abs_diff(fa.mu.value(), fb.mu.value()), 0.0);
  EXPECT_EQ(max_abs_diff(fa.scale.value(), fb.scale.value()), 0.0);
  EXPECT_EQ(max_abs_diff(fa.pi.value(), fb.pi.value()), 0.0);
}

TEST(Decoder, ProbabilitiesAndScalesValid) {
  ParamStore<double> store(17);
  auto cfg = small_config();
  TrajectoryDecoder<double> dec(store, "dec", cfg);
  Tape<double> tape;
  const auto f = dec(tape, tape.constant(random_array({3, 4, 3, 8}, 170, 5.0)),
                     tape.constant(random_array({3, 8}, 171, 5.0)));
  EXPECT_EQ(f.mu.shape(), (Shape{3, 3, 4, 2}));
  EXPECT_EQ(f.scale.shape(), (Shape{3, 3, 4, 2}));
  EXPECT_EQ(f.pi.shape(), (Shape{3, 3}));
  for (Index i = 0; i < f.scale.value().size(); ++i) EXPECT_GT(f.scale.value()[i], 0.0);
  for (Index b = 0; b < 3; ++b) {
    double s = 0;
    for (Index k = 0; k < 3; ++k) {
      EXPECT_GT(f.pi.value().at({b, k}), 0.0);
      s += f.pi.value().at({b, k});
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Decoder, ZeroHeadsGiveConstantTrajectory) {
  ParamStore<double> store(18);
  auto cfg = small_config();
  TrajectoryDecoder<double> dec(store, "dec", cfg);
  fill(*dec.loc_head().first.weight, 0.0);
  fill(*dec.loc_head().second.weight, 0.0);
  dec.loc_head().second.bias->value = Array<double>({2}, {0.3, -0.2});
  Tape<double> tape;
  const auto mu = dec(tape, tape.constant(random_array({2, 4, 3, 8}, 180)), tape.constant(random_array({2, 8}, 181)))
                      .mu.value();
  for (Index b = 0; b < 2; ++b)
    for (Index k = 0; k < 3; ++k)
      for (Index t = 0; t < 4; ++t) {
        EXPECT_DOUBLE_EQ(mu.at({b, k, t, 0}), 0.3 * cfg.position_scale);
        EXPECT_DOUBLE_EQ(mu.at({b, k, t, 1}), -0.2 * cfg.position_scale);
      }
}

TEST(DecisionModule, ShapesPreservedThroughEveryStage) {
  ParamStore<double> store(19);
  auto cfg = small_config();
  DecisionModule<double> m(store, "d", cfg);
  DecisionTrace<double> trace;
  Tape<double> tape;
  const auto f = run(m, tape, random_inputs(cfg, 2, 5, 190), &trace);
  const Shape grid{4, 3, 2, 8};
  EXPECT_EQ(trace.q_c.shape(), grid);
  EXPECT_EQ(trace.q_c_prime.shape(), grid);
  EXPECT_EQ(trace.f_c.shape(), grid);
  EXPECT_EQ(trace.f_moe.shape(), grid);
  ASSERT_EQ(trace.gates.size(), 2u);
  EXPECT_EQ(trace.gates[0].shape(), (Shape{2, 12, 3}));
  EXPECT_EQ(f.mu.shape(), (Shape{2, 3, 4, 2}));
  for (const auto* v : {&trace.q_c, &trace.q_c_prime, &trace.f_c, &trace.f_moe})
    for (Index i = 0; i < v->value().size(); ++i) ASSERT_TRUE(std::isfinite(v->value()[i]));
}

TEST(DecisionModule, GradientMatchesFiniteDifference) {
  ParamStore<double> store(20);
  auto cfg = small_config();
  cfg.d_model = 4;
  cfg.modes = 2;
  cfg.future = 3;
  cfg.experts = 2;
  cfg.blocks = 1;
  cfg.ssm_state = 2;
  cfg.position_scale = 1.0;
  DecisionModule<double> m(store, "d", cfg);
  auto r = wmmoe::testing::grad_check(
      [&](Tape<double>& t, const auto& x) {
        auto f = m(t, x[0], x[1], x[2], x[3]);
        return wmmoe::nd::sum(wmmoe::nd::square(f.mu)) + wmmoe::nd::sum(f.scale) +
               wmmoe::nd::sum(wmmoe::nd::square(f.pi));
      },
      {random_array({3, 2, 1, 4}, 200), random_array({1, 5, 4}, 201), random_array({1, 3, 4}, 202),
       random_array({1, 5, 4}, 203)});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(DecisionModule, EvalIsDeterministicTrainingIsSeeded) {
  ParamStore<double> store(21);
  auto cfg = small_config();
  cfg.dropout = 0.1;
  DecisionModule<double> m(store, "d", cfg);
  const auto x = random_inputs(cfg, 2, 5, 210);
  Tape<double> a, b;
  EXPECT_EQ(max_abs_diff(run(m, a, x).mu.value(), run(m, b, x).mu.value()), 0.0);
  auto c = training_tape(3), d = training_tape(3), e = training_tape(4);
  const auto mc = run(m, c, x).mu.value();
  EXPECT_EQ(max_abs_diff(mc, run(m, d, x).mu.value()), 0.0);
  EXPECT_GT(max_abs_diff(mc, run(m, e, x).mu.value()), 1e-9);
}

TEST(GateTelemetry, SimplexCsvAndSceneVectors) {
  ParamStore<double> store(22);
  auto cfg = small_config();
  DecisionModule<double> m(store, "d", cfg);
  DecisionTrace<double> trace;
  Tape<double> tape;
  run(m, tape, random_inputs(cfg, 2, 5, 220), &trace);
  GateTelemetry tel;
  for (std::size_t l = 0; l < trace.gates.size(); ++l)
    tel.record(static_cast<Index>(l), trace.gates[l].value(), {"Turning", "Common"}, {"s0", "s1"});
  EXPECT_LE(tel.max_simplex_error(), 1e-9);
  EXPECT_GT(tel.min_gate(), 0.0);
  ASSERT_EQ(tel.scene_vectors().size(), 2u);
  const auto& v = tel.scene_vectors().at("s0");
  ASSERT_EQ(v.size(), 6u);
  EXPECT_NEAR(v[0] + v[1] + v[2], 1.0, 1e-12);
  EXPECT_EQ(tel.scene_labels().at("s1"), "Common");
  std::ostringstream os;
  tel.write_csv(os);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "block,expert,scenario,mean_weight,token_count");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2 * 3 * 2);
  EXPECT_EQ(tel.cells().at({0, 0, "Turning"}).tokens, 12);
}
