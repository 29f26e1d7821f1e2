#include <gtest/gtest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "wmmoe/memory/memory.hpp"

using namespace wmmoe::memory;
using wmmoe::nd::Shape;
using wmmoe::testing::random_array;

namespace {

MemoryConfig small_config(Index modes = 3) {
  MemoryConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.modes = modes;
  c.history = 5;
  c.future = 6;
  c.backbone_width = 16;
  c.backbone_blocks = 2;
  c.backbone_heads = 4;
  return c;
}

void zero(wmmoe::nd::Parameter<double>& p) { p.value = Array<double>::zeros(p.value.shape()); }

void zero_output(const wmmoe::nd::MultiHeadAttention<double>& att) {
  zero(*att.wo.weight);
  zero(*att.wo.bias);
}

double max_abs_diff(const Array<double>& a, const Array<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Array<double> ones(Shape s) { return Array<double>::full(std::move(s), 1.0); }

struct Memories {
  Array<double> s, l, lm, n, nm;
};

Memories random_memories(Index B, Index M, Index N, std::uint64_t seed) {
  return {random_array({5, B, 8}, seed), random_array({M, B, 8}, seed + 1), ones({B, M}),
          random_array({B, N, 8}, seed + 2), ones({B, N})};
}

}  // namespace

TEST(PositionalEncoding, ClosedForm) {
  const auto pe = sinusoidal_encoding<double>(3, 4);
  ASSERT_EQ(pe.shape(), (Shape{3, 4}));
  EXPECT_DOUBLE_EQ(pe.at({0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(pe.at({0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(pe.at({2, 0}), std::sin(2.0));
  EXPECT_DOUBLE_EQ(pe.at({2, 1}), std::cos(2.0));
  EXPECT_DOUBLE_EQ(pe.at({1, 2}), std::sin(1.0 / 100.0));
  EXPECT_DOUBLE_EQ(pe.at({1, 3}), std::cos(1.0 / 100.0));
  EXPECT_THROW(sinusoidal_encoding<double>(3, 5), wmmoe::nd::ConfigError);
}

TEST(IntentionEncoder, Shapes) {
  for (Index k : {Index(1), Index(4)}) {
    ParamStore<double> store(1);
    IntentionEncoder<double> enc(store, "m", small_config(k));
    Tape<double> tape;
    const auto m = random_memories(2, 3, 4, 10);
    auto q = enc(tape, tape.constant(m.s), tape.constant(m.l), m.lm, tape.constant(m.n), m.nm);
    EXPECT_EQ(q.shape(), (Shape{6, k, 2, 8}));
  }
}

TEST(IntentionEncoder, ZeroProjectionsLeaveAnchorsAndMixAverages) {
  ParamStore<double> store(2);
  IntentionEncoder<double> enc(store, "m", small_config());
  zero_output(enc.scene_attention());
  zero_output(enc.lane_attention());
  zero_output(enc.neighbor_attention());
  Tape<double> tape;
  const auto m = random_memories(2, 3, 4, 20);
  const auto q = enc(tape, tape.constant(m.s), tape.constant(m.l), m.lm, tape.constant(m.n), m.nm).value();
  const auto& a = enc.anchor_param().value;
  for (Index f = 0; f < 6; ++f)
    for (Index k = 0; k < 3; ++k)
      for (Index b = 0; b < 2; ++b)
        for (Index d = 0; d < 8; ++d) {
          double mean = 0;
          for (Index t = 0; t < 5; ++t) mean += a.at({k, t, d}) / 5.0;
          EXPECT_NEAR(q.at({f, k, b, d}), mean, 1e-12);
        }
}

TEST(IntentionEncoder, EachMemoryChangesTheQueries) {
  ParamStore<double> store(3);
  IntentionEncoder<double> enc(store, "m", small_config());
  const auto m = random_memories(1, 3, 4, 30);
  auto run = [&](const Memories& x) {
    Tape<double> tape;
    return enc(tape, tape.constant(x.s), tape.constant(x.l), x.lm, tape.constant(x.n), x.nm).value();
  };
  const auto base = run(m);
  Memories s = m, l = m, n = m;
  s.s = random_array({5, 1, 8}, 31);
  l.l = random_array({3, 1, 8}, 32);
  n.n = random_array({1, 4, 8}, 33);
  EXPECT_GT(max_abs_diff(base, run(s)), 1e-6);
  EXPECT_GT(max_abs_diff(base, run(l)), 1e-6);
  EXPECT_GT(max_abs_diff(base, run(n)), 1e-6);
}

TEST(IntentionEncoder, ModesDifferThroughAnchors) {
  ParamStore<double> store(4);
  IntentionEncoder<double> enc(store, "m", small_config());
  Tape<double> tape;
  const auto m = random_memories(1, 3, 4, 40);
  const auto q = enc(tape, tape.constant(m.s), tape.constant(m.l), m.lm, tape.constant(m.n), m.nm).value();
  double diff = 0;
  for (Index d = 0; d < 8; ++d) diff = std::max(diff, std::abs(q.at({0, 0, 0, d}) - q.at({0, 1, 0, d})));
  EXPECT_GT(diff, 1e-6);
}

TEST(IntentionEncoder, FullyMaskedMemoryIsSkipped) {
  ParamStore<double> store(5);
  IntentionEncoder<double> enc(store, "m", small_config());
  Tape<double> tape;
  auto q = enc.anchors(tape, 2);
  const auto l = random_array({3, 2, 8}, 50);
  const auto out = enc.attend_lanes(tape, q, tape.constant(l), Array<double>::zeros({2, 3})).value();
  EXPECT_EQ(max_abs_diff(out, q.value()), 0.0);
}

TEST(IntentionEncoder, MaskedNeighborsIgnoredAndOrderFree) {
  ParamStore<double> store(6);
  IntentionEncoder<double> enc(store, "m", small_config());
  Tape<double> tape;
  auto q = enc.anchors(tape, 1);
  const auto n = random_array({1, 3, 8}, 60);
  const Array<double> mask({1, 3}, {1, 1, 0});
  const auto base = enc.attend_neighbors(tape, q, tape.constant(n), mask).value();

  auto v = n.to_vector();
  for (Index d = 0; d < 8; ++d) v[static_cast<std::size_t>(16 + d)] = 100.0;
  const auto junk = enc.attend_neighbors(tape, q, tape.constant(Array<double>({1, 3, 8}, v)), mask).value();
  EXPECT_LE(max_abs_diff(base, junk), 1e-12);

  auto w = n.to_vector();
  std::swap_ranges(w.begin(), w.begin() + 8, w.begin() + 8);
  const auto swapped = enc.attend_neighbors(tape, q, tape.constant(Array<double>({1, 3, 8}, w)), mask).value();
  EXPECT_LE(max_abs_diff(base, swapped), 1e-12);
}

TEST(IntentionEncoder, PerQueryKeyOffsetDoesNotChangeWeights) {
  ParamStore<double> store(7);
  wmmoe::nd::MultiHeadAttention<double> att(store, "a", 8, 2);
  Tape<double> tape;
  auto q = tape.constant(random_array({2, 5, 8}, 70));
  auto k = tape.constant(random_array({2, 4, 8}, 71));
  auto offset = tape.constant(random_array({2, 5, 8}, 72));
  const auto plain = att(tape, q, k, k).value();
  const auto shifted = att(tape, q, k, k, nullptr, &offset).value();
  EXPECT_LE(max_abs_diff(plain, shifted), 1e-12);
}

TEST(IntentionEncoder, GradientMatchesFiniteDifference) {
  ParamStore<double> store(8);
  auto cfg = small_config(2);
  cfg.future = 3;
  IntentionEncoder<double> enc(store, "m", cfg);
  const Array<double> lm({1, 2}, {1, 0});
  const Array<double> nm({1, 3}, {1, 1, 1});
  auto r = wmmoe::testing::grad_check(
      [&](Tape<double>& t, const auto& x) {
        return wmmoe::nd::sum(wmmoe::nd::square(enc(t, x[0], x[1], lm, x[2], nm)));
      },
      {random_array({5, 1, 8}, 80), random_array({2, 1, 8}, 81), random_array({1, 3, 8}, 82)});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Standardize, MatchesTwoPassOracle) {
  const auto x = random_array({6, 3}, 90, 2.0);
  const Array<double> w({6, 1}, {1, 0, 1, 1, 0, 1});
  Tape<double> tape;
  const auto all = standardize_rows(tape.constant(x), static_cast<const Array<double>*>(nullptr), 1e-5).value();
  const auto some = standardize_rows(tape.constant(x), &w, 1e-5).value();
  for (Index c = 0; c < 3; ++c) {
    for (bool weighted : {false, true}) {
      double n = 0, mean = 0, var = 0;
      for (Index r = 0; r < 6; ++r)
        if (!weighted || w[r] != 0) n += 1, mean += x.at({r, c});
      mean /= n;
      for (Index r = 0; r < 6; ++r)
        if (!weighted || w[r] != 0) var += (x.at({r, c}) - mean) * (x.at({r, c}) - mean);
      var /= n;
      for (Index r = 0; r < 6; ++r) {
        const double expect = !weighted || w[r] != 0 ? (x.at({r, c}) - mean) / std::sqrt(var + 1e-5) : 0.0;
        EXPECT_NEAR((weighted ? some : all).at({r, c}), expect, 1e-12);
      }
    }
  }
}

TEST(Standardize, ConstantFeatureAndEmptyWeights) {
  const Array<double> x({3, 2}, {4, 1, 4, 2, 4, 3});
  Tape<double> tape;
  const auto y = standardize_rows(tape.constant(x), static_cast<const Array<double>*>(nullptr), 1e-5).value();
  for (Index r = 0; r < 3; ++r) EXPECT_EQ(y.at({r, 0}), 0.0);
  const auto none = Array<double>::zeros({3, 1});
  const auto z = standardize_rows(tape.constant(x), &none, 1e-5).value();
  for (Index i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], 0.0);
}

TEST(LanguageEncoder, TokenizerShapesAndMaskedNeighbors) {
  ParamStore<double> store(10);
  LanguageEncoder<double> lang(store, "lang", small_config());
  const auto t = random_array({2, 5, 8}, 100);
  const auto n = random_array({2, 3, 8}, 101);
  const Array<double> mask({2, 3}, {1, 1, 0, 1, 0, 0});
  Tape<double> tape;
  LangFeatures<double> f = lang(tape, tape.constant(t), tape.constant(n), mask);
  EXPECT_EQ(f.tokens.shape(), (Shape{2, 5, 16}));
  EXPECT_EQ(f.hidden.shape(), (Shape{2, 5, 16}));
  EXPECT_EQ(f.t_llm.shape(), (Shape{2, 5, 8}));

  auto v = n.to_vector();
  for (Index d = 0; d < 8; ++d) v[static_cast<std::size_t>(2 * 8 + d)] = 50.0;
  LangFeatures<double> g = lang(tape, tape.constant(t), tape.constant(Array<double>({2, 3, 8}, v)), mask);
  EXPECT_LE(max_abs_diff(f.t_llm.value(), g.t_llm.value()), 1e-12);
}

TEST(LanguageEncoder, ZeroProjectionGivesZeroOutput) {
  ParamStore<double> store(11);
  LanguageEncoder<double> lang(store, "lang", small_config());
  for (auto* p : store.all())
    if (p->name.rfind("lang/projection/", 0) == 0) zero(*p);
  Tape<double> tape;
  auto f = lang(tape, tape.constant(random_array({1, 5, 8}, 110)), tape.constant(random_array({1, 2, 8}, 111)),
                ones({1, 2}));
  for (Index i = 0; i < f.t_llm.value().size(); ++i) EXPECT_EQ(f.t_llm.value()[i], 0.0);
}

TEST(LanguageEncoder, GradientMatchesFiniteDifference) {
  ParamStore<double> store(12);
  LanguageEncoder<double> lang(store, "lang", small_config());
  const Array<double> mask({1, 3}, {1, 1, 0});
  auto r = wmmoe::testing::grad_check(
      [&](Tape<double>& t, const auto& x) {
        return wmmoe::nd::sum(wmmoe::nd::square(lang(t, x[0], x[1], mask).t_llm));
      },
      {random_array({1, 5, 8}, 120), random_array({1, 3, 8}, 121)});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(FrozenBackbone, SameWeightsForEveryModelSeed) {
  ParamStore<double> a(1), b(2);
  FrozenBackbone<double> fa(a, 16, 2, 4), fb(b, 16, 2, 4);
  ASSERT_EQ(a.all().size(), b.all().size());
  for (std::size_t i = 0; i < a.all().size(); ++i) {
    EXPECT_TRUE(a.all()[i]->frozen);
    EXPECT_EQ(a.all()[i]->name.rfind("frozen/backbone/", 0), 0u);
    EXPECT_EQ(max_abs_diff(a.all()[i]->value, b.all()[i]->value), 0.0);
  }
  EXPECT_TRUE(a.trainable().empty());
}

TEST(FrozenBackbone, CausalAndDeterministic) {
  ParamStore<double> store(3);
  FrozenBackbone<double> bb(store, 16, 2, 4);
  const auto x = random_array({1, 5, 16}, 130);
  auto v = x.to_vector();
  for (Index d = 0; d < 16; ++d) v[static_cast<std::size_t>(4 * 16 + d)] += d % 3 == 0 ? 1.0 : -0.5;
  Tape<double> tape;
  const auto y1 = bb(tape, tape.constant(x)).value();
  const auto y2 = bb(tape, tape.constant(x)).value();
  const auto y3 = bb(tape, tape.constant(Array<double>({1, 5, 16}, v))).value();
  EXPECT_EQ(max_abs_diff(y1, y2), 0.0);
  for (Index t = 0; t < 4; ++t)
    for (Index d = 0; d < 16; ++d) EXPECT_NEAR(y1.at({0, t, d}), y3.at({0, t, d}), 1e-12);
  double last = 0;
  for (Index d = 0; d < 16; ++d) last = std::max(last, std::abs(y1.at({0, 4, d}) - y3.at({0, 4, d})));
  EXPECT_GT(last, 1e-6);
  EXPECT_THROW(bb(tape, tape.constant(random_array({1, 5, 8}, 131))), wmmoe::nd::ConfigError);
}

TEST(FrozenBackbone, BackwardLeavesFrozenGradientsEmpty) {
  ParamStore<double> store(13);
  LanguageEncoder<double> lang(store, "lang", small_config());
  store.zero_grad();
  Tape<double> tape;
  auto f = lang(tape, tape.constant(random_array({1, 5, 8}, 140)), tape.constant(random_array({1, 2, 8}, 141)),
                ones({1, 2}));
  tape.backward(wmmoe::nd::sum(wmmoe::nd::square(f.t_llm)));
  double frozen = 0, trainable = 0;
  for (auto* p : store.all())
    for (double g : p->grad) (p->frozen ? frozen : trainable) += std::abs(g);
  EXPECT_EQ(frozen, 0.0);
  EXPECT_GT(trainable, 0.0);
}

TEST(FrozenBackbone, FloatRunsAtDefaultSize) {
  ParamStore<float> store(14);
  MemoryConfig cfg;
  LanguageEncoder<float> lang(store, "lang", cfg);
  IntentionEncoder<float> intent(store, "intent", cfg);
  Tape<float> tape;
  auto t = tape.constant(Array<float>::full({2, 5, 64}, 0.5f));
  auto n = tape.constant(Array<float>::full({2, 3, 64}, 0.25f));
  const auto f = lang(tape, t, n, Array<float>::full({2, 3}, 1.0f));
  EXPECT_EQ(f.t_llm.shape(), (Shape{2, 5, 64}));
  auto s = wmmoe::nd::permute(t, {1, 0, 2});
  auto l = wmmoe::nd::permute(n, {1, 0, 2});
  const auto q = intent(tape, s, l, Array<float>::full({2, 3}, 1.0f), n, Array<float>::full({2, 3}, 1.0f));
  EXPECT_EQ(q.shape(), (Shape{12, 10, 2, 64}));
  for (Index i = 0; i < q.value().size(); ++i) ASSERT_TRUE(std::isfinite(q.value()[i]));
}
