#include "wmmoe/memory/memory.hpp"

#include <cmath>

namespace wmmoe::memory {

using nd::Shape;

template <typename T>
Array<T> sinusoidal_encoding(Index length, Index d) {
  if (d % 2 != 0) throw nd::ConfigError("positional encoding width must be even, got " + std::to_string(d));
  std::vector<T> v(static_cast<std::size_t>(length * d));
  for (Index p = 0; p < length; ++p) {
    for (Index i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
      v[static_cast<std::size_t>(p * d + 2 * i)] = static_cast<T>(std::sin(angle));
      v[static_cast<std::size_t>(p * d + 2 * i + 1)] = static_cast<T>(std::cos(angle));
    }
  }
  return Array<T>({length, d}, std::move(v));
}

namespace {

template <typename T>
Var<T> has_keys(Tape<T>& tape, const Array<T>& mask) {
  const Index R = mask.dim(0), L = mask.dim(1);
  std::vector<T> v(static_cast<std::size_t>(R), T(0));
  for (Index r = 0; r < R; ++r)
    for (Index j = 0; j < L; ++j)
      if (mask[r * L + j] != T(0)) v[static_cast<std::size_t>(r)] = T(1);
  return tape.constant(Array<T>({R, 1, 1}, std::move(v)));
}

}  // namespace

template <typename T>
IntentionEncoder<T>::IntentionEncoder(ParamStore<T>& store, const std::string& name, const MemoryConfig& config)
    : config_(config) {
  const Index K = config.modes, T_ = config.history, D = config.d_model;
  if (K < 1) throw nd::ConfigError("mode count must be >= 1");
  if (config.future < 1 || T_ < 1) throw nd::ConfigError("history and future lengths must be >= 1");
  pe_ = sinusoidal_encoding<T>(T_, D);
  anchor_ = &store.create(name + "/anchors", {K, T_, D}, nd::Init::normal(config.anchor_std));
  mix_ = &store.create(name + "/expand", {config.future, T_}, nd::Init::constant(1.0 / static_cast<double>(T_)));
  const T drop = static_cast<T>(config.dropout);
  scene_att_ = nd::MultiHeadAttention<T>(store, name + "/scene_att", D, config.heads, drop);
  lane_att_ = nd::MultiHeadAttention<T>(store, name + "/lane_att", D, config.heads, drop);
  neighbor_att_ = nd::MultiHeadAttention<T>(store, name + "/neighbor_att", D, config.heads, drop);
  scene_ln_ = nd::LayerNorm<T>(store, name + "/scene_ln", D);
  lane_ln_ = nd::LayerNorm<T>(store, name + "/lane_ln", D);
  neighbor_ln_ = nd::LayerNorm<T>(store, name + "/neighbor_ln", D);
}

template <typename T>
Var<T> IntentionEncoder<T>::anchors(Tape<T>& tape, Index batch) const {
  const Index K = config_.modes, T_ = config_.history, D = config_.d_model;
  auto a = nd::reshape(tape.param(*anchor_), Shape{1, K, T_, D});
  return nd::reshape(nd::broadcast_to(a, Shape{batch, K, T_, D}), Shape{batch * K, T_, D});
}

template <typename T>
Var<T> IntentionEncoder<T>::tile_modes(const Var<T>& x) const {
  const Index B = x.dim(0), L = x.dim(1), D = x.dim(2), K = config_.modes;
  auto t = nd::broadcast_to(nd::reshape(x, Shape{B, 1, L, D}), Shape{B, K, L, D});
  return nd::reshape(t, Shape{B * K, L, D});
}

template <typename T>
Array<T> IntentionEncoder<T>::tile_mask(const Array<T>& mask) const {
  const Index B = mask.dim(0), L = mask.dim(1), K = config_.modes;
  std::vector<T> v;
  v.reserve(static_cast<std::size_t>(B * K * L));
  for (Index b = 0; b < B; ++b)
    for (Index k = 0; k < K; ++k)
      for (Index j = 0; j < L; ++j) v.push_back(mask[b * L + j]);
  return Array<T>({B * K, L}, std::move(v));
}

template <typename T>
Var<T> IntentionEncoder<T>::stage(Tape<T>& tape, const nd::MultiHeadAttention<T>& att, const nd::LayerNorm<T>& ln,
                                  const Var<T>& q, const Var<T>& keys, const Var<T>& values, const Array<T>* mask,
                                  const Var<T>* key_offset) const {
  auto upd = ln(tape, att(tape, q, keys, values, mask, key_offset));
  // with no valid key the attention output is just the output bias; drop it
  if (mask != nullptr) upd = upd * has_keys(tape, *mask);
  return q + upd;
}

template <typename T>
Var<T> IntentionEncoder<T>::attend_scene(Tape<T>& tape, const Var<T>& q, const Var<T>& s_enc) const {
  if (s_enc.rank() != 3 || s_enc.dim(0) != config_.history || s_enc.dim(2) != config_.d_model) {
    throw nd::DimensionError("attend_scene: s_enc must be [T, B, D], got " + nd::to_string(s_enc.shape()));
  }
  auto t_rep = tile_modes(nd::permute(s_enc, {1, 0, 2}));
  auto keys = t_rep + tape.constant(pe_);
  return stage(tape, scene_att_, scene_ln_, q, keys, t_rep, nullptr, nullptr);
}

template <typename T>
Var<T> IntentionEncoder<T>::attend_lanes(Tape<T>& tape, const Var<T>& q, const Var<T>& l_enc,
                                         const Array<T>& l_mask) const {
  if (l_enc.rank() != 3 || l_mask.shape() != Shape{l_enc.dim(1), l_enc.dim(0)}) {
    throw nd::DimensionError("attend_lanes: l_enc " + nd::to_string(l_enc.shape()) + " with mask " +
                             nd::to_string(l_mask.shape()));
  }
  auto keys = tile_modes(nd::permute(l_enc, {1, 0, 2}));
  const Array<T> mask = tile_mask(l_mask);
  auto offset = nd::broadcast_to(tape.constant(pe_), q.shape());
  return stage(tape, lane_att_, lane_ln_, q, keys, keys, &mask, &offset);
}

template <typename T>
Var<T> IntentionEncoder<T>::attend_neighbors(Tape<T>& tape, const Var<T>& q, const Var<T>& n_enc,
                                             const Array<T>& n_mask) const {
  if (n_enc.rank() != 3 || n_mask.shape() != Shape{n_enc.dim(0), n_enc.dim(1)}) {
    throw nd::DimensionError("attend_neighbors: n_enc " + nd::to_string(n_enc.shape()) + " with mask " +
                             nd::to_string(n_mask.shape()));
  }
  auto keys = tile_modes(n_enc);
  const Array<T> mask = tile_mask(n_mask);
  auto offset = nd::broadcast_to(tape.constant(pe_), q.shape());
  return stage(tape, neighbor_att_, neighbor_ln_, q, keys, keys, &mask, &offset);
}

template <typename T>
Var<T> IntentionEncoder<T>::expand(Tape<T>& tape, const Var<T>& q, Index batch) const {
  const Index K = config_.modes, D = config_.d_model, F = config_.future;
  // q_f = sum_t W[f, t] q_t
  auto mixed = nd::matmul(nd::permute(q, {0, 2, 1}), tape.param(*mix_), false, true);  // [BK, D, F]
  auto out = nd::reshape(nd::permute(mixed, {0, 2, 1}), Shape{batch, K, F, D});
  return nd::permute(out, {2, 1, 0, 3});
}

template <typename T>
Var<T> IntentionEncoder<T>::operator()(Tape<T>& tape, const Var<T>& s_enc, const Var<T>& l_enc,
                                       const Array<T>& l_mask, const Var<T>& n_enc, const Array<T>& n_mask) const {
  const Index B = s_enc.dim(1);
  auto q = anchors(tape, B);
  q = attend_scene(tape, q, s_enc);
  q = attend_lanes(tape, q, l_enc, l_mask);
  q = attend_neighbors(tape, q, n_enc, n_mask);
  return expand(tape, q, B);
}

template <typename T>
FrozenBackbone<T>::FrozenBackbone(ParamStore<T>& store, Index width, Index blocks, Index heads)
    : width_(width), heads_(heads) {
  if (heads < 1 || width % heads != 0) throw nd::ConfigError("backbone heads must divide its width");
  const std::string ns = kNamespace;
  for (Index i = 0; i < blocks; ++i) {
    const std::string p = ns + "/block" + std::to_string(i);
    Block b;
    b.ln1 = nd::LayerNorm<T>(store, p + "/ln1", width);
    b.ln2 = nd::LayerNorm<T>(store, p + "/ln2", width);
    b.q = nd::Linear<T>(store, p + "/q", width, width);
    b.k = nd::Linear<T>(store, p + "/k", width, width);
    b.v = nd::Linear<T>(store, p + "/v", width, width);
    b.o = nd::Linear<T>(store, p + "/o", width, width);
    b.fc1 = nd::Linear<T>(store, p + "/fc1", width, 2 * width);
    b.fc2 = nd::Linear<T>(store, p + "/fc2", 2 * width, width);
    blocks_.push_back(std::move(b));
  }
  final_ln_ = nd::LayerNorm<T>(store, ns + "/ln_f", width);
}

template <typename T>
Var<T> FrozenBackbone<T>::operator()(Tape<T>& tape, const Var<T>& tokens) const {
  if (tokens.rank() != 3) throw nd::DimensionError("backbone expects [B, L, W], got " + nd::to_string(tokens.shape()));
  if (tokens.dim(2) != width_) {
    throw nd::ConfigError("backbone width " + std::to_string(width_) + " does not match token width " +
                          std::to_string(tokens.dim(2)));
  }
  const Index L = tokens.dim(1);
  std::vector<T> mask(static_cast<std::size_t>(L * L), T(0));
  for (Index i = 0; i < L; ++i)
    for (Index j = i + 1; j < L; ++j) mask[static_cast<std::size_t>(i * L + j)] = T(-1e9);
  auto causal = tape.constant(Array<T>({1, 1, L, L}, std::move(mask)));
  auto x = tokens + tape.constant(sinusoidal_encoding<T>(L, width_));
  for (const auto& b : blocks_) {
    auto h = b.ln1(tape, x);
    auto ctx = nd::scaled_dot_attention(b.q(tape, h), b.k(tape, h), b.v(tape, h), heads_,
                                          static_cast<const Array<T>*>(nullptr), T(0), &causal);
    x = x + b.o(tape, ctx);
    x = x + b.fc2(tape, nd::gelu(b.fc1(tape, b.ln2(tape, x))));
  }
  return final_ln_(tape, x);
}

template <typename T>
Var<T> standardize_rows(const Var<T>& x, const Array<T>* weights, T eps) {
  if (x.rank() != 2) throw nd::DimensionError("standardize_rows expects [R, D], got " + nd::to_string(x.shape()));
  const Index R = x.dim(0);
  auto& tape = x.tape();
  std::vector<T> w(static_cast<std::size_t>(R), T(1));
  if (weights != nullptr) {
    if (weights->size() != R) throw nd::DimensionError("standardize_rows: weight count mismatch");
    for (Index r = 0; r < R; ++r) w[static_cast<std::size_t>(r)] = (*weights)[r] != T(0) ? T(1) : T(0);
  }
  T n = T(0);
  for (T v : w) n += v;
  auto wv = tape.constant(Array<T>({R, 1}, std::move(w)));
  if (n == T(0)) return x * wv;
  auto mean = nd::sum_axis(x * wv, 0, true) * (T(1) / n);
  auto centered = (x - mean) * wv;
  auto var = nd::sum_axis(nd::square(centered), 0, true) * (T(1) / n);
  return centered / nd::sqrt(nd::add_scalar(var, eps));
}

template <typename T>
LanguageEncoder<T>::LanguageEncoder(ParamStore<T>& store, const std::string& name, const MemoryConfig& config)
    : config_(config),
      tokenizer_(store, name + "/tokenizer", 2 * config.d_model, config.backbone_width, config.backbone_width,
                 nd::Activation::Gelu),
      projection_(store, name + "/projection", config.backbone_width, config.d_model, config.d_model),
      backbone_(store, config.backbone_width, config.backbone_blocks, config.backbone_heads) {}

template <typename T>
Var<T> LanguageEncoder<T>::tokenize(Tape<T>& tape, const Var<T>& t_enc, const Var<T>& n_enc, const Array<T>& n_mask,
                                    LangFeatures<T>* out) const {
  const Index B = t_enc.dim(0), T_ = t_enc.dim(1), D = t_enc.dim(2), N = n_enc.dim(1);
  if (n_enc.rank() != 3 || n_enc.dim(0) != B || n_enc.dim(2) != D || n_mask.shape() != Shape{B, N}) {
    throw nd::DimensionError("tokenize: t_enc " + nd::to_string(t_enc.shape()) + ", n_enc " +
                             nd::to_string(n_enc.shape()) + ", mask " + nd::to_string(n_mask.shape()));
  }
  const T eps = static_cast<T>(config_.norm_eps);
  auto t_norm = nd::reshape(standardize_rows(nd::reshape(t_enc, Shape{B * T_, D}), static_cast<const Array<T>*>(nullptr), eps), Shape{B, T_, D});
  const Array<T> rows = n_mask.reshaped({B * N});
  auto n_norm = nd::reshape(standardize_rows(nd::reshape(n_enc, Shape{B * N, D}), &rows, eps), Shape{B, N, D});

  std::vector<T> inv(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    T c = T(0);
    for (Index j = 0; j < N; ++j) c += n_mask[b * N + j] != T(0) ? T(1) : T(0);
    inv[static_cast<std::size_t>(b)] = c > T(0) ? T(1) / c : T(0);
  }
  auto summary = nd::sum_axis(n_norm, 1, true) * tape.constant(Array<T>({B, 1, 1}, std::move(inv)));
  auto joined = nd::concat(std::vector<Var<T>>{t_norm, nd::broadcast_to(summary, Shape{B, T_, D})}, 2);
  auto tokens = tokenizer_(tape, joined);
  if (out != nullptr) {
    out->t_norm = t_norm;
    out->n_norm = n_norm;
    out->tokens = tokens;
  }
  return tokens;
}

template <typename T>
Var<T> LanguageEncoder<T>::project(Tape<T>& tape, const Var<T>& hidden) const {
  return projection_(tape, hidden);
}

template <typename T>
LangFeatures<T> LanguageEncoder<T>::operator()(Tape<T>& tape, const Var<T>& t_enc, const Var<T>& n_enc,
                                               const Array<T>& n_mask) const {
  LangFeatures<T> f;
  tokenize(tape, t_enc, n_enc, n_mask, &f);
  f.hidden = backbone_(tape, f.tokens);
  f.t_llm = project(tape, f.hidden);
  return f;
}

template Array<float> sinusoidal_encoding(Index, Index);
template Array<double> sinusoidal_encoding(Index, Index);
template Var<float> standardize_rows(const Var<float>&, const Array<float>*, float);
template Var<double> standardize_rows(const Var<double>&, const Array<double>*, double);
template class IntentionEncoder<float>;
template class IntentionEncoder<double>;
template class FrozenBackbone<float>;
template class FrozenBackbone<double>;
template class LanguageEncoder<float>;
template class LanguageEncoder<double>;

}  // namespace wmmoe::memory
