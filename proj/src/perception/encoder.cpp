#include "wmmoe/perception/encoder.hpp"

namespace wmmoe::perception {

using nd::Shape;

namespace {

// [B, L] mask -> [B, L, 1] constant for row masking.
template <typename T>
Var<T> row_mask(Tape<T>& tape, const Array<T>& mask) {
  return tape.constant(mask.reshaped({mask.dim(0), mask.dim(1), 1}));
}

// [B, 1, 1] with 1 where the batch row has any valid key.
template <typename T>
Var<T> has_keys(Tape<T>& tape, const Array<T>& mask) {
  const Index B = mask.dim(0), L = mask.dim(1);
  std::vector<T> v(static_cast<std::size_t>(B), T(0));
  for (Index b = 0; b < B; ++b)
    for (Index j = 0; j < L; ++j)
      if (mask[b * L + j] != T(0)) v[static_cast<std::size_t>(b)] = T(1);
  return tape.constant(Array<T>({B, 1, 1}, std::move(v)));
}

}  // namespace

Index bev_feature_size(Index in) {
  Index s = in;
  s = (s + 2 - 4) / 2 + 1;
  s = (s + 2 - 4) / 2 + 1;
  s = (s + 2 - 3) / 2 + 1;
  return s;
}

template <typename T>
GraphAttention<T>::GraphAttention(ParamStore<T>& store, const std::string& name, Index d)
    : proj(store, name + "/w", d, d, false) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  a_src = &store.create(name + "/a_src", {d, 1}, nd::Init::uniform(bound));
  a_dst = &store.create(name + "/a_dst", {d, 1}, nd::Init::uniform(bound));
}

template <typename T>
Var<T> GraphAttention<T>::operator()(Tape<T>& tape, const Var<T>& h, const Array<T>& adj) const {
  const Index B = h.dim(0), M = h.dim(1);
  if (adj.shape() != Shape{B, M, M}) {
    throw nd::DimensionError("graph attention: adjacency " + nd::to_string(adj.shape()) + " for nodes " +
                             nd::to_string(h.shape()));
  }
  auto z = proj(tape, h);
  auto src = nd::matmul(z, tape.param(*a_src));                                   // [B, M, 1]
  auto dst = nd::reshape(nd::matmul(z, tape.param(*a_dst)), Shape{B, 1, M});      // [B, 1, M]
  auto alpha = nd::masked_softmax(nd::leaky_relu(src + dst, T(0.2)), adj);
  return h + nd::relu(nd::matmul(alpha, z));
}

template <typename T>
PerceptionEncoder<T>::PerceptionEncoder(ParamStore<T>& store, const std::string& name,
                                        const PerceptionConfig& config)
    : config_(config) {
  const Index D = config.d_model;
  const T drop = static_cast<T>(config.dropout);
  if (D % config.heads != 0) throw nd::ConfigError("perception: heads must divide d_model");
  target_mlp_ = nd::Mlp<T>(store, name + "/target_mlp", kAgentFeatures, D, D);
  target_gru_ = nd::Gru<T>(store, name + "/target_gru", D, D);
  neighbor_mlp_ = nd::Mlp<T>(store, name + "/neighbor_mlp", kAgentFeatures, D, D);
  neighbor_gru_ = nd::Gru<T>(store, name + "/neighbor_gru", D, D);
  lane_mlp_ = nd::Mlp<T>(store, name + "/lane_mlp", kLaneFeatures, D, D);
  gat1_ = GraphAttention<T>(store, name + "/gat1", D);
  gat2_ = GraphAttention<T>(store, name + "/gat2", D);
  conv_[0] = nd::Conv2dLayer<T>(store, name + "/bev0", 4, 4, config.bev_channels, 8);
  conv_[1] = nd::Conv2dLayer<T>(store, name + "/bev1", 4, 4, 8, 16);
  conv_[2] = nd::Conv2dLayer<T>(store, name + "/bev2", 3, 3, 16, D);
  conv_[3] = nd::Conv2dLayer<T>(store, name + "/bev3", 3, 3, D, D);
  conv_[4] = nd::Conv2dLayer<T>(store, name + "/bev4", 3, 3, D, D);
  ln_t_ = nd::LayerNorm<T>(store, name + "/ln_target", D);
  ln_n_ = nd::LayerNorm<T>(store, name + "/ln_neighbor", D);
  ln_l_ = nd::LayerNorm<T>(store, name + "/ln_lane", D);
  ln_ql_ = nd::LayerNorm<T>(store, name + "/ln_q_lane", D);
  ln_kl_ = nd::LayerNorm<T>(store, name + "/ln_k_lane", D);
  ln_qn_ = nd::LayerNorm<T>(store, name + "/ln_q_neighbor", D);
  ln_kn_ = nd::LayerNorm<T>(store, name + "/ln_k_neighbor", D);
  self_t_ = nd::MultiHeadAttention<T>(store, name + "/self_target", D, config.heads, drop);
  self_n_ = nd::MultiHeadAttention<T>(store, name + "/self_neighbor", D, config.heads, drop);
  self_l_ = nd::MultiHeadAttention<T>(store, name + "/self_lane", D, config.heads, drop);
  cross_l_ = nd::MultiHeadAttention<T>(store, name + "/cross_lane", D, config.heads, drop);
  cross_n_ = nd::MultiHeadAttention<T>(store, name + "/cross_neighbor", D, config.heads, drop);
}

template <typename T>
Var<T> PerceptionEncoder<T>::encode_target(Tape<T>& tape, const Array<T>& history) const {
  if (history.rank() != 3 || history.dim(2) != kAgentFeatures) {
    throw nd::DimensionError("encode_target: expected [B, T, 8], got " + nd::to_string(history.shape()));
  }
  const Index B = history.dim(0);
  auto x = target_mlp_(tape, tape.constant(history));
  return target_gru_.run(tape, x, tape.constant(Array<T>::zeros({B, config_.d_model})));
}

template <typename T>
Var<T> PerceptionEncoder<T>::encode_neighbors(Tape<T>& tape, const Array<T>& histories, const Array<T>& steps,
                                              const Array<T>& mask) const {
  const auto& s = histories.shape();
  if (s.size() != 4 || s[3] != kAgentFeatures || steps.shape() != Shape{s[0], s[1], s[2]} ||
      mask.shape() != Shape{s[0], s[1]}) {
    throw nd::DimensionError("encode_neighbors: histories " + nd::to_string(s) + ", steps " +
                             nd::to_string(steps.shape()) + ", mask " + nd::to_string(mask.shape()));
  }
  const Index B = s[0], N = s[1], T_ = s[2], D = config_.d_model;
  auto x = neighbor_mlp_(tape, tape.constant(histories.reshaped({B * N, T_, kAgentFeatures})));
  const Array<T> step_mask = steps.reshaped({B * N, T_});
  auto h = neighbor_gru_.run(tape, x, tape.constant(Array<T>::zeros({B * N, D})), &step_mask);
  auto last = nd::reshape(nd::slice(h, 1, T_ - 1, 1), Shape{B, N, D});
  return last * row_mask(tape, mask);
}

template <typename T>
Var<T> PerceptionEncoder<T>::encode_lanes(Tape<T>& tape, const Array<T>& nodes, const Array<T>& mask,
                                          const Array<T>& adj) const {
  const auto& s = nodes.shape();
  if (s.size() != 3 || s[2] != kLaneFeatures || mask.shape() != Shape{s[0], s[1]}) {
    throw nd::DimensionError("encode_lanes: nodes " + nd::to_string(s) + ", mask " + nd::to_string(mask.shape()));
  }
  auto h = lane_mlp_(tape, tape.constant(nodes));
  h = gat1_(tape, h, adj);
  h = gat2_(tape, h, adj);
  h = h * row_mask(tape, mask);
  return nd::permute(h, {1, 0, 2});
}

template <typename T>
Var<T> PerceptionEncoder<T>::encode_bev(Tape<T>& tape, const Array<T>& bev) const {
  if (bev.rank() != 4 || bev.dim(3) != config_.bev_channels) {
    throw nd::DimensionError("encode_bev: expected [B, H, W, " + std::to_string(config_.bev_channels) + "], got " +
                             nd::to_string(bev.shape()));
  }
  auto x = tape.constant(bev);
  const Index strides[5] = {2, 2, 2, 1, 1};
  for (int i = 0; i < 5; ++i) {
    const auto& c = conv_[i];
    const auto g = nd::ConvGeometry::strided(x.dim(1), x.dim(2), c.kh, c.kw, strides[i], 1);
    x = c(tape, x, g);
    if (i < 4) x = nd::relu(x);
  }
  x = nd::dropout(x, static_cast<T>(config_.dropout));
  return nd::reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
}

template <typename T>
Var<T> PerceptionEncoder<T>::fuse_scene(Tape<T>& tape, const Var<T>& t_enc, const Var<T>& n_enc,
                                        const Array<T>& n_mask, const Var<T>& l_enc, const Array<T>& l_mask) const {
  const Index B = t_enc.dim(0), D = config_.d_model;
  if (t_enc.rank() != 3 || t_enc.dim(2) != D || n_enc.shape() != Shape{B, n_mask.dim(1), D} ||
      n_mask.dim(0) != B || l_enc.shape() != Shape{l_mask.dim(1), B, D} || l_mask.dim(0) != B) {
    throw nd::DimensionError("fuse_scene: t_enc " + nd::to_string(t_enc.shape()) + ", n_enc " +
                             nd::to_string(n_enc.shape()) + ", l_enc " + nd::to_string(l_enc.shape()));
  }
  auto tn = ln_t_(tape, t_enc);
  auto s = t_enc + self_t_(tape, tn, tn, tn);

  // Empty modalities arrive as fully masked slots; has_keys zeroes their
  // cross-attention term, which would otherwise reduce to the output bias.
  auto l = nd::permute(l_enc, {1, 0, 2});
  auto ln = ln_l_(tape, l);
  l = (l + self_l_(tape, ln, ln, ln, &l_mask)) * row_mask(tape, l_mask);
  auto kl = ln_kl_(tape, l);
  s = s + cross_l_(tape, ln_ql_(tape, s), kl, kl, &l_mask) * has_keys(tape, l_mask);

  auto nn_ = ln_n_(tape, n_enc);
  auto n = (n_enc + self_n_(tape, nn_, nn_, nn_, &n_mask)) * row_mask(tape, n_mask);
  auto kn = ln_kn_(tape, n);
  s = s + cross_n_(tape, ln_qn_(tape, s), kn, kn, &n_mask) * has_keys(tape, n_mask);
  return nd::permute(s, {1, 0, 2});
}

template <typename T>
SceneEncoding<T> PerceptionEncoder<T>::operator()(Tape<T>& tape, const SceneBatch& batch) const {
  SceneEncoding<T> e;
  e.n_mask = batch.neighbor_mask.cast<T>();
  e.l_mask = batch.lane_mask.cast<T>();
  e.t_enc = encode_target(tape, batch.target.cast<T>());
  e.n_enc = encode_neighbors(tape, batch.neighbors.cast<T>(), batch.neighbor_steps.cast<T>(), e.n_mask);
  e.l_enc = encode_lanes(tape, batch.lane_nodes.cast<T>(), e.l_mask, batch.lane_adj.cast<T>());
  e.v_enc = encode_bev(tape, batch.bev.cast<T>());
  e.s_enc = fuse_scene(tape, e.t_enc, e.n_enc, e.n_mask, e.l_enc, e.l_mask);
  return e;
}

template struct GraphAttention<float>;
template struct GraphAttention<double>;
template class PerceptionEncoder<float>;
template class PerceptionEncoder<double>;

}  // namespace wmmoe::perception
