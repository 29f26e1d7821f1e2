#pragma once

#include <string>

#include "wmmoe/nd/nn.hpp"
#include "wmmoe/perception/batch.hpp"

namespace wmmoe::perception {

using nd::ParamStore;
using nd::Tape;
using nd::Var;

struct PerceptionConfig {
  Index d_model = 64;
  Index heads = 4;
  double dropout = 0.1;
  Index bev_channels = 3;
};

template <typename T>
struct SceneEncoding {
  Var<T> t_enc;         // [B, T, D]
  Var<T> n_enc;         // [B, N, D], masked rows zero
  Array<T> n_mask;      // [B, N]
  Var<T> l_enc;         // [M, B, D], masked rows zero
  Array<T> l_mask;      // [B, M]
  Var<T> v_enc;         // [B, H' W', D] raster tokens
  Var<T> s_enc;         // [T, B, D]
};

/// Single-head graph attention over a dense adjacency:
///   z = h W, e_ij = leaky_relu_0.2(a_s . z_i + a_d . z_j),
///   alpha = softmax over j with adj_ij != 0, out_i = h_i + relu(sum_j alpha_ij z_j).
template <typename T>
struct GraphAttention {
  nd::Linear<T> proj;
  nd::Parameter<T>* a_src = nullptr;
  nd::Parameter<T>* a_dst = nullptr;

  GraphAttention() = default;
  GraphAttention(ParamStore<T>& store, const std::string& name, Index d);
  /// h [B, M, D], adj [B, M, M].
  Var<T> operator()(Tape<T>& tape, const Var<T>& h, const Array<T>& adj) const;
};

template <typename T>
class PerceptionEncoder {
 public:
  PerceptionEncoder(ParamStore<T>& store, const std::string& name, const PerceptionConfig& config);

  /// [B, T, 8] -> [B, T, D]: per-frame MLP then GRU.
  Var<T> encode_target(Tape<T>& tape, const Array<T>& history) const;
  /// [B, N, T, 8] with per-step bits [B, N, T] and agent mask [B, N] -> [B, N, D].
  /// The GRU holds its state over unobserved steps; masked agents give zero rows.
  Var<T> encode_neighbors(Tape<T>& tape, const Array<T>& histories, const Array<T>& steps,
                          const Array<T>& mask) const;
  /// Lane nodes [B, M, 4] -> [M, B, D] after two graph attention rounds.
  Var<T> encode_lanes(Tape<T>& tape, const Array<T>& nodes, const Array<T>& mask, const Array<T>& adj) const;
  /// Raster [B, H, W, C] -> tokens [B, H' W', D].
  Var<T> encode_bev(Tape<T>& tape, const Array<T>& bev) const;
  /// Per-modality self-attention, then target tokens attend to lanes and to neighbors. -> [T, B, D]
  Var<T> fuse_scene(Tape<T>& tape, const Var<T>& t_enc, const Var<T>& n_enc, const Array<T>& n_mask,
                    const Var<T>& l_enc, const Array<T>& l_mask) const;

  SceneEncoding<T> operator()(Tape<T>& tape, const SceneBatch& batch) const;

  const PerceptionConfig& config() const { return config_; }

 private:
  PerceptionConfig config_;
  nd::Mlp<T> target_mlp_, neighbor_mlp_, lane_mlp_;
  nd::Gru<T> target_gru_, neighbor_gru_;
  GraphAttention<T> gat1_, gat2_;
  nd::Conv2dLayer<T> conv_[5];
  nd::LayerNorm<T> ln_t_, ln_n_, ln_l_, ln_ql_, ln_kl_, ln_qn_, ln_kn_;
  nd::MultiHeadAttention<T> self_t_, self_n_, self_l_, cross_l_, cross_n_;
};

/// Spatial size after the raster CNN for an input of size `in`.
Index bev_feature_size(Index in);

extern template class PerceptionEncoder<float>;
extern template class PerceptionEncoder<double>;

}  // namespace wmmoe::perception
