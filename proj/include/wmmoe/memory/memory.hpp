#pragma once

#include <string>

#include "wmmoe/nd/nn.hpp"

namespace wmmoe::memory {

using nd::Array;
using nd::Index;
using nd::ParamStore;
using nd::Tape;
using nd::Var;

struct MemoryConfig {
  Index d_model = 64;
  Index heads = 4;
  Index modes = 10;
  Index history = 5;
  Index future = 12;
  double dropout = 0.1;
  double anchor_std = 0.02;
  Index backbone_width = 128;
  Index backbone_blocks = 2;
  Index backbone_heads = 4;
  /// Added to variances before the tokenizer's normalization.
  double norm_eps = 1e-5;
};

/// Sinusoidal table [length, d]: even columns sin(p / 10000^(2i/d)), odd columns cos.
/// Throws nd::ConfigError for odd d.
template <typename T>
Array<T> sinusoidal_encoding(Index length, Index d);

/// Anchor queries refined against the scene, the lanes and the neighbors, each
/// stage q <- q + LN(attn(q, keys, values)), then mixed from T to t_f steps.
template <typename T>
class IntentionEncoder {
 public:
  IntentionEncoder(ParamStore<T>& store, const std::string& name, const MemoryConfig& config);

  /// s_enc [T, B, D], l_enc [M, B, D] with l_mask [B, M], n_enc [B, N, D] with n_mask [B, N].
  /// Returns q_mode [t_f, K_n, B, D].
  Var<T> operator()(Tape<T>& tape, const Var<T>& s_enc, const Var<T>& l_enc, const Array<T>& l_mask,
                    const Var<T>& n_enc, const Array<T>& n_mask) const;

  // The stages work on queries laid out [B * K_n, T, D].
  /// Anchors tiled over the batch.
  Var<T> anchors(Tape<T>& tape, Index batch) const;
  /// Keys t_rep + PE over the time axis, values t_rep.
  Var<T> attend_scene(Tape<T>& tape, const Var<T>& q, const Var<T>& s_enc) const;
  /// Keys l_enc with the query's PE as a per-query key offset.
  Var<T> attend_lanes(Tape<T>& tape, const Var<T>& q, const Var<T>& l_enc, const Array<T>& l_mask) const;
  Var<T> attend_neighbors(Tape<T>& tape, const Var<T>& q, const Var<T>& n_enc, const Array<T>& n_mask) const;
  /// [B * K_n, T, D] -> [t_f, K_n, B, D].
  Var<T> expand(Tape<T>& tape, const Var<T>& q, Index batch) const;

  const MemoryConfig& config() const { return config_; }
  nd::Parameter<T>& anchor_param() const { return *anchor_; }
  const nd::MultiHeadAttention<T>& scene_attention() const { return scene_att_; }
  const nd::MultiHeadAttention<T>& lane_attention() const { return lane_att_; }
  const nd::MultiHeadAttention<T>& neighbor_attention() const { return neighbor_att_; }

 private:
  Var<T> stage(Tape<T>& tape, const nd::MultiHeadAttention<T>& att, const nd::LayerNorm<T>& ln, const Var<T>& q,
               const Var<T>& keys, const Var<T>& values, const Array<T>* mask, const Var<T>* key_offset) const;
  // [L, B, D] or [B, L, D] memory tiled to [B * K_n, L, D]
  Var<T> tile_modes(const Var<T>& x_bld) const;
  Array<T> tile_mask(const Array<T>& mask) const;

  MemoryConfig config_;
  nd::Parameter<T>* anchor_ = nullptr;
  nd::Parameter<T>* mix_ = nullptr;
  nd::MultiHeadAttention<T> scene_att_, lane_att_, neighbor_att_;
  nd::LayerNorm<T> scene_ln_, lane_ln_, neighbor_ln_;
  Array<T> pe_;
};

/// Fixed-weight causal transformer standing in for the pretrained language
/// backbone. All parameters live under "frozen/" and never receive gradients.
template <typename T>
class FrozenBackbone {
 public:
  FrozenBackbone(ParamStore<T>& store, Index width, Index blocks, Index heads);
  /// tokens [B, L, width] -> [B, L, width]. Throws nd::ConfigError on a width mismatch.
  Var<T> operator()(Tape<T>& tape, const Var<T>& tokens) const;
  Index width() const { return width_; }

  static constexpr const char* kNamespace = "frozen/backbone";

 private:
  struct Block {
    nd::LayerNorm<T> ln1, ln2;
    nd::Linear<T> q, k, v, o;
    nd::Linear<T> fc1, fc2;
  };
  Index width_ = 0, heads_ = 1;
  std::vector<Block> blocks_;
  nd::LayerNorm<T> final_ln_;
};

template <typename T>
struct LangFeatures {
  Var<T> t_norm;    // [B, T, D]
  Var<T> n_norm;    // [B, N, D]
  Var<T> tokens;    // [B, T, backbone width]
  Var<T> hidden;    // backbone output
  Var<T> t_llm;     // [B, T, D]
};

/// Temporal tokenizer -> frozen backbone -> output projection.
template <typename T>
class LanguageEncoder {
 public:
  LanguageEncoder(ParamStore<T>& store, const std::string& name, const MemoryConfig& config);

  /// Per-feature standardization of t_enc over batch and time, and of n_enc over
  /// its valid agent rows, then [t_norm ; masked-mean neighbor summary] -> MLP.
  Var<T> tokenize(Tape<T>& tape, const Var<T>& t_enc, const Var<T>& n_enc, const Array<T>& n_mask,
                  LangFeatures<T>* out = nullptr) const;
  Var<T> project(Tape<T>& tape, const Var<T>& hidden) const;
  LangFeatures<T> operator()(Tape<T>& tape, const Var<T>& t_enc, const Var<T>& n_enc, const Array<T>& n_mask) const;

  const FrozenBackbone<T>& backbone() const { return backbone_; }

 private:
  MemoryConfig config_;
  nd::Mlp<T> tokenizer_, projection_;
  FrozenBackbone<T> backbone_;
};

/// Standardizes each feature (last axis) of x [R, D] over the rows with
/// nonzero weight (all rows if weights is null): (x - mean) / sqrt(var + eps),
/// biased variance. Rows with zero weight are returned as zero.
template <typename T>
Var<T> standardize_rows(const Var<T>& x, const Array<T>* weights, T eps);

extern template class IntentionEncoder<float>;
extern template class IntentionEncoder<double>;
extern template class FrozenBackbone<float>;
extern template class FrozenBackbone<double>;
extern template class LanguageEncoder<float>;
extern template class LanguageEncoder<double>;

}  // namespace wmmoe::memory
