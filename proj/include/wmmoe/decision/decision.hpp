#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "wmmoe/nd/nn.hpp"
#include "wmmoe/objectives/losses.hpp"

namespace wmmoe::decision {

using nd::Array;
using nd::Index;
using nd::ParamStore;
using nd::Tape;
using nd::Var;

struct DecisionConfig {
  Index d_model = 64;
  Index heads = 4;
  Index modes = 10;
  Index future = 12;
  Index experts = 4;
  Index blocks = 4;
  /// Experts kept per token at inference; 0 keeps all. Training always uses all.
  Index top_k = 0;
  /// Replace every MoE layer by expert 0 alone (no router).
  bool dense = false;
  Index ssm_state = 8;
  bool noise = true;
  double dropout = 0.1;
  /// Multiplies the location and scale heads (m per unit output).
  double position_scale = 10.0;
  double min_scale = 1e-3;
  std::vector<Index> dilations = {1, 2, 4};

  /// Throws nd::ConfigError on inconsistent settings.
  void validate() const;
};

// Internal layout for the t_f x K_n grid is "plane" [B, t_f, K_n, D]; the
// public entry points take and return [t_f, K_n, B, D].
template <typename T>
Var<T> to_plane(const Var<T>& x);
template <typename T>
Var<T> from_plane(const Var<T>& x);

/// x + W z with z ~ N(0, 1) drawn from the tape stream; identity unless the tape is training.
template <typename T>
class NoiseInjector {
 public:
  NoiseInjector() = default;
  NoiseInjector(ParamStore<T>& store, const std::string& name, Index d, bool enabled);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const;
  const nd::Linear<T>& projection() const { return proj_; }

 private:
  nd::Linear<T> proj_;
  bool enabled_ = false;
};

/// Mode queries attend over BEV tokens. Keys are (v + PE) * (1 + W c) with
/// c the time-averaged language feature, values are the BEV tokens.
template <typename T>
class CrossModalFusion {
 public:
  CrossModalFusion() = default;
  CrossModalFusion(ParamStore<T>& store, const std::string& name, const DecisionConfig& config);

  /// t_llm [B, T, D], v_enc [B, P, D] (v_mask [B, P] optional), q_mode [t_f, K_n, B, D].
  Var<T> operator()(Tape<T>& tape, const Var<T>& t_llm, const Var<T>& v_enc, const Var<T>& q_mode,
                    const Array<T>* v_mask = nullptr) const;
  const nd::MultiHeadAttention<T>& attention() const { return att_; }
  const nd::Linear<T>& context() const { return ctx_; }

 private:
  nd::MultiHeadAttention<T> att_;
  nd::Linear<T> ctx_;
};

/// Dilated convolution stack with a residual after every layer:
/// h <- h + LeakyReLU(conv_d(h) + b).
template <typename T>
struct ConvStack {
  std::vector<nd::Parameter<T>*> kernels, biases;
  std::vector<Index> dilations;
  int rank = 1;

  ConvStack() = default;
  ConvStack(ParamStore<T>& store, const std::string& name, Index d, const std::vector<Index>& dilations, int rank);
  /// rank 1: x [R, L, D] (causal). rank 2: x [B, H, W, D] (centered).
  Var<T> operator()(const Var<T>& x) const;
};

/// q' = q + LeakyReLU(tcn1d(q) - q) + (tcn2d(q) - q); the 1D stack runs along
/// t_f per mode, the 2D stack over the t_f x K_n plane.
template <typename T>
class TemporalConv {
 public:
  TemporalConv() = default;
  TemporalConv(ParamStore<T>& store, const std::string& name, const DecisionConfig& config);
  /// plane [B, t_f, K_n, D] -> same.
  Var<T> operator()(const Var<T>& plane) const;
  const ConvStack<T>& stack1d() const { return conv1d_; }
  const ConvStack<T>& stack2d() const { return conv2d_; }

 private:
  ConvStack<T> conv1d_, conv2d_;
};

/// Selective state-space branch: in_proj -> (u, z); u <- SiLU(pre-conv(u)) over
/// the plane; diagonal selective scan along t_f; out_proj(y * SiLU(z)).
template <typename T>
class SsmBranch {
 public:
  SsmBranch() = default;
  SsmBranch(ParamStore<T>& store, const std::string& name, Index d, Index state, Index kernel);
  Var<T> operator()(Tape<T>& tape, const Var<T>& plane) const;

  nd::Linear<T> in_proj, out_proj, delta_proj, b_proj, c_proj;
  nd::Parameter<T>* pre_kernel = nullptr;
  nd::Parameter<T>* pre_bias = nullptr;
  nd::Parameter<T>* a_log = nullptr;
  nd::Parameter<T>* skip = nullptr;
  Index kernel = 1;
};

/// f_c = M_3x3(q') + M_1x1(q'); the pointwise projection is parameter-free (identity).
template <typename T>
class SsmRefine {
 public:
  SsmRefine() = default;
  SsmRefine(ParamStore<T>& store, const std::string& name, const DecisionConfig& config);
  Var<T> operator()(Tape<T>& tape, const Var<T>& plane) const;
  const SsmBranch<T>& wide() const { return m1_; }
  const SsmBranch<T>& narrow() const { return m2_; }

 private:
  SsmBranch<T> m1_, m2_;
};

/// Keeps the k largest entries of each gate row and renormalizes them to sum 1.
/// Ties resolve to the lower expert index. Throws nd::ConfigError if k is
/// outside [1, K].
template <typename T>
Var<T> top_k_gates(const Var<T>& p, Index k);

/// Accumulates per-block gate statistics by scenario label.
class GateTelemetry {
 public:
  struct Cell {
    double weight_sum = 0.0;
    std::int64_t tokens = 0;
  };

  /// gates [B, L, K] of block `block` for scenes labelled `labels` (size B).
  void record(Index block, const Array<double>& gates, const std::vector<std::string>& labels,
              const std::vector<std::string>& scene_ids = {});

  /// Largest |sum_k p - 1| seen over all tokens.
  double max_simplex_error() const { return max_simplex_error_; }
  /// Smallest gate value seen.
  double min_gate() const { return min_gate_; }
  const std::map<std::tuple<Index, Index, std::string>, Cell>& cells() const { return cells_; }
  /// Per-scene gate vector: mean over tokens, blocks laid out in block order
  /// (block b occupies entries [b K, (b + 1) K)). Needs scene ids at record time.
  const std::map<std::string, std::vector<double>>& scene_vectors() const { return scene_vectors_; }
  const std::map<std::string, std::string>& scene_labels() const { return scene_labels_; }

  /// Header `block,expert,scenario,mean_weight,token_count`.
  void write_csv(std::ostream& out) const;

 private:
  std::map<std::tuple<Index, Index, std::string>, Cell> cells_;
  std::map<std::string, std::vector<double>> scene_vectors_;
  std::map<std::string, std::string> scene_labels_;
  double max_simplex_error_ = 0.0;
  double min_gate_ = 1.0;
};

/// Pre-norm block with a mixture-of-experts feed-forward layer:
///   h_s = MSA(LN h) + h;  h_m = sum_i p_i E_i(LN h_s) + h_s;  out = LN h_m.
template <typename T>
class MoeBlock {
 public:
  MoeBlock() = default;
  MoeBlock(ParamStore<T>& store, const std::string& name, const DecisionConfig& config);

  /// tokens [B, L, D]. `gates` receives p [B, L, K] when given (absent in dense mode).
  Var<T> operator()(Tape<T>& tape, const Var<T>& h, Var<T>* gates = nullptr) const;
  /// Router probabilities p [B, L, K] for block-internal tokens h_s, before any top-k.
  Var<T> route(Tape<T>& tape, const Var<T>& x) const;

  const std::vector<nd::Mlp<T>>& experts() const { return experts_; }
  const nd::Mlp<T>& router() const { return router_; }

 private:
  DecisionConfig config_;
  nd::LayerNorm<T> ln1_, ln2_, ln3_;
  nd::MultiHeadAttention<T> msa_;
  nd::Mlp<T> router_;
  std::vector<nd::Mlp<T>> experts_;
};

/// GRU over t_f per mode fed with [h; context], Laplace location/scale heads
/// per step and a mode-logit head on the time-averaged GRU output.
template <typename T>
class TrajectoryDecoder {
 public:
  TrajectoryDecoder() = default;
  TrajectoryDecoder(ParamStore<T>& store, const std::string& name, const DecisionConfig& config);

  /// plane [B, t_f, K_n, D]; context [B, D].
  objectives::Forecast<T> operator()(Tape<T>& tape, const Var<T>& plane, const Var<T>& context) const;

  const nd::Mlp<T>& loc_head() const { return loc_; }
  const nd::Mlp<T>& scale_head() const { return scale_; }
  const nd::Linear<T>& mode_head() const { return mode_; }

 private:
  DecisionConfig config_;
  nd::Gru<T> gru_;
  nd::Mlp<T> loc_, scale_;
  nd::Linear<T> mode_;
};

template <typename T>
struct DecisionTrace {
  Var<T> q_c, q_c_prime, f_c, f_moe;  // [t_f, K_n, B, D]
  std::vector<Var<T>> gates;          // per block [B, t_f * K_n, K]
};

template <typename T>
class DecisionModule {
 public:
  DecisionModule(ParamStore<T>& store, const std::string& name, const DecisionConfig& config);

  /// q_mode [t_f, K_n, B, D], t_llm and t_enc [B, T, D], v_enc [B, P, D].
  objectives::Forecast<T> operator()(Tape<T>& tape, const Var<T>& q_mode, const Var<T>& t_llm,
                                     const Var<T>& v_enc, const Var<T>& t_enc,
                                     DecisionTrace<T>* trace = nullptr) const;

  const DecisionConfig& config() const { return config_; }
  const std::vector<MoeBlock<T>>& blocks() const { return blocks_; }

 private:
  DecisionConfig config_;
  NoiseInjector<T> noise_q_, noise_l_, noise_v_;
  CrossModalFusion<T> fuse_;
  TemporalConv<T> tcn_;
  SsmRefine<T> ssm_;
  std::vector<MoeBlock<T>> blocks_;
  nd::Linear<T> context_;
  TrajectoryDecoder<T> decoder_;
};

extern template class NoiseInjector<float>;
extern template class NoiseInjector<double>;
extern template class CrossModalFusion<float>;
extern template class CrossModalFusion<double>;
extern template class TemporalConv<float>;
extern template class TemporalConv<double>;
extern template class SsmRefine<float>;
extern template class SsmRefine<double>;
extern template class MoeBlock<float>;
extern template class MoeBlock<double>;
extern template class TrajectoryDecoder<float>;
extern template class TrajectoryDecoder<double>;
extern template class DecisionModule<float>;
extern template class DecisionModule<double>;

}  // namespace wmmoe::decision
