#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wmmoe/nd/ops.hpp"

// Parameter storage and the layers every module is assembled from.

namespace wmmoe::nd {

/// Parameters whose name starts with this prefix are frozen and initialized
/// from the store's frozen seed instead of the model seed.
inline constexpr std::string_view kFrozenPrefix = "frozen/";

struct Init {
  enum class Kind { Zeros, Constant, Uniform, Normal } kind = Kind::Zeros;
  double a = 0.0;

  static Init zeros() { return {Kind::Zeros, 0.0}; }
  static Init constant(double v) { return {Kind::Constant, v}; }
  static Init ones() { return constant(1.0); }
  /// U(-bound, bound).
  static Init uniform(double bound) { return {Kind::Uniform, bound}; }
  static Init normal(double stddev) { return {Kind::Normal, stddev}; }
};

/// Owns named parameters. Each parameter's initial value is drawn from its own
/// stream keyed by (seed, hash(name)), so values do not depend on creation order.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed, std::uint64_t frozen_seed = 0x5EED0F20ULL)
      : seed_(seed), frozen_seed_(frozen_seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& create(const std::string& name, Shape shape, Init init);
  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;
  Parameter<T>* find(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  /// All parameters in creation order.
  const std::vector<Parameter<T>*>& all() const { return order_; }
  std::vector<Parameter<T>*> trainable() const;
  Index total_size(bool include_frozen = true) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t frozen_seed() const { return frozen_seed_; }

  void zero_grad();

 private:
  std::uint64_t seed_;
  std::uint64_t frozen_seed_;
  std::deque<Parameter<T>> storage_;
  std::map<std::string, Parameter<T>*> index_;
  std::vector<Parameter<T>*> order_;
};

enum class Activation { None, Relu, LeakyRelu, Gelu, Silu, Tanh };

template <typename T>
Var<T> activate(const Var<T>& x, Activation act);

/// y = x W + b with W [in, out]. Default init U(±1/sqrt(in)), zero bias.
template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  Index in = 0, out = 0;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, Index in, Index out, bool use_bias = true,
         std::optional<Init> weight_init = std::nullopt);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const;
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, Index d);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const;
};

/// Two linear layers with an activation (and optional dropout) between them.
template <typename T>
struct Mlp {
  Linear<T> first, second;
  Activation act = Activation::Relu;
  T dropout = T(0);

  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, Index in, Index hidden, Index out,
      Activation act = Activation::Relu, T dropout = T(0));
  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const;
};

/// Multi-head softmax(Q K^T / sqrt(d_h)) V on already projected inputs.
/// q [B, Lq, D], k and v [B, Lk, D]. `key_mask` [B, Lk] marks valid keys with
/// nonzero entries; a query with no valid key gets a zero context row.
/// `score_bias` is added to the [B, heads, Lq, Lk] scores with broadcasting.
/// Returns [B, Lq, D]; the attention weights are written to `weights` if given.
template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads,
                            const Array<T>* key_mask = nullptr, T dropout = T(0),
                            const Var<T>* score_bias = nullptr, Var<T>* weights = nullptr);

template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  Index d = 0, heads = 1;
  T dropout = T(0);

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, Index d, Index heads,
                     T dropout = T(0));

  /// `key_offset` [B, Lq, D] (optional) is a per-query additive term on the
  /// keys: query i scores key j against (k_j + key_offset_i) W_k.
  Var<T> operator()(Tape<T>& tape, const Var<T>& q, const Var<T>& k, const Var<T>& v,
                    const Array<T>* key_mask = nullptr, const Var<T>* key_offset = nullptr,
                    Var<T>* weights = nullptr) const;
};

/// GRU with gate order (reset, update, candidate):
///   r = sigmoid(x W_xr + b_xr + h W_hr + b_hr)
///   z = sigmoid(x W_xz + b_xz + h W_hz + b_hz)
///   n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))
///   h' = (1 - z) * h + z * n
template <typename T>
struct Gru {
  Parameter<T>* wx = nullptr;
  Parameter<T>* wh = nullptr;
  Parameter<T>* bx = nullptr;
  Parameter<T>* bh = nullptr;
  Index d_in = 0, d_h = 0;

  Gru() = default;
  Gru(ParamStore<T>& store, const std::string& name, Index d_in, Index d_h);

  /// x [B, d_in], h [B, d_h] -> [B, d_h].
  Var<T> step(Tape<T>& tape, const Var<T>& x, const Var<T>& h) const;
  /// x [B, L, d_in] from h0 [B, d_h]; returns all states [B, L, d_h]. Where
  /// `step_mask` [B, L] is zero the state is carried over unchanged.
  Var<T> run(Tape<T>& tape, const Var<T>& x, const Var<T>& h0,
             const Array<T>* step_mask = nullptr) const;
};

/// Conv2d with bias on NHWC input; kernel [kh, kw, cin, cout].
template <typename T>
struct Conv2dLayer {
  Parameter<T>* kernel = nullptr;
  Parameter<T>* bias = nullptr;
  Index kh = 0, kw = 0, cin = 0, cout = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<T>& store, const std::string& name, Index kh, Index kw, Index cin,
              Index cout, std::optional<Init> kernel_init = std::nullopt);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x, const ConvGeometry& geom) const;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace wmmoe::nd
