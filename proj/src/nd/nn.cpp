#include "wmmoe/nd/nn.hpp"

#include <cmath>

namespace wmmoe::nd {

template <typename T>
Parameter<T>& ParamStore<T>::create(const std::string& name, Shape shape, Init init) {
  if (index_.count(name) > 0) throw ConfigError("duplicate parameter name: " + name);
  const bool frozen = name.rfind(kFrozenPrefix, 0) == 0;
  RngStream rng(frozen ? frozen_seed_ : seed_, fnv1a64(name));
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) {
    switch (init.kind) {
      case Init::Kind::Zeros: x = T(0); break;
      case Init::Kind::Constant: x = static_cast<T>(init.a); break;
      case Init::Kind::Uniform: x = static_cast<T>(rng.uniform(-init.a, init.a)); break;
      case Init::Kind::Normal: x = static_cast<T>(rng.normal() * init.a); break;
    }
  }
  storage_.push_back(Parameter<T>{name, Array<T>(std::move(shape), std::move(v)), {}, frozen});
  Parameter<T>* p = &storage_.back();
  index_[name] = p;
  order_.push_back(p);
  return *p;
}

template <typename T>
Parameter<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return *it->second;
}

template <typename T>
const Parameter<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return *it->second;
}

template <typename T>
Parameter<T>* ParamStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

template <typename T>
std::vector<Parameter<T>*> ParamStore<T>::trainable() const {
  std::vector<Parameter<T>*> out;
  for (auto* p : order_)
    if (!p->frozen) out.push_back(p);
  return out;
}

template <typename T>
Index ParamStore<T>::total_size(bool include_frozen) const {
  Index n = 0;
  for (auto* p : order_)
    if (include_frozen || !p->frozen) n += p->value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto* p : order_) p->grad.clear();
}

template <typename T>
Var<T> activate(const Var<T>& x, Activation act) {
  switch (act) {
    case Activation::None: return x;
    case Activation::Relu: return relu(x);
    case Activation::LeakyRelu: return leaky_relu(x, T(0.01));
    case Activation::Gelu: return gelu(x);
    case Activation::Silu: return silu(x);
    case Activation::Tanh: return tanh(x);
  }
  return x;
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, Index in_, Index out_,
                  bool use_bias, std::optional<Init> weight_init)
    : in(in_), out(out_) {
  const Init wi = weight_init.value_or(Init::uniform(1.0 / std::sqrt(static_cast<double>(in_))));
  weight = &store.create(name + "/w", {in_, out_}, wi);
  if (use_bias) bias = &store.create(name + "/b", {out_}, Init::zeros());
}

template <typename T>
Var<T> Linear<T>::operator()(Tape<T>& tape, const Var<T>& x) const {
  if (x.dim(-1) != in) {
    throw DimensionError("linear layer expects last dim " + std::to_string(in) + ", got " +
                         to_string(x.shape()));
  }
  auto y = matmul(x, tape.param(*weight));
  return bias ? add(y, tape.param(*bias)) : y;
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, Index d) {
  gain = &store.create(name + "/gain", {d}, Init::ones());
  bias = &store.create(name + "/bias", {d}, Init::zeros());
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Tape<T>& tape, const Var<T>& x) const {
  return layer_norm(x, tape.param(*gain), tape.param(*bias), eps);
}

template <typename T>
Mlp<T>::Mlp(ParamStore<T>& store, const std::string& name, Index in, Index hidden, Index out,
            Activation act_, T dropout_)
    : first(store, name + "/fc1", in, hidden),
      second(store, name + "/fc2", hidden, out),
      act(act_),
      dropout(dropout_) {}

template <typename T>
Var<T> Mlp<T>::operator()(Tape<T>& tape, const Var<T>& x) const {
  auto h = activate(first(tape, x), act);
  if (dropout > T(0)) h = nd::dropout(h, dropout);
  return second(tape, h);
}

namespace {

template <typename T>
Var<T> split_heads(const Var<T>& x, Index heads) {
  const Index B = x.dim(0), L = x.dim(1), D = x.dim(2);
  return permute(reshape(x, {B, L, heads, D / heads}), {0, 2, 1, 3});
}

template <typename T>
Var<T> merge_heads(const Var<T>& x) {
  const Index B = x.dim(0), H = x.dim(1), L = x.dim(2), dh = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {B, L, H * dh});
}

}  // namespace

template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads,
                            const Array<T>* key_mask, T dropout, const Var<T>* score_bias,
                            Var<T>* weights) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || k.dim(1) != v.dim(1) ||
      q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0) || q.dim(2) != k.dim(2)) {
    throw DimensionError("attention shapes incompatible: q " + to_string(q.shape()) + ", k " +
                         to_string(k.shape()) + ", v " + to_string(v.shape()));
  }
  const Index B = q.dim(0), Lq = q.dim(1), Lk = k.dim(1), D = q.dim(2);
  if (heads < 1 || D % heads != 0 || v.dim(2) % heads != 0) {
    throw ConfigError("model width " + std::to_string(D) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const Index dh = D / heads;
  auto qh = split_heads(q, heads);
  auto kh = split_heads(k, heads);
  auto vh = split_heads(v, heads);
  auto scores = scale(matmul(qh, kh, false, true), T(1) / std::sqrt(static_cast<T>(dh)));
  if (score_bias != nullptr) scores = add(scores, *score_bias);
  Var<T> p;
  if (key_mask != nullptr) {
    if (key_mask->shape() != Shape{B, Lk}) {
      throw DimensionError("key mask shape " + to_string(key_mask->shape()) + " does not match keys " +
                           to_string(k.shape()));
    }
    std::vector<T> m(static_cast<std::size_t>(B * heads * Lq * Lk));
    for (Index b = 0; b < B; ++b)
      for (Index h = 0; h < heads; ++h)
        for (Index i = 0; i < Lq; ++i)
          for (Index j = 0; j < Lk; ++j)
            m[((b * heads + h) * Lq + i) * Lk + j] = (*key_mask)[b * Lk + j];
    p = masked_softmax(scores, Array<T>({B, heads, Lq, Lk}, std::move(m)));
  } else {
    p = softmax(scores, -1);
  }
  if (weights != nullptr) *weights = p;
  if (dropout > T(0)) p = nd::dropout(p, dropout);
  return merge_heads(matmul(p, vh));
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& name, Index d_,
                                          Index heads_, T dropout_)
    : d(d_), heads(heads_), dropout(dropout_) {
  if (heads_ < 1 || d_ % heads_ != 0) {
    throw ConfigError("attention width " + std::to_string(d_) + " not divisible by " +
                      std::to_string(heads_) + " heads");
  }
  wq = Linear<T>(store, name + "/q", d_, d_);
  wk = Linear<T>(store, name + "/k", d_, d_);
  wv = Linear<T>(store, name + "/v", d_, d_);
  wo = Linear<T>(store, name + "/o", d_, d_);
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(Tape<T>& tape, const Var<T>& q, const Var<T>& k,
                                         const Var<T>& v, const Array<T>* key_mask,
                                         const Var<T>* key_offset, Var<T>* weights) const {
  auto qp = wq(tape, q);
  auto kp = wk(tape, k);
  auto vp = wv(tape, v);
  Var<T> bias;
  if (key_offset != nullptr) {
    // (k_j + o_i) W_k + b = k_j W_k + b + o_i W_k; the o_i term is the same for
    // every key j, so it enters the scores as a per-query column.
    auto op = matmul(*key_offset, tape.param(*wk.weight));
    const Index dh = d / heads;
    auto prod = mul(split_heads(qp, heads), split_heads(op, heads));  // [B, H, Lq, dh]
    bias = scale(sum_axis(prod, -1, true), T(1) / std::sqrt(static_cast<T>(dh)));
  }
  auto ctx = scaled_dot_attention(qp, kp, vp, heads, key_mask, tape.training() ? dropout : T(0),
                                  key_offset != nullptr ? &bias : nullptr, weights);
  return wo(tape, ctx);
}

template <typename T>
Gru<T>::Gru(ParamStore<T>& store, const std::string& name, Index d_in_, Index d_h_)
    : d_in(d_in_), d_h(d_h_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_h_));
  wx = &store.create(name + "/wx", {d_in_, 3 * d_h_}, Init::uniform(bound));
  wh = &store.create(name + "/wh", {d_h_, 3 * d_h_}, Init::uniform(bound));
  bx = &store.create(name + "/bx", {3 * d_h_}, Init::zeros());
  bh = &store.create(name + "/bh", {3 * d_h_}, Init::zeros());
}

namespace {

template <typename T>
Var<T> gru_update(const Var<T>& gx, const Var<T>& h, const Var<T>& wh, const Var<T>& bh, Index dh) {
  auto gh = add(matmul(h, wh), bh);
  auto r = sigmoid(add(slice(gx, -1, 0, dh), slice(gh, -1, 0, dh)));
  auto z = sigmoid(add(slice(gx, -1, dh, dh), slice(gh, -1, dh, dh)));
  auto n = tanh(add(slice(gx, -1, 2 * dh, dh), mul(r, slice(gh, -1, 2 * dh, dh))));
  return add(h, mul(z, sub(n, h)));
}

}  // namespace

template <typename T>
Var<T> Gru<T>::step(Tape<T>& tape, const Var<T>& x, const Var<T>& h) const {
  if (x.rank() != 2 || x.dim(1) != d_in || h.rank() != 2 || h.dim(1) != d_h || x.dim(0) != h.dim(0)) {
    throw DimensionError("gru step expects x [B," + std::to_string(d_in) + "] and h [B," +
                         std::to_string(d_h) + "], got " + to_string(x.shape()) + " and " +
                         to_string(h.shape()));
  }
  auto gx = add(matmul(x, tape.param(*wx)), tape.param(*bx));
  return gru_update(gx, h, tape.param(*wh), tape.param(*bh), d_h);
}

template <typename T>
Var<T> Gru<T>::run(Tape<T>& tape, const Var<T>& x, const Var<T>& h0, const Array<T>* step_mask) const {
  if (x.rank() != 3 || x.dim(2) != d_in || h0.rank() != 2 || h0.dim(1) != d_h ||
      h0.dim(0) != x.dim(0)) {
    throw DimensionError("gru run expects x [B,L," + std::to_string(d_in) + "] and h0 [B," +
                         std::to_string(d_h) + "], got " + to_string(x.shape()) + " and " +
                         to_string(h0.shape()));
  }
  const Index B = x.dim(0), L = x.dim(1);
  if (step_mask != nullptr && step_mask->shape() != Shape{B, L}) {
    throw DimensionError("gru step mask " + to_string(step_mask->shape()) + " does not match " +
                         to_string(x.shape()));
  }
  auto gx_all = add(matmul(x, tape.param(*wx)), tape.param(*bx));  // [B, L, 3h]
  auto whv = tape.param(*wh);
  auto bhv = tape.param(*bh);
  Var<T> h = h0;
  std::vector<Var<T>> states;
  states.reserve(static_cast<std::size_t>(L));
  for (Index t = 0; t < L; ++t) {
    auto gx = reshape(slice(gx_all, 1, t, 1), {B, 3 * d_h});
    auto hn = gru_update(gx, h, whv, bhv, d_h);
    if (step_mask != nullptr) {
      std::vector<T> m(static_cast<std::size_t>(B));
      bool all_on = true;
      for (Index b = 0; b < B; ++b) {
        m[b] = (*step_mask)[b * L + t] != T(0) ? T(1) : T(0);
        all_on = all_on && m[b] == T(1);
      }
      if (!all_on) {
        auto mv = tape.constant(Array<T>({B, 1}, std::move(m)));
        hn = add(h, mul(mv, sub(hn, h)));
      }
    }
    h = hn;
    states.push_back(reshape(h, {B, 1, d_h}));
  }
  return L == 1 ? states.front() : concat(states, 1);
}

template <typename T>
Conv2dLayer<T>::Conv2dLayer(ParamStore<T>& store, const std::string& name, Index kh_, Index kw_,
                            Index cin_, Index cout_, std::optional<Init> kernel_init)
    : kh(kh_), kw(kw_), cin(cin_), cout(cout_) {
  const Init ki = kernel_init.value_or(
      Init::uniform(1.0 / std::sqrt(static_cast<double>(kh_ * kw_ * cin_))));
  kernel = &store.create(name + "/kernel", {kh_, kw_, cin_, cout_}, ki);
  bias = &store.create(name + "/bias", {cout_}, Init::zeros());
}

template <typename T>
Var<T> Conv2dLayer<T>::operator()(Tape<T>& tape, const Var<T>& x, const ConvGeometry& geom) const {
  return add(conv2d(x, tape.param(*kernel), geom), tape.param(*bias));
}

#define WMMOE_INSTANTIATE_NN(T)                                                                    \
  template class ParamStore<T>;                                                                    \
  template Var<T> activate(const Var<T>&, Activation);                                             \
  template struct Linear<T>;                                                                       \
  template struct LayerNorm<T>;                                                                    \
  template struct Mlp<T>;                                                                          \
  template Var<T> scaled_dot_attention(const Var<T>&, const Var<T>&, const Var<T>&, Index,         \
                                       const Array<T>*, T, const Var<T>*, Var<T>*);                \
  template struct MultiHeadAttention<T>;                                                           \
  template struct Gru<T>;                                                                          \
  template struct Conv2dLayer<T>;

WMMOE_INSTANTIATE_NN(float)
WMMOE_INSTANTIATE_NN(double)

}  // namespace wmmoe::nd
