#include "wmmoe/decision/decision.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>

#include "wmmoe/memory/memory.hpp"

namespace wmmoe::decision {

using nd::Shape;

void DecisionConfig::validate() const {
  auto fail = [](const std::string& m) { throw nd::ConfigError("decision config: " + m); };
  if (d_model < 2 || heads < 1 || d_model % heads != 0) fail("heads must divide d_model");
  if (modes < 1 || future < 1) fail("modes and future must be >= 1");
  if (experts < 1) fail("experts must be >= 1");
  if (blocks < 0) fail("blocks must be >= 0");
  if (top_k < 0 || top_k > experts) {
    fail("top_k " + std::to_string(top_k) + " exceeds the " + std::to_string(experts) + " experts");
  }
  if (ssm_state < 1) fail("ssm_state must be >= 1");
  if (!(position_scale > 0) || !(min_scale > 0)) fail("position_scale and min_scale must be > 0");
  if (dropout < 0 || dropout >= 1) fail("dropout must be in [0, 1)");
  if (dilations.empty()) fail("dilations must not be empty");
  for (Index d : dilations)
    if (d < 1) fail("dilations must be >= 1");
}

template <typename T>
Var<T> to_plane(const Var<T>& x) {
  if (x.rank() != 4) throw nd::DimensionError("expected [t_f, K_n, B, D], got " + nd::to_string(x.shape()));
  return nd::permute(x, {2, 0, 1, 3});
}

template <typename T>
Var<T> from_plane(const Var<T>& x) {
  return nd::permute(x, {1, 2, 0, 3});
}

namespace {

// [B, F, K, D] <-> [B * K, F, D]
template <typename T>
Var<T> plane_to_sequences(const Var<T>& x) {
  const Index B = x.dim(0), F = x.dim(1), K = x.dim(2), D = x.dim(3);
  return nd::reshape(nd::permute(x, {0, 2, 1, 3}), Shape{B * K, F, D});
}

template <typename T>
Var<T> sequences_to_plane(const Var<T>& x, Index batch) {
  const Index K = x.dim(0) / batch, F = x.dim(1), D = x.dim(2);
  return nd::permute(nd::reshape(x, Shape{batch, K, F, D}), {0, 2, 1, 3});
}

}  // namespace

template <typename T>
NoiseInjector<T>::NoiseInjector(ParamStore<T>& store, const std::string& name, Index d, bool enabled)
    : proj_(store, name, d, d, false, nd::Init::normal(0.02)), enabled_(enabled) {}

template <typename T>
Var<T> NoiseInjector<T>::operator()(Tape<T>& tape, const Var<T>& x) const {
  if (!enabled_ || !tape.training()) return x;
  std::vector<T> z(static_cast<std::size_t>(x.value().size()));
  for (auto& v : z) v = static_cast<T>(tape.rng().normal());
  return x + proj_(tape, tape.constant(Array<T>(x.shape(), std::move(z))));
}

template <typename T>
CrossModalFusion<T>::CrossModalFusion(ParamStore<T>& store, const std::string& name, const DecisionConfig& config)
    : att_(store, name + "/att", config.d_model, config.heads, static_cast<T>(config.dropout)),
      ctx_(store, name + "/ctx", config.d_model, config.d_model) {}

template <typename T>
Var<T> CrossModalFusion<T>::operator()(Tape<T>& tape, const Var<T>& t_llm, const Var<T>& v_enc, const Var<T>& q_mode,
                                       const Array<T>* v_mask) const {
  const Index D = att_.d;
  if (q_mode.rank() != 4 || q_mode.dim(3) != D || t_llm.rank() != 3 || v_enc.rank() != 3 ||
      t_llm.dim(0) != q_mode.dim(2) || v_enc.dim(0) != q_mode.dim(2) || t_llm.dim(2) != D || v_enc.dim(2) != D) {
    throw nd::DimensionError("cross-modal fusion: t_llm " + nd::to_string(t_llm.shape()) + ", v_enc " +
                             nd::to_string(v_enc.shape()) + ", q_mode " + nd::to_string(q_mode.shape()));
  }
  const Index F = q_mode.dim(0), K = q_mode.dim(1), B = q_mode.dim(2), P = v_enc.dim(1);
  auto q = nd::reshape(to_plane(q_mode), Shape{B, F * K, D});
  auto c = nd::mean_axis(t_llm, 1, true);
  auto keys = (v_enc + tape.constant(memory::sinusoidal_encoding<T>(P, D))) * nd::add_scalar(ctx_(tape, c), T(1));
  auto out = q + att_(tape, q, keys, v_enc, v_mask);
  return from_plane(nd::reshape(out, Shape{B, F, K, D}));
}

template <typename T>
ConvStack<T>::ConvStack(ParamStore<T>& store, const std::string& name, Index d, const std::vector<Index>& dil, int r)
    : dilations(dil), rank(r) {
  const Index taps = rank == 1 ? 3 : 9;
  const double bound = 1.0 / std::sqrt(static_cast<double>(taps * d));
  for (std::size_t i = 0; i < dil.size(); ++i) {
    const std::string p = name + "/layer" + std::to_string(i);
    Shape ks = rank == 1 ? Shape{3, d, d} : Shape{3, 3, d, d};
    kernels.push_back(&store.create(p + "/kernel", ks, nd::Init::uniform(bound)));
    biases.push_back(&store.create(p + "/bias", {d}, nd::Init::zeros()));
  }
}

template <typename T>
Var<T> ConvStack<T>::operator()(const Var<T>& x) const {
  auto& tape = x.tape();
  Var<T> h = x;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    auto y = nd::dilated_conv(h, tape.param(*kernels[i]), dilations[i], rank) + tape.param(*biases[i]);
    h = h + nd::leaky_relu(y);
  }
  return h;
}

template <typename T>
TemporalConv<T>::TemporalConv(ParamStore<T>& store, const std::string& name, const DecisionConfig& config)
    : conv1d_(store, name + "/tcn1d", config.d_model, config.dilations, 1),
      conv2d_(store, name + "/tcn2d", config.d_model, config.dilations, 2) {}

template <typename T>
Var<T> TemporalConv<T>::operator()(const Var<T>& plane) const {
  const Index B = plane.dim(0);
  auto d1 = sequences_to_plane(conv1d_(plane_to_sequences(plane)), B) - plane;
  auto d2 = conv2d_(plane) - plane;
  return plane + nd::leaky_relu(d1) + d2;
}

template <typename T>
SsmBranch<T>::SsmBranch(ParamStore<T>& store, const std::string& name, Index d, Index state, Index k)
    : in_proj(store, name + "/in_proj", d, 2 * d),
      out_proj(store, name + "/out_proj", d, d),
      delta_proj(store, name + "/delta_proj", d, d),
      b_proj(store, name + "/b_proj", d, state, false),
      c_proj(store, name + "/c_proj", d, state, false),
      kernel(k) {
  pre_kernel = &store.create(name + "/pre_conv", {k, k, d, d},
                             nd::Init::uniform(1.0 / std::sqrt(static_cast<double>(k * k * d))));
  pre_bias = &store.create(name + "/pre_bias", {d}, nd::Init::zeros());
  // step sizes start near 0.05
  delta_proj.bias->value = Array<T>::full({d}, static_cast<T>(std::log(std::expm1(0.05))));
  a_log = &store.create(name + "/a_log", {d, state}, nd::Init::zeros());
  std::vector<T> a(static_cast<std::size_t>(d * state));
  for (Index e = 0; e < d; ++e)
    for (Index s = 0; s < state; ++s) a[static_cast<std::size_t>(e * state + s)] = static_cast<T>(std::log(s + 1.0));
  a_log->value = Array<T>({d, state}, std::move(a));
  skip = &store.create(name + "/skip", {d}, nd::Init::ones());
}

template <typename T>
Var<T> SsmBranch<T>::operator()(Tape<T>& tape, const Var<T>& plane) const {
  const Index B = plane.dim(0), D = plane.dim(3);
  auto xz = in_proj(tape, plane);
  auto u = nd::slice(xz, 3, 0, D);
  auto z = nd::slice(xz, 3, D, D);
  u = nd::silu(nd::dilated_conv(u, tape.param(*pre_kernel), 1, 2) + tape.param(*pre_bias));
  auto us = plane_to_sequences(u);
  auto delta = nd::softplus(delta_proj(tape, us));
  auto A = -nd::exp(tape.param(*a_log));
  auto y = nd::selective_scan(us, delta, A, b_proj(tape, us), c_proj(tape, us), tape.param(*skip));
  return out_proj(tape, sequences_to_plane(y, B) * nd::silu(z));
}

template <typename T>
SsmRefine<T>::SsmRefine(ParamStore<T>& store, const std::string& name, const DecisionConfig& config)
    : m1_(store, name + "/m3x3", config.d_model, config.ssm_state, 3),
      m2_(store, name + "/m1x1", config.d_model, config.ssm_state, 1) {}

template <typename T>
Var<T> SsmRefine<T>::operator()(Tape<T>& tape, const Var<T>& plane) const {
  return m1_(tape, plane) + m2_(tape, plane);
}

template <typename T>
Var<T> top_k_gates(const Var<T>& p, Index k) {
  const Index K = p.dim(p.rank() - 1);
  if (k < 1 || k > K) {
    throw nd::ConfigError("top-k routing: k = " + std::to_string(k) + " but there are " + std::to_string(K) +
                          " experts");
  }
  if (k == K) return p;
  const Array<T>& v = p.value();
  const Index rows = v.size() / K;
  std::vector<T> keep(static_cast<std::size_t>(v.size()), T(0));
  std::vector<Index> order(static_cast<std::size_t>(K));
  for (Index r = 0; r < rows; ++r) {
    std::iota(order.begin(), order.end(), Index(0));
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v[r * K + a] > v[r * K + b]; });
    for (Index j = 0; j < k; ++j) keep[static_cast<std::size_t>(r * K + order[static_cast<std::size_t>(j)])] = T(1);
  }
  auto kept = p * p.tape().constant(Array<T>(v.shape(), std::move(keep)));
  return kept / nd::sum_axis(kept, p.rank() - 1, true);
}

void GateTelemetry::record(Index block, const Array<double>& gates, const std::vector<std::string>& labels,
                           const std::vector<std::string>& scene_ids) {
  if (gates.rank() != 3 || static_cast<Index>(labels.size()) != gates.dim(0) ||
      (!scene_ids.empty() && scene_ids.size() != labels.size())) {
    throw nd::DimensionError("gate telemetry: gates " + nd::to_string(gates.shape()) + " for " +
                             std::to_string(labels.size()) + " labels");
  }
  const Index B = gates.dim(0), L = gates.dim(1), K = gates.dim(2);
  for (Index b = 0; b < B; ++b) {
    std::vector<double> mean(static_cast<std::size_t>(K), 0.0);
    for (Index l = 0; l < L; ++l) {
      double total = 0;
      for (Index k = 0; k < K; ++k) {
        const double p = gates[(b * L + l) * K + k];
        total += p;
        min_gate_ = std::min(min_gate_, p);
        auto& cell = cells_[{block, k, labels[static_cast<std::size_t>(b)]}];
        cell.weight_sum += p;
        cell.tokens += 1;
        mean[static_cast<std::size_t>(k)] += p / static_cast<double>(L);
      }
      max_simplex_error_ = std::max(max_simplex_error_, std::abs(total - 1.0));
    }
    if (!scene_ids.empty()) {
      const auto& id = scene_ids[static_cast<std::size_t>(b)];
      auto& vec = scene_vectors_[id];
      if (static_cast<Index>(vec.size()) < (block + 1) * K) vec.resize(static_cast<std::size_t>((block + 1) * K), 0.0);
      std::copy(mean.begin(), mean.end(), vec.begin() + block * K);
      scene_labels_[id] = labels[static_cast<std::size_t>(b)];
    }
  }
}

void GateTelemetry::write_csv(std::ostream& out) const {
  out << "block,expert,scenario,mean_weight,token_count\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& [key, cell] : cells_) {
    const auto& [block, expert, scenario] = key;
    out << block << ',' << expert << ',' << scenario << ','
        << (cell.tokens > 0 ? cell.weight_sum / static_cast<double>(cell.tokens) : 0.0) << ',' << cell.tokens
        << '\n';
  }
}

template <typename T>
MoeBlock<T>::MoeBlock(ParamStore<T>& store, const std::string& name, const DecisionConfig& config)
    : config_(config),
      ln1_(store, name + "/ln1", config.d_model),
      ln2_(store, name + "/ln2", config.d_model),
      ln3_(store, name + "/ln3", config.d_model),
      msa_(store, name + "/msa", config.d_model, config.heads, static_cast<T>(config.dropout)) {
  const Index D = config.d_model;
  const Index n = config.dense ? 1 : config.experts;
  if (!config.dense) router_ = nd::Mlp<T>(store, name + "/router", D, D, config.experts);
  for (Index i = 0; i < n; ++i) {
    experts_.emplace_back(store, name + "/expert" + std::to_string(i), D, D, D, nd::Activation::Gelu,
                          static_cast<T>(config.dropout));
  }
}

template <typename T>
Var<T> MoeBlock<T>::route(Tape<T>& tape, const Var<T>& x) const {
  return nd::softmax(router_(tape, x), -1);
}

template <typename T>
Var<T> MoeBlock<T>::operator()(Tape<T>& tape, const Var<T>& h, Var<T>* gates) const {
  auto x = ln1_(tape, h);
  auto hs = msa_(tape, x, x, x) + h;
  auto e_in = ln2_(tape, hs);
  Var<T> mixed;
  if (config_.dense) {
    mixed = experts_[0](tape, e_in);
  } else {
    auto p = route(tape, hs);
    if (!tape.training() && config_.top_k > 0) p = top_k_gates(p, config_.top_k);
    if (gates != nullptr) *gates = p;
    for (std::size_t i = 0; i < experts_.size(); ++i) {
      auto term = nd::slice(p, 2, static_cast<Index>(i), 1) * experts_[i](tape, e_in);
      mixed = i == 0 ? term : mixed + term;
    }
  }
  return ln3_(tape, mixed + hs);
}

template <typename T>
TrajectoryDecoder<T>::TrajectoryDecoder(ParamStore<T>& store, const std::string& name, const DecisionConfig& config)
    : config_(config),
      gru_(store, name + "/gru", 2 * config.d_model, config.d_model),
      loc_(store, name + "/loc", config.d_model, config.d_model, 2),
      scale_(store, name + "/scale", config.d_model, config.d_model, 2),
      mode_(store, name + "/mode", config.d_model, 1) {}

template <typename T>
objectives::Forecast<T> TrajectoryDecoder<T>::operator()(Tape<T>& tape, const Var<T>& plane,
                                                         const Var<T>& context) const {
  const Index B = plane.dim(0), F = plane.dim(1), K = plane.dim(2), D = plane.dim(3);
  if (context.shape() != Shape{B, D}) {
    throw nd::DimensionError("decoder context " + nd::to_string(context.shape()) + " for plane " +
                             nd::to_string(plane.shape()));
  }
  auto ctx = nd::broadcast_to(nd::reshape(context, Shape{B, 1, 1, D}), Shape{B, K, F, D});
  auto seq = nd::concat(std::vector<Var<T>>{plane_to_sequences(plane), nd::reshape(ctx, Shape{B * K, F, D})}, 2);
  auto out = gru_.run(tape, seq, tape.constant(Array<T>::zeros({B * K, D})));
  const T scale = static_cast<T>(config_.position_scale);
  objectives::Forecast<T> f;
  f.mu = nd::reshape(loc_(tape, out) * scale, Shape{B, K, F, 2});
  f.scale = nd::reshape(nd::add_scalar(nd::softplus(scale_(tape, out)) * scale, static_cast<T>(config_.min_scale)),
                        Shape{B, K, F, 2});
  f.pi = nd::softmax(nd::reshape(mode_(tape, nd::mean_axis(out, 1)), Shape{B, K}), -1);
  return f;
}

template <typename T>
DecisionModule<T>::DecisionModule(ParamStore<T>& store, const std::string& name, const DecisionConfig& config)
    : config_((config.validate(), config)),
      noise_q_(store, name + "/noise_q", config.d_model, config.noise),
      noise_l_(store, name + "/noise_l", config.d_model, config.noise),
      noise_v_(store, name + "/noise_v", config.d_model, config.noise),
      fuse_(store, name + "/fuse", config),
      tcn_(store, name + "/tcn", config),
      ssm_(store, name + "/ssm", config),
      context_(store, name + "/context", 2 * config.d_model, config.d_model),
      decoder_(store, name + "/decoder", config) {
  for (Index l = 0; l < config.blocks; ++l) blocks_.emplace_back(store, name + "/block" + std::to_string(l), config);
}

template <typename T>
objectives::Forecast<T> DecisionModule<T>::operator()(Tape<T>& tape, const Var<T>& q_mode, const Var<T>& t_llm,
                                                      const Var<T>& v_enc, const Var<T>& t_enc,
                                                      DecisionTrace<T>* trace) const {
  const Index D = config_.d_model;
  if (q_mode.rank() != 4 || q_mode.dim(0) != config_.future || q_mode.dim(1) != config_.modes) {
    throw nd::DimensionError("decision: q_mode must be [" + std::to_string(config_.future) + ", " +
                             std::to_string(config_.modes) + ", B, D], got " + nd::to_string(q_mode.shape()));
  }
  if (t_enc.shape() != t_llm.shape()) {
    throw nd::DimensionError("decision: t_enc " + nd::to_string(t_enc.shape()) + " vs t_llm " +
                             nd::to_string(t_llm.shape()));
  }
  const Index B = q_mode.dim(2), F = config_.future, K = config_.modes, T_ = t_llm.dim(1);
  auto q_c = fuse_(tape, noise_l_(tape, t_llm), noise_v_(tape, v_enc), noise_q_(tape, q_mode));
  auto q_cp = tcn_(to_plane(q_c));
  auto f_c = ssm_(tape, q_cp);

  auto h = nd::reshape(f_c, Shape{B, F * K, D});
  std::vector<Var<T>> gates;
  for (const auto& block : blocks_) {
    Var<T> p;
    h = block(tape, h, &p);
    if (!config_.dense) gates.push_back(p);
  }
  auto f_moe = nd::reshape(h, Shape{B, F, K, D});

  auto last = nd::concat(std::vector<Var<T>>{nd::slice(t_enc, 1, T_ - 1, 1), nd::slice(t_llm, 1, T_ - 1, 1)}, 2);
  auto ctx = context_(tape, nd::reshape(last, Shape{B, 2 * D}));
  auto forecast = decoder_(tape, f_moe, ctx);
  if (trace != nullptr) {
    trace->q_c = q_c;
    trace->q_c_prime = from_plane(q_cp);
    trace->f_c = from_plane(f_c);
    trace->f_moe = from_plane(f_moe);
    trace->gates = std::move(gates);
  }
  return forecast;
}

#define WMMOE_INSTANTIATE_DECISION(T)                \
  template Var<T> to_plane(const Var<T>&);           \
  template Var<T> from_plane(const Var<T>&);         \
  template Var<T> top_k_gates(const Var<T>&, Index); \
  template class NoiseInjector<T>;                   \
  template class CrossModalFusion<T>;                \
  template struct ConvStack<T>;                      \
  template class TemporalConv<T>;                    \
  template class SsmBranch<T>;                       \
  template class SsmRefine<T>;                       \
  template class MoeBlock<T>;                        \
  template class TrajectoryDecoder<T>;               \
  template class DecisionModule<T>;

WMMOE_INSTANTIATE_DECISION(float)
WMMOE_INSTANTIATE_DECISION(double)

}  // namespace wmmoe::decision
