#include "wmmoe/runtime/optim.hpp"

#include <cmath>
#include <numbers>

namespace wmmoe::runtime {

double cosine_lr(double lr, double eta_min, int t_max, int step) {
  if (t_max <= 0) throw nd::ConfigError("cosine schedule: t_max must be positive");
  return eta_min + (lr - eta_min) * (1.0 + std::cos(std::numbers::pi * step / t_max)) / 2.0;
}

template <typename T>
double clip_grad_norm(nd::ParamStore<T>& store, double max_norm) {
  double sq = 0.0;
  for (auto* p : store.trainable())
    for (T g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto* p : store.trainable())
      for (T& g : p->grad) g *= s;
  }
  return norm;
}

template <typename T>
void Adam<T>::step(nd::ParamStore<T>& store, double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (auto* p : store.trainable()) {
    const auto n = static_cast<std::size_t>(p->value.size());
    if (p->grad.size() != n) continue;
    auto& st = state_[p->name];
    if (st.m.empty()) {
      st.m.assign(n, 0.0);
      st.v.assign(n, 0.0);
    }
    auto x = p->value.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p->grad[i];
      st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
      st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
      const double mh = st.m[i] / c1, vh = st.v[i] / c2;
      x[i] = static_cast<T>(static_cast<double>(x[i]) - lr * mh / (std::sqrt(vh) + eps_));
    }
    p->value = nd::Array<T>(p->value.shape(), std::move(x));
  }
}

template double clip_grad_norm(nd::ParamStore<float>&, double);
template double clip_grad_norm(nd::ParamStore<double>&, double);
template class Adam<float>;
template class Adam<double>;

}  // namespace wmmoe::runtime
