#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wmmoe/nd/nn.hpp"

namespace wmmoe::runtime {

/// Cosine-annealed rate at schedule step `step`:
/// eta_min + (lr - eta_min) (1 + cos(pi step / t_max)) / 2.
double cosine_lr(double lr, double eta_min, int t_max, int step);

/// Raised when training produces a non-finite loss or gradient.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rescales all trainable gradients so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping. max_norm <= 0 disables.
template <typename T>
double clip_grad_norm(nd::ParamStore<T>& store, double max_norm);

/// Adam with bias correction. Moments are kept in double and keyed by
/// parameter name; frozen parameters never get an entry.
template <typename T>
class Adam {
 public:
  struct Moments {
    std::vector<double> m, v;
  };

  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(nd::ParamStore<T>& store, double lr);

  std::int64_t steps() const { return steps_; }
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace wmmoe::runtime
