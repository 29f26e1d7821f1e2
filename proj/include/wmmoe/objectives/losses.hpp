#pragma once

#include <vector>

#include "wmmoe/nd/ops.hpp"

namespace wmmoe::objectives {

using nd::Array;
using nd::Index;
using nd::Var;

/// Multimodal Laplace forecast for a batch.
template <typename T>
struct Forecast {
  Var<T> mu;     // [B, K, t_f, 2] positions
  Var<T> scale;  // [B, K, t_f, 2] Laplace scale b > 0
  Var<T> pi;     // [B, K] mode probabilities
};

enum class LossProfile { MultiModal, Rmse };

struct LossWeights {
  double lambda_reg = 1.0;
  double lambda_cls = 0.5;
  double gamma_mse = 1.0;
  double gamma_ce = 1.0;
};

struct LossReport {
  LossProfile profile = LossProfile::MultiModal;
  double total = 0.0;
  // MultiModal profile
  double ade = 0.0, reg = 0.0, cls = 0.0;
  // Rmse profile
  double mse = 0.0, ce = 0.0;
  double w1 = 0.0, w2 = 0.0;
  std::vector<Index> winners;
};

template <typename T>
struct LossOutput {
  Var<T> total;
  LossReport report;
};

/// Per-sample index of the mode with the smallest average displacement to `gt` [B, t_f, 2].
template <typename T>
std::vector<Index> winner_modes(const Array<T>& mu, const Array<T>& gt);

/// Picks mode `winners[b]` of x [B, K, ...] -> [B, ...]; gradients flow only to the chosen mode.
template <typename T>
Var<T> select_mode(const Var<T>& x, const std::vector<Index>& winners);

/// Mean over batch of the time-averaged Euclidean error of `mu` [B, t_f, 2].
template <typename T>
Var<T> ade_loss(const Var<T>& mu, const Array<T>& gt);

/// Per-coordinate log(2b) + |y - mu| / b averaged over batch, time and both coordinates.
/// Throws nd::ContractError if any b <= 0.
template <typename T>
Var<T> laplace_nll(const Var<T>& mu, const Var<T>& b, const Array<T>& gt);

/// Mean over batch of -log(max(pi[winner], 1e-12)).
template <typename T>
Var<T> mode_cls_loss(const Var<T>& pi, const std::vector<Index>& winners);

/// Mean over batch and time of the squared displacement.
template <typename T>
Var<T> mse_loss(const Var<T>& mu, const Array<T>& gt);

inline double combined_loss_multimodal(double ade, double reg, double cls, const LossWeights& w = {}) {
  return ade + w.lambda_reg * reg + w.lambda_cls * cls;
}
inline double combined_loss_rmse(double mse, double ce, const LossWeights& w = {}) {
  return w.gamma_mse * mse + w.gamma_ce * ce;
}

template <typename T>
Var<T> combined_loss_multimodal(const Var<T>& ade, const Var<T>& reg, const Var<T>& cls, const LossWeights& w = {});
template <typename T>
Var<T> combined_loss_rmse(const Var<T>& mse, const Var<T>& ce, const LossWeights& w = {});

/// Winner-takes-all training loss for `profile`. gt is [B, t_f, 2].
template <typename T>
LossOutput<T> compute_loss(const Forecast<T>& f, const Array<T>& gt, LossProfile profile, const LossWeights& w = {});

}  // namespace wmmoe::objectives
