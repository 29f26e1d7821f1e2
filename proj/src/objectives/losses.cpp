#include "wmmoe/objectives/losses.hpp"

#include <cmath>
#include <limits>

namespace wmmoe::objectives {

using nd::Shape;

namespace {

template <typename T>
void check_traj(const Shape& mu, const Array<T>& gt, const char* what) {
  if (mu.size() != 3 || mu[2] != 2 || gt.shape() != mu) {
    throw nd::DimensionError(std::string(what) + ": expected matching [B, t_f, 2], got " + nd::to_string(mu) +
                             " and " + nd::to_string(gt.shape()));
  }
}

}  // namespace

template <typename T>
std::vector<Index> winner_modes(const Array<T>& mu, const Array<T>& gt) {
  const auto& s = mu.shape();
  if (s.size() != 4 || s[3] != 2 || gt.shape() != Shape{s[0], s[2], 2}) {
    throw nd::DimensionError("winner_modes: mu " + nd::to_string(s) + " vs gt " + nd::to_string(gt.shape()));
  }
  const Index B = s[0], K = s[1], L = s[2];
  std::vector<Index> out(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    double best = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < K; ++k) {
      double acc = 0;
      for (Index t = 0; t < L; ++t) {
        const Index m = ((b * K + k) * L + t) * 2, g = (b * L + t) * 2;
        acc += std::hypot(double(mu[m]) - double(gt[g]), double(mu[m + 1]) - double(gt[g + 1]));
      }
      if (acc < best) {
        best = acc;
        out[static_cast<std::size_t>(b)] = k;
      }
    }
  }
  return out;
}

template <typename T>
Var<T> select_mode(const Var<T>& x, const std::vector<Index>& winners) {
  if (x.rank() < 2 || static_cast<Index>(winners.size()) != x.dim(0)) {
    throw nd::DimensionError("select_mode: " + nd::to_string(x.shape()) + " with " +
                             std::to_string(winners.size()) + " winners");
  }
  const Index B = x.dim(0), K = x.dim(1);
  Shape hot(static_cast<std::size_t>(x.rank()), 1);
  hot[0] = B;
  hot[1] = K;
  std::vector<T> v(static_cast<std::size_t>(B * K), T(0));
  for (Index b = 0; b < B; ++b) {
    const Index w = winners[static_cast<std::size_t>(b)];
    if (w < 0 || w >= K) throw nd::ContractError("select_mode: winner index out of range");
    v[static_cast<std::size_t>(b * K + w)] = T(1);
  }
  return nd::sum_axis(x * x.tape().constant(Array<T>(hot, std::move(v))), 1);
}

template <typename T>
Var<T> ade_loss(const Var<T>& mu, const Array<T>& gt) {
  check_traj(mu.shape(), gt, "ade_loss");
  auto e = mu - mu.tape().constant(gt);
  // tiny floor keeps the norm differentiable at zero error
  auto dist = nd::sqrt(nd::add_scalar(nd::sum_axis(nd::square(e), -1), T(1e-12)));
  return nd::mean(dist);
}

template <typename T>
Var<T> laplace_nll(const Var<T>& mu, const Var<T>& b, const Array<T>& gt) {
  check_traj(mu.shape(), gt, "laplace_nll");
  if (b.shape() != mu.shape()) throw nd::DimensionError("laplace_nll: scale shape " + nd::to_string(b.shape()));
  for (T v : b.value().data())
    if (!(v > T(0))) throw nd::ContractError("laplace_nll: scale must be positive");
  auto resid = nd::abs(mu - mu.tape().constant(gt)) / b;
  return nd::mean(nd::log(b * T(2)) + resid);
}

template <typename T>
Var<T> mode_cls_loss(const Var<T>& pi, const std::vector<Index>& winners) {
  if (pi.rank() != 2) throw nd::DimensionError("mode_cls_loss: pi must be [B, K], got " + nd::to_string(pi.shape()));
  return -nd::mean(nd::log(nd::clamp_min(select_mode(pi, winners), T(1e-12))));
}

template <typename T>
Var<T> mse_loss(const Var<T>& mu, const Array<T>& gt) {
  check_traj(mu.shape(), gt, "mse_loss");
  auto e = mu - mu.tape().constant(gt);
  return nd::mean(nd::sum_axis(nd::square(e), -1));
}

template <typename T>
Var<T> combined_loss_multimodal(const Var<T>& ade, const Var<T>& reg, const Var<T>& cls, const LossWeights& w) {
  return ade + reg * static_cast<T>(w.lambda_reg) + cls * static_cast<T>(w.lambda_cls);
}

template <typename T>
Var<T> combined_loss_rmse(const Var<T>& mse, const Var<T>& ce, const LossWeights& w) {
  return mse * static_cast<T>(w.gamma_mse) + ce * static_cast<T>(w.gamma_ce);
}

template <typename T>
LossOutput<T> compute_loss(const Forecast<T>& f, const Array<T>& gt, LossProfile profile, const LossWeights& w) {
  LossOutput<T> out;
  auto& r = out.report;
  r.profile = profile;
  r.winners = winner_modes(f.mu.value(), gt);
  const auto mu_w = select_mode(f.mu, r.winners);
  const auto cls = mode_cls_loss(f.pi, r.winners);
  if (profile == LossProfile::MultiModal) {
    const auto ade = ade_loss(mu_w, gt);
    const auto reg = laplace_nll(mu_w, select_mode(f.scale, r.winners), gt);
    out.total = combined_loss_multimodal(ade, reg, cls, w);
    r.ade = ade.value().item();
    r.reg = reg.value().item();
    r.cls = cls.value().item();
    r.w1 = w.lambda_reg;
    r.w2 = w.lambda_cls;
  } else {
    const auto mse = mse_loss(mu_w, gt);
    out.total = combined_loss_rmse(mse, cls, w);
    r.mse = mse.value().item();
    r.ce = cls.value().item();
    r.w1 = w.gamma_mse;
    r.w2 = w.gamma_ce;
  }
  r.total = out.total.value().item();
  return out;
}

#define WMMOE_INSTANTIATE_LOSSES(T)                                                                        \
  template std::vector<Index> winner_modes(const Array<T>&, const Array<T>&);                              \
  template Var<T> select_mode(const Var<T>&, const std::vector<Index>&);                                   \
  template Var<T> ade_loss(const Var<T>&, const Array<T>&);                                                \
  template Var<T> laplace_nll(const Var<T>&, const Var<T>&, const Array<T>&);                              \
  template Var<T> mode_cls_loss(const Var<T>&, const std::vector<Index>&);                                 \
  template Var<T> mse_loss(const Var<T>&, const Array<T>&);                                                \
  template Var<T> combined_loss_multimodal(const Var<T>&, const Var<T>&, const Var<T>&, const LossWeights&); \
  template Var<T> combined_loss_rmse(const Var<T>&, const Var<T>&, const LossWeights&);                    \
  template LossOutput<T> compute_loss(const Forecast<T>&, const Array<T>&, LossProfile, const LossWeights&);

WMMOE_INSTANTIATE_LOSSES(float)
WMMOE_INSTANTIATE_LOSSES(double)

}  // namespace wmmoe::objectives
