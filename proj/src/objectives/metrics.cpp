#include "wmmoe/objectives/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace wmmoe::objectives {

using nd::Index;

void MetricInputs::check() const {
  const auto& s = mu.shape();
  if (s.size() != 4 || s[3] != 2 || pi.shape() != nd::Shape{s[0], s[1]} || gt.shape() != nd::Shape{s[0], s[2], 2}) {
    throw nd::DimensionError("metrics: mu " + nd::to_string(s) + ", pi " + nd::to_string(pi.shape()) + ", gt " +
                             nd::to_string(gt.shape()));
  }
}

std::vector<Index> top_modes(const MetricInputs& in, Index i, int g) {
  const Index K = in.modes();
  if (g < 1 || g > K) {
    throw nd::ContractError("metrics: G must lie in [1, " + std::to_string(K) + "], got " + std::to_string(g));
  }
  std::vector<Index> idx(static_cast<std::size_t>(K));
  std::iota(idx.begin(), idx.end(), Index{0});
  const double* p = in.pi.ptr() + i * K;
  std::stable_sort(idx.begin(), idx.end(), [p](Index a, Index b) { return p[a] > p[b]; });
  idx.resize(static_cast<std::size_t>(g));
  return idx;
}

namespace {

double dist(const MetricInputs& in, Index i, Index k, Index t) {
  const Index L = in.steps();
  const double* m = in.mu.ptr() + ((i * in.modes() + k) * L + t) * 2;
  const double* y = in.gt.ptr() + (i * L + t) * 2;
  return std::hypot(m[0] - y[0], m[1] - y[1]);
}

template <typename F>
std::vector<double> best_over_modes(const MetricInputs& in, int g, F per_mode) {
  in.check();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(in.samples()));
  for (Index i = 0; i < in.samples(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index k : top_modes(in, i, g)) best = std::min(best, per_mode(i, k));
    out.push_back(best);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> min_ade_per_sample(const MetricInputs& in, int g) {
  return best_over_modes(in, g, [&in](Index i, Index k) {
    double acc = 0;
    for (Index t = 0; t < in.steps(); ++t) acc += dist(in, i, k, t);
    return acc / static_cast<double>(in.steps());
  });
}

std::vector<double> min_fde_per_sample(const MetricInputs& in, int g) {
  return best_over_modes(in, g, [&in](Index i, Index k) { return dist(in, i, k, in.steps() - 1); });
}

std::vector<double> min_msd_per_sample(const MetricInputs& in, int g, int horizon) {
  if (horizon < 1 || horizon > in.steps()) {
    throw nd::ContractError("rmse: horizon must lie in [1, " + std::to_string(in.steps()) + "]");
  }
  return best_over_modes(in, g, [&in, horizon](Index i, Index k) {
    double acc = 0;
    for (Index t = 0; t < horizon; ++t) {
      const double d = dist(in, i, k, t);
      acc += d * d;
    }
    return acc / horizon;
  });
}

double min_ade(const MetricInputs& in, int g) { return mean_of(min_ade_per_sample(in, g)); }
double min_fde(const MetricInputs& in, int g) { return mean_of(min_fde_per_sample(in, g)); }

double miss_rate(const MetricInputs& in, int g, double theta) {
  const auto fde = min_fde_per_sample(in, g);
  if (fde.empty()) return 0.0;
  const auto misses = std::count_if(fde.begin(), fde.end(), [theta](double d) { return d > theta; });
  return static_cast<double>(misses) / static_cast<double>(fde.size());
}

double rmse(const MetricInputs& in, int g, int horizon) { return std::sqrt(mean_of(min_msd_per_sample(in, g, horizon))); }

MetricReport evaluate_metrics(const MetricInputs& in, const std::vector<int>& gs, const std::vector<int>& horizons,
                              double theta, int rmse_g) {
  in.check();
  MetricReport r;
  r.n_samples = in.samples();
  r.theta = theta;
  r.rmse_g = rmse_g;
  for (int g : gs) {
    r.min_ade[g] = min_ade(in, g);
    r.min_fde[g] = min_fde(in, g);
    r.miss_rate[g] = miss_rate(in, g, theta);
  }
  for (int h : horizons) r.rmse[h] = rmse(in, rmse_g, h);
  return r;
}

void write_metric_rows(std::ostream& out, const MetricReport& r, const std::string& prefix) {
  out.precision(10);
  auto row = [&](const std::string& metric, int g, double v) {
    out << prefix << metric << ',' << g << ',' << v << ',' << r.n_samples << '\n';
  };
  for (const auto& [g, v] : r.min_ade) row("minADE", g, v);
  for (const auto& [g, v] : r.min_fde) row("minFDE", g, v);
  for (const auto& [g, v] : r.miss_rate) row("MR", g, v);
  for (const auto& [h, v] : r.rmse) row("RMSE@" + std::to_string(h), r.rmse_g, v);
}

}  // namespace wmmoe::objectives
