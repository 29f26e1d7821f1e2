#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "wmmoe/nd/array.hpp"

namespace wmmoe::objectives {

/// Forecasts and ground truth for N samples: mu [N, K, t_f, 2], pi [N, K], gt [N, t_f, 2].
struct MetricInputs {
  nd::Array<double> mu;
  nd::Array<double> pi;
  nd::Array<double> gt;

  nd::Index samples() const { return mu.dim(0); }
  nd::Index modes() const { return mu.dim(1); }
  nd::Index steps() const { return mu.dim(2); }
  /// Throws nd::DimensionError on inconsistent shapes.
  void check() const;
};

/// Indices of the `g` most probable modes of sample `i`, ties broken by lower index.
/// Throws nd::ContractError unless 1 <= g <= K.
std::vector<nd::Index> top_modes(const MetricInputs& in, nd::Index i, int g);

/// Per-sample values; the aggregate metrics are their means.
std::vector<double> min_ade_per_sample(const MetricInputs& in, int g);
std::vector<double> min_fde_per_sample(const MetricInputs& in, int g);
/// Best-mode mean squared displacement over the first `horizon` steps.
std::vector<double> min_msd_per_sample(const MetricInputs& in, int g, int horizon);

double min_ade(const MetricInputs& in, int g);
double min_fde(const MetricInputs& in, int g);
/// Fraction of samples whose best final error exceeds theta (strict).
double miss_rate(const MetricInputs& in, int g, double theta = 2.0);
/// sqrt of the sample mean of the best-mode mean squared displacement up to `horizon`.
double rmse(const MetricInputs& in, int g, int horizon);

struct MetricReport {
  nd::Index n_samples = 0;
  double theta = 2.0;
  std::map<int, double> min_ade, min_fde, miss_rate;
  /// Keyed by horizon in steps, evaluated with `rmse_g` modes.
  std::map<int, double> rmse;
  int rmse_g = 1;
};

MetricReport evaluate_metrics(const MetricInputs& in, const std::vector<int>& gs, const std::vector<int>& horizons,
                              double theta = 2.0, int rmse_g = 1);

/// Rows `metric,g,value,n_samples`; `prefix` is prepended to every row (e.g. "Turning,").
void write_metric_rows(std::ostream& out, const MetricReport& r, const std::string& prefix = "");

}  // namespace wmmoe::objectives
