#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wmmoe/objectives/metrics.hpp"
#include "wmmoe/runtime/checkpoint.hpp"
#include "wmmoe/runtime/model.hpp"
#include "wmmoe/runtime/optim.hpp"

namespace wmmoe::runtime {

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  /// Means over the epoch's batches.
  double loss = 0.0, ade = 0.0, reg = 0.0, cls = 0.0, mse = 0.0, ce = 0.0, grad_norm = 0.0;
  int batches = 0;
  double seconds = 0.0;
};

/// Header `epoch,lr,loss,ade,reg,cls,mse,ce,grad_norm,batches,seconds`.
void write_loss_csv(std::ostream& out, const std::vector<EpochLog>& log);

/// Single-precision training loop: seeded shuffle per epoch, Adam on the
/// trainable parameters, global-norm clipping, cosine rate stepped per epoch.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);
  /// Resumes from the parameters and epoch counter of `ckpt`; Adam moments restart.
  explicit Trainer(const Checkpoint& ckpt);

  /// One pass over `corpus`. Throws TrainingError naming the epoch and batch
  /// on a non-finite loss.
  EpochLog run_epoch(const std::vector<scenes::Scene>& corpus);
  /// Runs epochs until config.epochs; each finished row is also streamed to `log` as CSV.
  std::vector<EpochLog> fit(const std::vector<scenes::Scene>& corpus, std::ostream* log = nullptr);

  Checkpoint checkpoint() const;
  int epoch() const { return epoch_; }
  const TrainConfig& config() const { return config_; }
  ParamStore<float>& store() { return *store_; }
  const WmMoeModel<float>& model() const { return *model_; }
  const Adam<float>& optimizer() const { return adam_; }

 private:
  TrainConfig config_;
  std::unique_ptr<ParamStore<float>> store_;
  std::unique_ptr<WmMoeModel<float>> model_;
  Adam<float> adam_;
  int epoch_ = 0;
};

/// Double-precision model restored from a checkpoint.
struct LoadedModel {
  std::unique_ptr<ParamStore<double>> store;
  std::unique_ptr<WmMoeModel<double>> model;
};
LoadedModel load_model(const Checkpoint& ckpt);

struct EvalOptions {
  std::vector<int> gs = {1, 5};
  /// RMSE horizons in steps; empty skips RMSE.
  std::vector<int> horizons;
  double theta = 2.0;
  int rmse_g = 1;
};

struct EvalResult {
  objectives::MetricReport overall;
  std::map<corpus::ScenarioClass, objectives::MetricReport> per_class;
  objectives::MetricInputs inputs;
  std::vector<corpus::ScenarioClass> classes;
};

/// Eval-mode forward over `scenes` in order, batches of config.eval_batch_size.
/// Unlabeled scenes are classified with the model's curation thresholds.
/// Throws nd::ConfigError on an empty g list or g above the mode count and
/// nd::ContractError on an empty corpus.
template <typename T>
EvalResult evaluate(const WmMoeModel<T>& model, const std::vector<scenes::Scene>& scenes, const EvalOptions& opts = {});

/// Rows `metric,g,value,n_samples`.
void write_eval_csv(std::ostream& out, const EvalResult& r);
/// Rows `scenario,metric,g,value,n_samples`, classes in canonical order.
void write_class_csv(std::ostream& out, const EvalResult& r);

/// Gate weights of every MoE block over `scenes`, aggregated by scenario class.
template <typename T>
decision::GateTelemetry route_stats(const WmMoeModel<T>& model, const std::vector<scenes::Scene>& scenes);

struct DivergenceResult {
  /// Between-class dispersion sum_c n_c |mean_c - mean|^2 of per-scene gate vectors.
  double statistic = 0.0;
  /// 95th percentile of the statistic under label permutation.
  double null_p95 = 0.0;
  /// (1 + #{null >= statistic}) / (1 + permutations).
  double p_value = 1.0;
  int permutations = 0;
  bool significant() const { return statistic > null_p95; }
};

/// Needs telemetry recorded with scene ids.
DivergenceResult gate_divergence(const decision::GateTelemetry& telemetry, int permutations = 999,
                                 std::uint64_t seed = 0);

}  // namespace wmmoe::runtime
