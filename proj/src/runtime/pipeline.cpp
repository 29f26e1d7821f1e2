#include "wmmoe/runtime/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>

namespace wmmoe::runtime {

using scenes::Scene;

namespace {

std::vector<std::size_t> shuffled(std::size_t n, nd::RngStream rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

corpus::ScenarioClass class_of(const Scene& s, const corpus::CurationConfig& c) {
  return s.label ? corpus::parse_scenario(*s.label) : corpus::classify_scenario(s, c);
}

void for_each_batch(const std::vector<Scene>& scenes, const TrainConfig& cfg,
                    const std::function<void(const perception::SceneBatch&, std::size_t)>& fn) {
  const auto bc = cfg.batch_config();
  const auto step = static_cast<std::size_t>(cfg.eval_batch_size);
  std::vector<const Scene*> ptrs;
  for (std::size_t start = 0; start < scenes.size(); start += step) {
    ptrs.clear();
    for (std::size_t i = start; i < std::min(scenes.size(), start + step); ++i) ptrs.push_back(&scenes[i]);
    fn(perception::make_batch(ptrs, bc), start);
  }
}

}  // namespace

void write_loss_csv(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,lr,loss,ade,reg,cls,mse,ce,grad_norm,batches,seconds\n";
  out.precision(10);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.lr << ',' << e.loss << ',' << e.ade << ',' << e.reg << ',' << e.cls << ',' << e.mse
        << ',' << e.ce << ',' << e.grad_norm << ',' << e.batches << ',' << e.seconds << '\n';
  }
}

Trainer::Trainer(const TrainConfig& config)
    : config_((config.validate(), config)),
      store_(std::make_unique<ParamStore<float>>(config.seed)),
      model_(std::make_unique<WmMoeModel<float>>(*store_, config_)) {}

Trainer::Trainer(const Checkpoint& ckpt) : Trainer(ckpt.config) {
  restore(ckpt, *store_);
  epoch_ = ckpt.rng.epoch;
}

EpochLog Trainer::run_epoch(const std::vector<Scene>& corpus) {
  if (corpus.empty()) throw nd::ContractError("train: empty corpus");
  const auto t0 = std::chrono::steady_clock::now();
  EpochLog log;
  log.epoch = epoch_;
  log.lr = cosine_lr(config_.lr, config_.eta_min, config_.t_max, epoch_);
  const auto order =
      shuffled(corpus.size(), nd::RngStream(config_.seed, nd::fnv1a64("shuffle")).fork(static_cast<std::uint64_t>(epoch_)));
  const auto bc = config_.batch_config();
  const auto profile = config_.loss_profile();
  const auto weights = config_.loss_weights();
  const auto bs = static_cast<std::size_t>(config_.batch_size);
  std::vector<const Scene*> ptrs;
  for (std::size_t start = 0, b = 0; start < order.size(); start += bs, ++b) {
    ptrs.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) ptrs.push_back(&corpus[order[i]]);
    const auto batch = perception::make_batch(ptrs, bc);
    const std::string where = "epoch " + std::to_string(epoch_) + " batch " + std::to_string(b);
    Tape<float> tape({true, true, config_.seed, nd::fnv1a64("train/" + where)});
    const auto forecast = (*model_)(tape, batch);
    const auto out = objectives::compute_loss(forecast, batch.future.cast<float>(), profile, weights);
    if (!std::isfinite(out.report.total)) throw TrainingError("non-finite loss at " + where);
    store_->zero_grad();
    tape.backward(out.total);
    double norm = 0.0;
    try {
      norm = clip_grad_norm(*store_, config_.grad_clip);
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at " + where);
    }
    adam_.step(*store_, log.lr);
    const auto& r = out.report;
    log.loss += r.total;
    log.ade += r.ade;
    log.reg += r.reg;
    log.cls += r.cls;
    log.mse += r.mse;
    log.ce += r.ce;
    log.grad_norm += norm;
    ++log.batches;
  }
  const double n = log.batches;
  for (double* v : {&log.loss, &log.ade, &log.reg, &log.cls, &log.mse, &log.ce, &log.grad_norm}) *v /= n;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++epoch_;
  return log;
}

std::vector<EpochLog> Trainer::fit(const std::vector<Scene>& corpus, std::ostream* log) {
  std::vector<EpochLog> out;
  if (log != nullptr) write_loss_csv(*log, {});
  while (epoch_ < config_.epochs) {
    out.push_back(run_epoch(corpus));
    if (log != nullptr) {
      const auto& e = out.back();
      log->precision(10);
      *log << e.epoch << ',' << e.lr << ',' << e.loss << ',' << e.ade << ',' << e.reg << ',' << e.cls << ',' << e.mse
           << ',' << e.ce << ',' << e.grad_norm << ',' << e.batches << ',' << e.seconds << std::endl;
    }
  }
  return out;
}

Checkpoint Trainer::checkpoint() const { return capture(*store_, config_, {config_.seed, epoch_}); }

LoadedModel load_model(const Checkpoint& ckpt) {
  LoadedModel m;
  m.store = std::make_unique<ParamStore<double>>(ckpt.config.seed);
  m.model = std::make_unique<WmMoeModel<double>>(*m.store, ckpt.config);
  restore(ckpt, *m.store);
  return m;
}

template <typename T>
EvalResult evaluate(const WmMoeModel<T>& model, const std::vector<Scene>& scenes, const EvalOptions& opts) {
  const auto& cfg = model.config();
  if (opts.gs.empty()) throw nd::ConfigError("evaluate: empty g list");
  for (int g : opts.gs) {
    if (g < 1 || g > cfg.modes) {
      throw nd::ConfigError("evaluate: g=" + std::to_string(g) + " outside [1, " + std::to_string(cfg.modes) + "]");
    }
  }
  if (scenes.empty()) throw nd::ContractError("evaluate: empty corpus");
  const auto S = static_cast<Index>(scenes.size());
  const Index K = cfg.modes, F = cfg.future_steps;
  std::vector<double> mu(static_cast<std::size_t>(S * K * F * 2)), pi(static_cast<std::size_t>(S * K)),
      gt(static_cast<std::size_t>(S * F * 2));
  for_each_batch(scenes, cfg, [&](const perception::SceneBatch& batch, std::size_t start) {
    Tape<T> tape({false, false, cfg.seed, 0});
    const auto f = model(tape, batch);
    const auto s0 = static_cast<Index>(start);
    const auto& m = f.mu.value();
    const auto& p = f.pi.value();
    for (Index i = 0; i < m.size(); ++i) mu[static_cast<std::size_t>(s0 * K * F * 2 + i)] = m[i];
    for (Index i = 0; i < p.size(); ++i) pi[static_cast<std::size_t>(s0 * K + i)] = p[i];
    for (Index i = 0; i < batch.future.size(); ++i) gt[static_cast<std::size_t>(s0 * F * 2 + i)] = batch.future[i];
  });
  EvalResult r;
  r.inputs = {Array<double>({S, K, F, 2}, std::move(mu)), Array<double>({S, K}, std::move(pi)),
              Array<double>({S, F, 2}, std::move(gt))};
  r.overall = objectives::evaluate_metrics(r.inputs, opts.gs, opts.horizons, opts.theta, opts.rmse_g);
  for (const auto& s : scenes) r.classes.push_back(class_of(s, cfg.curation));
  for (auto c : corpus::kAllClasses) {
    std::vector<Index> rows;
    for (Index i = 0; i < S; ++i)
      if (r.classes[static_cast<std::size_t>(i)] == c) rows.push_back(i);
    if (rows.empty()) continue;
    const auto n = static_cast<Index>(rows.size());
    std::vector<double> cm, cp, cg;
    for (Index i : rows) {
      cm.insert(cm.end(), r.inputs.mu.ptr() + i * K * F * 2, r.inputs.mu.ptr() + (i + 1) * K * F * 2);
      cp.insert(cp.end(), r.inputs.pi.ptr() + i * K, r.inputs.pi.ptr() + (i + 1) * K);
      cg.insert(cg.end(), r.inputs.gt.ptr() + i * F * 2, r.inputs.gt.ptr() + (i + 1) * F * 2);
    }
    const objectives::MetricInputs sub{Array<double>({n, K, F, 2}, std::move(cm)), Array<double>({n, K}, std::move(cp)),
                                       Array<double>({n, F, 2}, std::move(cg))};
    r.per_class[c] = objectives::evaluate_metrics(sub, opts.gs, opts.horizons, opts.theta, opts.rmse_g);
  }
  return r;
}

void write_eval_csv(std::ostream& out, const EvalResult& r) {
  out << "metric,g,value,n_samples\n";
  objectives::write_metric_rows(out, r.overall);
}

void write_class_csv(std::ostream& out, const EvalResult& r) {
  out << "scenario,metric,g,value,n_samples\n";
  for (const auto& [c, rep] : r.per_class) objectives::write_metric_rows(out, rep, corpus::to_string(c) + ",");
}

template <typename T>
decision::GateTelemetry route_stats(const WmMoeModel<T>& model, const std::vector<Scene>& scenes) {
  const auto& cfg = model.config();
  decision::GateTelemetry tel;
  for_each_batch(scenes, cfg, [&](const perception::SceneBatch& batch, std::size_t start) {
    Tape<T> tape({false, false, cfg.seed, 0});
    ModelTrace<T> trace;
    model(tape, batch, &trace);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < batch.ids.size(); ++i) labels.push_back(corpus::to_string(class_of(scenes[start + i], cfg.curation)));
    for (std::size_t b = 0; b < trace.decision.gates.size(); ++b) {
      tel.record(static_cast<Index>(b), trace.decision.gates[b].value().template cast<double>(), labels, batch.ids);
    }
  });
  return tel;
}

namespace {

double dispersion(const std::vector<std::vector<double>>& x, const std::vector<int>& label, int classes) {
  const std::size_t d = x.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& v : x)
    for (std::size_t j = 0; j < d; ++j) mean[j] += v[j] / static_cast<double>(x.size());
  std::vector<std::vector<double>> sums(static_cast<std::size_t>(classes), std::vector<double>(d, 0.0));
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto& s = sums[static_cast<std::size_t>(label[i])];
    for (std::size_t j = 0; j < d; ++j) s[j] += x[i][j];
    counts[static_cast<std::size_t>(label[i])] += 1.0;
  }
  double total = 0.0;
  for (std::size_t c = 0; c < sums.size(); ++c) {
    if (counts[c] == 0.0) continue;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = sums[c][j] / counts[c] - mean[j];
      sq += diff * diff;
    }
    total += counts[c] * sq;
  }
  return total;
}

}  // namespace

DivergenceResult gate_divergence(const decision::GateTelemetry& telemetry, int permutations, std::uint64_t seed) {
  const auto& vecs = telemetry.scene_vectors();
  if (vecs.empty()) throw nd::ContractError("gate divergence: telemetry has no per-scene vectors");
  if (permutations < 1) throw nd::ConfigError("gate divergence: permutations must be positive");
  std::vector<std::vector<double>> x;
  std::vector<int> label;
  std::map<std::string, int> ids;
  for (const auto& [scene, v] : vecs) {
    x.push_back(v);
    const auto& name = telemetry.scene_labels().at(scene);
    label.push_back(ids.emplace(name, static_cast<int>(ids.size())).first->second);
  }
  const int classes = static_cast<int>(ids.size());
  DivergenceResult r;
  r.permutations = permutations;
  r.statistic = dispersion(x, label, classes);
  nd::RngStream rng(seed, nd::fnv1a64("gate-divergence"));
  std::vector<double> null(static_cast<std::size_t>(permutations));
  int above = 0;
  auto perm = label;
  for (auto& s : null) {
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    s = dispersion(x, perm, classes);
    if (s >= r.statistic) ++above;
  }
  std::sort(null.begin(), null.end());
  r.null_p95 = null[static_cast<std::size_t>(std::ceil(0.95 * permutations)) - 1];
  r.p_value = (1.0 + above) / (1.0 + permutations);
  return r;
}

template EvalResult evaluate(const WmMoeModel<float>&, const std::vector<Scene>&, const EvalOptions&);
template EvalResult evaluate(const WmMoeModel<double>&, const std::vector<Scene>&, const EvalOptions&);
template decision::GateTelemetry route_stats(const WmMoeModel<float>&, const std::vector<Scene>&);
template decision::GateTelemetry route_stats(const WmMoeModel<double>&, const std::vector<Scene>&);

}  // namespace wmmoe::runtime
