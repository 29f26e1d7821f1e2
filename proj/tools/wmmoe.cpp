#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "wmmoe/runtime/pipeline.hpp"
#include "wmmoe/scenes/io.hpp"

using namespace wmmoe;
using runtime::TrainConfig;

namespace {

struct Common {
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

TrainConfig resolve(const Common& c, TrainConfig base) {
  if (!c.config_path.empty()) base = runtime::load_config(c.config_path, base);
  auto cfg = runtime::apply_overrides(base, c.overrides);
  cfg.validate();
  return cfg;
}

std::vector<scenes::Scene> read(const std::string& path, const TrainConfig& cfg) {
  return scenes::parse_corpus(path, cfg.scene_config());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    out.push_back(std::stoi(item, &used));
    if (used != item.size()) throw std::invalid_argument("not an integer: " + item);
  }
  return out;
}

corpus::SplitSpec parse_counts(const std::string& text) {
  corpus::SplitSpec s;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("expected Class=count, got " + item);
    s.counts[corpus::parse_scenario(item.substr(0, eq))] = std::stoll(item.substr(eq + 1));
  }
  return s;
}

void print_counts(std::ostream& out, const std::vector<scenes::Scene>& scenes, const corpus::CurationConfig& c) {
  out << "scenario,count,high_risk\n";
  std::map<corpus::ScenarioClass, std::pair<std::int64_t, std::int64_t>> n;
  for (const auto& s : scenes) {
    auto& cell = n[s.label ? corpus::parse_scenario(*s.label) : corpus::classify_scenario(s, c)];
    ++cell.first;
    cell.second += corpus::high_risk(corpus::min_ttc(s), c);
  }
  for (auto cls : corpus::kAllClasses) {
    out << corpus::to_string(cls) << ',' << n[cls].first << ',' << n[cls].second << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene-conditioned mixture-of-experts trajectory forecaster"};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config_path, "JSON file with config fields")->check(CLI::ExistingFile);
  const auto defaults = runtime::to_json(TrainConfig::desk());
  for (const auto& field : runtime::config_fields()) {
    app.add_option_function<std::string>(
           "--" + field, [&common, field](const std::string& v) { common.overrides[field] = v; },
           "config field (default " + defaults[field].dump() + ")")
        ->group("Config fields");
  }

  auto* gen = app.add_subcommand("gen", "Generate a labeled synthetic corpus (JSONL)");
  std::int64_t gen_n = 1000;
  std::uint64_t data_seed = 7;
  std::string out_path, mix_text;
  double yaw_margin = 0.05;
  gen->add_option("-n,--count", gen_n, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--data-seed", data_seed, "generator seed");
  gen->add_option("--mix", mix_text, "relative class weights, e.g. Common=5,Turning=1 (default uniform)");
  gen->add_option("--yaw-margin", yaw_margin, "distance of generated yaw changes from the thresholds (rad)");
  gen->add_option("-o,--out", out_path, "output JSONL")->required();

  auto* curate = app.add_subcommand("curate", "Classify scenes and report per-class counts");
  std::string in_path, report_path;
  curate->add_option("-i,--in", in_path, "input JSONL")->required()->check(CLI::ExistingFile);
  curate->add_option("-o,--out", out_path, "labeled output JSONL (labels recomputed)");
  curate->add_option("--report", report_path, "CSV scenario,count,high_risk (default stdout)");

  auto* perturb = app.add_subcommand("perturb", "Drop history frames from every track");
  int drop = 1;
  perturb->add_option("-i,--in", in_path, "input JSONL")->required()->check(CLI::ExistingFile);
  perturb->add_option("-o,--out", out_path, "output JSONL")->required();
  perturb->add_option("-m,--drop", drop, "frames dropped per track");
  perturb->add_option("--data-seed", data_seed, "frame selection seed");

  auto* split = app.add_subcommand("split", "Seeded per-class subsample with exact counts");
  std::string preset, counts_text;
  double scale = 1.0;
  split->add_option("-i,--in", in_path, "labeled input JSONL")->required()->check(CLI::ExistingFile);
  split->add_option("-o,--out", out_path, "output JSONL")->required();
  auto* preset_opt = split->add_option("--preset", preset, "imbalance preset a-e");
  split->add_option("--scale", scale, "multiplier for preset counts");
  split->add_option("--counts", counts_text, "explicit counts, e.g. Common=100,Turning=10")->excludes(preset_opt);
  split->add_option("--data-seed", data_seed, "subsample seed");

  auto* train = app.add_subcommand("train", "Train and write a checkpoint");
  std::string ckpt_path, log_path, init_path;
  train->add_option("-i,--in", in_path, "training JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", ckpt_path, "checkpoint path")->required();
  train->add_option("--log", log_path, "per-epoch loss CSV (default stdout)");
  train->add_option("--init", init_path, "resume from this checkpoint")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string g_text = "1,5", horizons_text, class_path;
  eval->add_option("-c,--checkpoint", ckpt_path, "checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("-i,--in", in_path, "evaluation JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("-g,--g", g_text, "comma-separated mode counts for minADE/minFDE/MR");
  eval->add_option("--horizons", horizons_text, "comma-separated RMSE horizons in steps");
  eval->add_option("-o,--out", out_path, "CSV metric,g,value,n_samples (default stdout)");
  eval->add_option("--by-class", class_path, "CSV scenario,metric,g,value,n_samples");

  auto* route = app.add_subcommand("route-stats", "Per-block expert weights by scenario");
  int permutations = 999;
  route->add_option("-c,--checkpoint", ckpt_path, "checkpoint")->required()->check(CLI::ExistingFile);
  route->add_option("-i,--in", in_path, "JSONL")->required()->check(CLI::ExistingFile);
  route->add_option("-o,--out", out_path, "CSV block,expert,scenario,mean_weight,token_count (default stdout)");
  route->add_option("--permutations", permutations, "label shuffles for the divergence test (0 skips)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto cfg = resolve(common, TrainConfig::desk());
      corpus::GeneratorConfig g;
      g.scene = cfg.scene_config();
      g.curation = cfg.curation;
      g.yaw_margin = yaw_margin;
      if (!mix_text.empty()) {
        g.mix.clear();
        std::stringstream ss(mix_text);
        for (std::string item; std::getline(ss, item, ',');) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) throw std::invalid_argument("expected Class=weight, got " + item);
          g.mix[corpus::parse_scenario(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
        }
      }
      scenes::write_corpus(out_path, corpus::generate_synthetic(g, gen_n, data_seed));
    } else if (curate->parsed()) {
      const auto cfg = resolve(common, TrainConfig::desk());
      auto data = read(in_path, cfg);
      for (auto& s : data) s.label = corpus::to_string(corpus::classify_scenario(s, cfg.curation));
      if (!out_path.empty()) scenes::write_corpus(out_path, data);
      if (report_path.empty()) {
        print_counts(std::cout, data, cfg.curation);
      } else {
        auto out = open_out(report_path);
        print_counts(out, data, cfg.curation);
      }
    } else if (perturb->parsed()) {
      const auto cfg = resolve(common, TrainConfig::desk());
      auto data = read(in_path, cfg);
      for (auto& s : data) s = corpus::drop_frames(s, drop, data_seed, cfg.scene_config().bev);
      scenes::write_corpus(out_path, data);
    } else if (split->parsed()) {
      const auto cfg = resolve(common, TrainConfig::desk());
      if (preset.size() != 1 && counts_text.empty()) throw std::invalid_argument("split needs --preset or --counts");
      const auto spec = counts_text.empty() ? corpus::SplitSpec::preset(preset[0], scale) : parse_counts(counts_text);
      scenes::write_corpus(out_path, corpus::make_imbalance_splits(read(in_path, cfg), spec, data_seed));
    } else if (train->parsed()) {
      std::unique_ptr<runtime::Trainer> trainer;
      if (init_path.empty()) {
        trainer = std::make_unique<runtime::Trainer>(resolve(common, TrainConfig::desk()));
      } else {
        auto ckpt = runtime::load_checkpoint(init_path);
        ckpt.config = resolve(common, ckpt.config);
        trainer = std::make_unique<runtime::Trainer>(ckpt);
      }
      const auto data = read(in_path, trainer->config());
      if (log_path.empty()) {
        trainer->fit(data, &std::cout);
      } else {
        auto log = open_out(log_path);
        trainer->fit(data, &log);
      }
      runtime::save_checkpoint(ckpt_path, trainer->checkpoint());
    } else if (eval->parsed()) {
      auto ckpt = runtime::load_checkpoint(ckpt_path);
      ckpt.config = resolve(common, ckpt.config);
      const auto loaded = runtime::load_model(ckpt);
      runtime::EvalOptions opts;
      opts.gs = parse_ints(g_text);
      opts.horizons = parse_ints(horizons_text);
      const auto r = runtime::evaluate(*loaded.model, read(in_path, ckpt.config), opts);
      if (out_path.empty()) {
        runtime::write_eval_csv(std::cout, r);
      } else {
        auto out = open_out(out_path);
        runtime::write_eval_csv(out, r);
      }
      if (!class_path.empty()) {
        auto out = open_out(class_path);
        runtime::write_class_csv(out, r);
      }
    } else if (route->parsed()) {
      auto ckpt = runtime::load_checkpoint(ckpt_path);
      ckpt.config = resolve(common, ckpt.config);
      const auto loaded = runtime::load_model(ckpt);
      const auto tel = runtime::route_stats(*loaded.model, read(in_path, ckpt.config));
      if (out_path.empty()) {
        tel.write_csv(std::cout);
      } else {
        auto out = open_out(out_path);
        tel.write_csv(out);
      }
      std::cerr << "max |sum p - 1| = " << tel.max_simplex_error() << '\n';
      if (permutations > 0 && !tel.scene_vectors().empty()) {
        const auto d = runtime::gate_divergence(tel, permutations, ckpt.config.seed);
        std::cerr << "gate divergence " << d.statistic << ", permutation p95 " << d.null_p95 << ", p " << d.p_value
                  << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
