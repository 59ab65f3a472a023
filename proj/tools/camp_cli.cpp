// camp: train, prune, evaluate and compare curvature-aware pruning runs.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camp/checkpoint.hpp"
#include "camp/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed", c.seed, "override the config seed");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os || !(os << text) || !os.flush()) throw camp::IoError("cannot write '" + path + "'");
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

template <typename T>
camp::Dataset<T> dataset_for(const camp::ExperimentConfig& cfg, camp::Network<T>* model = nullptr) {
  using camp::derive_seed;
  camp::Dataset<T> data =
      camp::load_dataset<T>(cfg.dataset, cfg.data_seed ? *cfg.data_seed : derive_seed(cfg.seed, camp::SeedStream::data));
  camp::Network<T> net = camp::build_model(cfg.model, data);
  if (model) *model = std::move(net);
  return data;
}

template <typename T>
camp::Network<T> load_model(const std::string& path, const camp::Network<T>& expected) {
  camp::Network<T> net = camp::load_checkpoint<T>(path);
  if (!net.same_architecture(expected)) {
    throw camp::ConfigError("checkpoint '" + path + "' does not match the configured model");
  }
  return net;
}

template <typename T>
int cmd_train(const camp::ExperimentConfig& cfg, const std::string& out) {
  nlohmann::json report = {{"config", camp::to_json(cfg)}};
  const camp::Baseline<T> b = camp::prepare_baseline<T>(cfg, report);
  camp::save_checkpoint(out, b.net);
  std::cout << dump({{"checkpoint", out}, {"accuracy", camp::to_json(b.accuracy)}, {"train_loss", b.train_loss}});
  return 0;
}

template <typename T>
int cmd_eval(const camp::ExperimentConfig& cfg, const std::string& model_path) {
  camp::Network<T> shape;
  const camp::Dataset<T> data = dataset_for<T>(cfg, &shape);
  const camp::Network<T> net = load_model(model_path, shape);
  const camp::FlopsLedger l = camp::ledger(net);
  std::size_t zeros = 0;
  for (T w : net.flatten_weights()) zeros += w == T{0};
  std::cout << dump({{"checkpoint", model_path},
                     {"accuracy", camp::to_json(camp::evaluate(net, data.test))},
                     {"zero_weights", zeros},
                     {"weight_count", net.weight_count()},
                     {"dense_flops", l.dense_total}});
  return 0;
}

template <typename T>
int cmd_prune(camp::ExperimentConfig cfg, const std::string& model_path, const std::string& out,
              const std::string& report_path) {
  camp::Network<T> shape;
  const camp::Dataset<T> data = dataset_for<T>(cfg, &shape);
  const camp::Network<T> net = load_model(model_path, shape);
  const std::uint64_t seed = cfg.seed;
  camp::PruneResult<T> r = [&] {
    if (!camp::uses_curvature(cfg.prune.strategy)) {
      return camp::prune_with_scores(net, cfg.prune.strategy, cfg.prune.p, camp::magnitude_scores(net),
                                     camp::derive_seed(seed, camp::SeedStream::prune));
    }
    const camp::Batch<T> calib = camp::calibration_batch(data.train, cfg.prune.curvature.calibration_samples,
                                                         camp::derive_seed(seed, camp::SeedStream::calibration));
    const camp::CurvatureProbe probe =
        camp::power_iteration(net, calib, cfg.prune.curvature, camp::derive_seed(seed, camp::SeedStream::curvature));
    return camp::prune(net, cfg.prune.strategy, cfg.prune.p, probe, camp::derive_seed(seed, camp::SeedStream::prune));
  }();
  camp::save_checkpoint(out, r.net);
  const nlohmann::json j = {
      {"checkpoint", out},
      {"prune", camp::to_json(r.report)},
      {"flops", camp::to_json(camp::ledger(r.net, std::span<const std::uint8_t>(r.mask.values)))},
      {"accuracy", camp::to_json(camp::evaluate(r.net, data.test))}};
  write_text(report_path, dump(j));
  return 0;
}

template <typename T>
int cmd_stats(const camp::ExperimentConfig& cfg, const std::string& base_path, const std::string& pruned_path,
              const std::string& out) {
  camp::Network<T> shape;
  const camp::Dataset<T> data = dataset_for<T>(cfg, &shape);
  const camp::Network<T> base = load_model(base_path, shape);
  const camp::Network<T> pruned = load_model(pruned_path, shape);
  const camp::Batch<T> probe =
      camp::calibration_batch(data.test, cfg.probe.samples, camp::derive_seed(cfg.seed, camp::SeedStream::probe));
  std::ostringstream os;
  camp::write_probe_csv(os, camp::probe_stats(base, pruned, probe));
  write_text(out, os.str());
  return 0;
}

template <typename T>
int cmd_pipeline(const camp::ExperimentConfig& cfg, std::string report_path, std::string probe_csv) {
  if (report_path.empty()) report_path = cfg.report_path;
  if (probe_csv.empty()) probe_csv = cfg.probe_csv;
  try {
    const camp::RunResult<T> r = camp::run_pipeline<T>(cfg);
    write_text(report_path, dump(r.report));
    if (!probe_csv.empty()) {
      std::ostringstream os;
      camp::write_probe_csv(os, r.probe_stats);
      write_text(probe_csv, os.str());
    }
    if (!report_path.empty() && report_path != "-") {
      std::cerr << "baseline " << r.baseline_acc << "%  pruned " << r.pruned_acc << "%  fine-tuned "
                << r.finetuned_acc << "%  FLOPs reduction " << r.reduction_pct << "%\n";
    }
    return 0;
  } catch (const camp::StageError& e) {
    if (!report_path.empty() && report_path != "-") write_text(report_path, dump(e.partial_report()));
    throw;
  }
}

template <typename T>
int cmd_compare(const camp::ExperimentConfig& cfg, const std::vector<std::string>& strategy_names,
                const std::vector<double>& p_grid, std::vector<std::uint64_t> seeds, const std::string& out,
                bool verbose) {
  std::vector<camp::Strategy> strategies;
  for (const auto& s : strategy_names) strategies.push_back(camp::parse_strategy(s));
  if (seeds.empty()) seeds.push_back(cfg.seed);
  const auto rows = camp::compare_strategies<T>(cfg, strategies, p_grid, seeds, verbose ? &std::cerr : nullptr);
  std::ostringstream os;
  camp::write_compare_csv(os, rows);
  write_text(out, os.str());
  return 0;
}

template <typename F>
int dispatch(const camp::ExperimentConfig& cfg, F&& f) {
  if (cfg.dtype == "float32") return f(float{});
  return f(double{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curvature-aware pruning: train, prune, evaluate and compare networks"};
  app.set_version_flag("--version", std::string(camp::kVersion));
  app.require_subcommand(1);

  Common common;
  std::string out, model, report, probe_csv, base, pruned, strategy;
  std::optional<double> p;
  std::vector<std::string> strategies = {"camp-hive", "hrp", "hmp", "magnitude"};
  std::vector<double> p_grid = {30, 50, 70};
  std::vector<std::uint64_t> seeds;
  bool verbose = false;

  auto* train = app.add_subcommand("train", "train the baseline and save a checkpoint");
  add_common(train, common);
  train->add_option("-o,--out", out, "checkpoint to write")->required();

  auto* prune = app.add_subcommand("prune", "prune a checkpoint with the configured strategy");
  add_common(prune, common);
  prune->add_option("-m,--model", model, "input checkpoint")->required();
  prune->add_option("-o,--out", out, "pruned checkpoint to write")->required();
  prune->add_option("--strategy", strategy, "camp-hive, hrp, hmp or magnitude");
  prune->add_option("--p", p, "percentage of weights to prune per layer");
  prune->add_option("--report", report, "prune report (JSON, default stdout)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, common);
  eval->add_option("-m,--model", model, "checkpoint")->required();

  auto* pipeline = app.add_subcommand("pipeline", "train, prune, fine-tune, evaluate and write a report");
  add_common(pipeline, common);
  pipeline->add_option("--report", report, "report path (default: config report.path, else stdout)");
  pipeline->add_option("--probe-csv", probe_csv, "per-layer activation statistics CSV");
  pipeline->add_option("--strategy", strategy, "override prune.strategy");
  pipeline->add_option("--p", p, "override prune.p");

  auto* compare = app.add_subcommand("compare", "accuracy-vs-p table over strategies and seeds");
  add_common(compare, common);
  compare->add_option("--strategies", strategies, "strategies to compare")->delimiter(',');
  compare->add_option("--p", p_grid, "pruning percentages")->delimiter(',');
  compare->add_option("--seeds", seeds, "seeds (default: the config seed)")->delimiter(',');
  compare->add_option("-o,--out", out, "CSV output (default stdout)");
  compare->add_flag("-v,--verbose", verbose, "print each run to stderr");

  auto* stats = app.add_subcommand("stats", "activation statistics and MAD between two checkpoints");
  add_common(stats, common);
  stats->add_option("--base", base, "reference checkpoint")->required();
  stats->add_option("--pruned", pruned, "pruned checkpoint")->required();
  stats->add_option("-o,--out", out, "CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    camp::ExperimentConfig cfg = camp::load_config(common.config, common.seed);
    if (!strategy.empty()) {
      try {
        cfg.prune.strategy = camp::parse_strategy(strategy);
      } catch (const camp::Error& e) {
        throw camp::ConfigError(e.what());
      }
    }
    if (p) {
      if (!(*p >= 0.0 && *p <= 100.0)) throw camp::ConfigError("--p must lie in [0, 100]");
      cfg.prune.p = *p;
    }
    return dispatch(cfg, [&](auto tag) {
      using T = decltype(tag);
      if (*train) return cmd_train<T>(cfg, out);
      if (*prune) return cmd_prune<T>(cfg, model, out, report);
      if (*eval) return cmd_eval<T>(cfg, model);
      if (*pipeline) return cmd_pipeline<T>(cfg, report, probe_csv);
      if (*compare) return cmd_compare<T>(cfg, strategies, p_grid, seeds, out, verbose);
      return cmd_stats<T>(cfg, base, pruned, out);
    });
  } catch (const std::exception& e) {
    std::cerr << "camp: error: " << e.what() << "\n";
    return camp::exit_code_for(e);
  }
}
