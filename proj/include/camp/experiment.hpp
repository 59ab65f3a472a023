#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "camp/backprop.hpp"
#include "camp/batch.hpp"
#include "camp/curvature.hpp"
#include "camp/dataset.hpp"
#include "camp/error.hpp"
#include "camp/flops.hpp"
#include "camp/network.hpp"
#include "camp/probe.hpp"
#include "camp/prune.hpp"
#include "camp/sgd.hpp"

namespace camp {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

struct ModelSpec {
  std::string kind = "mlp";  // mlp | tinyconv
  std::vector<std::size_t> hidden = {32};
  std::optional<Shape> input_shape;  // tinyconv (c, h, w); defaults to the dataset's sample shape
};

struct PruneSpec {
  Strategy strategy = Strategy::camp_hive;
  double p = 50.0;
  CurvatureConfig curvature;
  std::optional<double> max_flops_pct;  // budget as a percentage of dense FLOPs
};

struct ProbeSpec {
  std::size_t samples = 256;
  std::size_t latency_repeats = 5;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;  // dataset.seed; derived from `seed` when absent
  std::string dtype = "float64";
  DatasetSpec dataset;
  ModelSpec model;
  TrainSpec train;
  TrainSpec finetune{10, 0.001, 32};
  PruneSpec prune;
  ProbeSpec probe;
  std::string report_path;
  std::string probe_csv;
};

namespace detail {

inline std::string join_key(std::string_view where, std::string_view key) {
  return where.empty() ? std::string(key) : std::string(where) + "." + std::string(key);
}

inline const nlohmann::json* object_at(const nlohmann::json& j, std::string_view key, std::string_view where,
                                       std::initializer_list<std::string_view> allowed) {
  const auto it = j.find(std::string(key));
  if (it == j.end() || it->is_null()) return nullptr;
  const std::string path = join_key(where, key);
  if (!it->is_object()) throw ConfigError("'" + path + "' must be an object");
  for (const auto& item : it->items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError("unknown config key '" + join_key(path, item.key()) + "'");
    }
  }
  return &*it;
}

// Non-negative integer, whether stored signed or unsigned.
inline bool is_count(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

inline const nlohmann::json* field(const nlohmann::json* j, std::string_view key) {
  if (!j) return nullptr;
  const auto it = j->find(std::string(key));
  return it == j->end() || it->is_null() ? nullptr : &*it;
}

inline void read_count(const nlohmann::json* j, std::string_view key, std::string_view where, std::size_t& out) {
  if (const auto* v = field(j, key)) {
    if (!is_count(*v)) throw ConfigError("'" + join_key(where, key) + "' must be a non-negative integer");
    out = v->get<std::size_t>();
  }
}

inline void read_real(const nlohmann::json* j, std::string_view key, std::string_view where, double& out) {
  if (const auto* v = field(j, key)) {
    if (!v->is_number()) throw ConfigError("'" + join_key(where, key) + "' must be a number");
    out = v->get<double>();
  }
}

inline void read_string(const nlohmann::json* j, std::string_view key, std::string_view where, std::string& out) {
  if (const auto* v = field(j, key)) {
    if (!v->is_string()) throw ConfigError("'" + join_key(where, key) + "' must be a string");
    out = v->get<std::string>();
  }
}

inline void read_counts(const nlohmann::json* j, std::string_view key, std::string_view where,
                        std::vector<std::size_t>& out) {
  if (const auto* v = field(j, key)) {
    if (!v->is_array()) throw ConfigError("'" + join_key(where, key) + "' must be an array of integers");
    out.clear();
    for (const auto& x : *v) {
      if (!is_count(x) || x.get<std::size_t>() == 0) {
        throw ConfigError("'" + join_key(where, key) + "' entries must be positive integers");
      }
      out.push_back(x.get<std::size_t>());
    }
  }
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

inline void read_train(const nlohmann::json* j, std::string_view where, TrainSpec& t) {
  read_count(j, "epochs", where, t.epochs);
  read_real(j, "lr", where, t.lr);
  read_count(j, "batch_size", where, t.batch_size);
  require(t.lr > 0.0 && std::isfinite(t.lr), std::string(where) + ".lr must be positive");
  require(t.batch_size > 0, std::string(where) + ".batch_size must be positive");
}

inline nlohmann::json train_to_json(const TrainSpec& t) {
  return {{"epochs", t.epochs}, {"lr", t.lr}, {"batch_size", t.batch_size}};
}

}  // namespace detail

// Parse and validate a config. Unknown keys are rejected. A seed must come
// from the file or from `seed_override`.
inline ExperimentConfig config_from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = {}) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json root = {{"", j}};
  const auto* top = object_at(root, "", "",
                              {"schema_version", "seed", "dtype", "dataset", "model", "train", "prune", "finetune",
                               "probe", "report"});
  ExperimentConfig c;

  if (const auto* v = field(top, "schema_version")) {
    require(v->is_number_integer() && v->get<int>() == kConfigSchemaVersion,
            "unsupported schema_version (expected " + std::to_string(kConfigSchemaVersion) + ")");
  }
  if (seed_override) {
    c.seed = *seed_override;
  } else if (const auto* v = field(top, "seed")) {
    require(is_count(*v), "'seed' must be a non-negative integer");
    c.seed = v->get<std::uint64_t>();
  } else {
    throw ConfigError("config has no seed: set \"seed\" or pass --seed");
  }
  read_string(top, "dtype", "", c.dtype);
  require(c.dtype == "float64" || c.dtype == "float32", "dtype must be float64 or float32");

  const auto* ds = object_at(j, "dataset", "",
                             {"kind", "classes", "samples", "features", "spread", "center_box", "noise", "images",
                              "labels", "path", "test_fraction", "seed"});
  require(ds != nullptr, "config needs a 'dataset' section");
  std::string kind;
  read_string(ds, "kind", "dataset", kind);
  require(!kind.empty(), "dataset.kind is required");
  DatasetSpec& d = c.dataset;
  d.kind = parse_dataset_kind(kind);
  read_count(ds, "classes", "dataset", d.classes);
  read_count(ds, "samples", "dataset", d.samples);
  read_count(ds, "features", "dataset", d.features);
  read_real(ds, "spread", "dataset", d.spread);
  read_real(ds, "center_box", "dataset", d.center_box);
  read_real(ds, "noise", "dataset", d.noise);
  read_string(ds, "images", "dataset", d.images);
  read_string(ds, "labels", "dataset", d.labels);
  read_string(ds, "path", "dataset", d.path);
  read_real(ds, "test_fraction", "dataset", d.test_fraction);
  if (const auto* v = field(ds, "seed")) {
    require(is_count(*v), "'dataset.seed' must be a non-negative integer");
    c.data_seed = v->get<std::uint64_t>();
  }
  require(d.test_fraction > 0.0 && d.test_fraction < 1.0, "dataset.test_fraction must lie in (0, 1)");
  if (d.kind == DatasetKind::synthetic_blobs) {
    require(d.classes >= 2, "dataset.classes must be >= 2");
    require(d.features >= 1, "dataset.features must be >= 1");
    require(d.spread > 0.0, "dataset.spread must be positive");
  }
  if (d.kind == DatasetKind::synthetic_blobs || d.kind == DatasetKind::synthetic_moons) {
    require(d.samples >= 4, "dataset.samples must be >= 4");
  }
  if (d.kind == DatasetKind::idx) require(!d.images.empty() && !d.labels.empty(), "idx datasets need images and labels");
  if (d.kind == DatasetKind::csv) require(!d.path.empty(), "csv datasets need a path");

  if (const auto* m = object_at(j, "model", "", {"kind", "hidden", "input_shape"})) {
    read_string(m, "kind", "model", c.model.kind);
    read_counts(m, "hidden", "model", c.model.hidden);
    if (field(m, "input_shape")) {
      std::vector<std::size_t> shape;
      read_counts(m, "input_shape", "model", shape);
      c.model.input_shape = shape;
    }
  }
  require(c.model.kind == "mlp" || c.model.kind == "tinyconv", "model.kind must be mlp or tinyconv");

  read_train(object_at(j, "train", "", {"epochs", "lr", "batch_size"}), "train", c.train);
  read_train(object_at(j, "finetune", "", {"epochs", "lr", "batch_size"}), "finetune", c.finetune);

  if (const auto* p = object_at(j, "prune", "",
                                {"strategy", "p", "epsilon", "max_iterations", "tol", "calibration_samples",
                                 "max_flops_pct"})) {
    std::string strategy(to_string(c.prune.strategy));
    read_string(p, "strategy", "prune", strategy);
    try {
      c.prune.strategy = parse_strategy(strategy);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    read_real(p, "p", "prune", c.prune.p);
    if (const auto* e = field(p, "epsilon")) {
      if (e->is_string()) {
        require(e->get<std::string>() == "auto", "prune.epsilon must be a positive number or \"auto\"");
      } else {
        require(e->is_number() && e->get<double>() > 0.0, "prune.epsilon must be a positive number or \"auto\"");
        c.prune.curvature.epsilon = e->get<double>();
      }
    }
    read_count(p, "max_iterations", "prune", c.prune.curvature.max_iterations);
    read_real(p, "tol", "prune", c.prune.curvature.tol);
    read_count(p, "calibration_samples", "prune", c.prune.curvature.calibration_samples);
    if (field(p, "max_flops_pct")) {
      double pct = 0.0;
      read_real(p, "max_flops_pct", "prune", pct);
      require(pct > 0.0 && pct <= 100.0, "prune.max_flops_pct must lie in (0, 100]");
      c.prune.max_flops_pct = pct;
    }
  }
  require(c.prune.p >= 0.0 && c.prune.p <= 100.0, "prune.p must lie in [0, 100]");
  require(c.prune.curvature.max_iterations >= 1, "prune.max_iterations must be >= 1");
  require(c.prune.curvature.tol > 0.0, "prune.tol must be positive");
  require(c.prune.curvature.calibration_samples >= 1, "prune.calibration_samples must be >= 1");

  if (const auto* p = object_at(j, "probe", "", {"samples", "latency_repeats"})) {
    read_count(p, "samples", "probe", c.probe.samples);
    read_count(p, "latency_repeats", "probe", c.probe.latency_repeats);
  }
  require(c.probe.samples >= 1, "probe.samples must be >= 1");
  require(c.probe.latency_repeats >= 3, "probe.latency_repeats must be >= 3");

  if (const auto* r = object_at(j, "report", "", {"path", "probe_csv"})) {
    read_string(r, "path", "report", c.report_path);
    read_string(r, "probe_csv", "report", c.probe_csv);
  }
  return c;
}

// Canonical form with every default filled in; parsing it yields the same config.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  const DatasetSpec& d = c.dataset;
  nlohmann::json ds = {{"kind", std::string(to_string(d.kind))}, {"test_fraction", d.test_fraction}};
  switch (d.kind) {
    case DatasetKind::synthetic_blobs:
      ds.update({{"classes", d.classes},
                 {"samples", d.samples},
                 {"features", d.features},
                 {"spread", d.spread},
                 {"center_box", d.center_box}});
      break;
    case DatasetKind::synthetic_moons: ds.update({{"samples", d.samples}, {"noise", d.noise}}); break;
    case DatasetKind::idx: ds.update({{"images", d.images}, {"labels", d.labels}}); break;
    case DatasetKind::csv: ds["path"] = d.path; break;
  }
  if (c.data_seed) ds["seed"] = *c.data_seed;

  nlohmann::json model = {{"kind", c.model.kind}};
  if (c.model.kind == "mlp") model["hidden"] = c.model.hidden;
  if (c.model.input_shape) model["input_shape"] = *c.model.input_shape;

  nlohmann::json prune = {{"strategy", std::string(to_string(c.prune.strategy))},
                          {"p", c.prune.p},
                          {"max_iterations", c.prune.curvature.max_iterations},
                          {"tol", c.prune.curvature.tol},
                          {"calibration_samples", c.prune.curvature.calibration_samples}};
  if (c.prune.curvature.epsilon) {
    prune["epsilon"] = *c.prune.curvature.epsilon;
  } else {
    prune["epsilon"] = "auto";
  }
  if (c.prune.max_flops_pct) prune["max_flops_pct"] = *c.prune.max_flops_pct;

  nlohmann::json j = {{"schema_version", c.schema_version},
                      {"seed", c.seed},
                      {"dtype", c.dtype},
                      {"dataset", ds},
                      {"model", model},
                      {"train", detail::train_to_json(c.train)},
                      {"prune", prune},
                      {"finetune", detail::train_to_json(c.finetune)},
                      {"probe", {{"samples", c.probe.samples}, {"latency_repeats", c.probe.latency_repeats}}}};
  nlohmann::json report = nlohmann::json::object();
  if (!c.report_path.empty()) report["path"] = c.report_path;
  if (!c.probe_csv.empty()) report["probe_csv"] = c.probe_csv;
  if (!report.empty()) j["report"] = report;
  return j;
}

// Read a config file. Relative dataset and report paths are taken relative to
// the file's directory.
inline ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  ExperimentConfig c = config_from_json(j, seed_override);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.dataset.images);
  resolve(c.dataset.labels);
  resolve(c.dataset.path);
  return c;
}

// Independent sub-seeds for each stochastic stage, derived from the run seed.
enum class SeedStream : std::uint64_t { data = 1, init, train, curvature, prune, finetune, calibration, probe };

inline std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(stream);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Error raised by a pipeline stage. Carries the report built so far (marked
// incomplete) and the exit code of the underlying failure.
class StageError : public Error {
 public:
  StageError(std::string stage, int exit_code, const std::string& message, nlohmann::json partial)
      : Error("stage '" + stage + "' failed: " + message),
        stage_(std::move(stage)),
        exit_code_(exit_code),
        partial_(std::move(partial)) {}

  const std::string& stage() const noexcept { return stage_; }
  int exit_code() const noexcept { return exit_code_; }
  const nlohmann::json& partial_report() const noexcept { return partial_; }

 private:
  std::string stage_;
  int exit_code_;
  nlohmann::json partial_;
};

// 0 success, 1 usage/config, 2 numeric, 3 I/O.
inline int exit_code_for(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code();
  if (dynamic_cast<const NumericError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return 3;
  return 1;
}

struct LatencyStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::size_t repeats = 0;
};

// Wall-clock forward-pass time over `inputs`; one warm-up pass is discarded.
template <std::floating_point T>
LatencyStats time_inference(const Network<T>& net, const Tensor<T>& inputs, std::size_t repeats) {
  if (repeats < 3) throw UsageError("time_inference needs at least 3 repeats");
  using clock = std::chrono::steady_clock;
  volatile double sink = 0.0;
  sink = sink + forward_activations(net, inputs).logits()[0];
  std::vector<double> ms;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = clock::now();
    const ForwardPass<T> pass = forward_activations(net, inputs);
    const auto t1 = clock::now();
    sink = sink + pass.logits()[0];
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  LatencyStats out;
  out.repeats = repeats;
  for (double x : ms) out.mean_ms += x;
  out.mean_ms /= static_cast<double>(repeats);
  for (double x : ms) out.std_ms += (x - out.mean_ms) * (x - out.mean_ms);
  out.std_ms = std::sqrt(out.std_ms / static_cast<double>(repeats));
  return out;
}

inline nlohmann::json to_json(const LatencyStats& l) {
  return {{"mean_ms", l.mean_ms}, {"std_ms", l.std_ms}, {"repeats", l.repeats}};
}

// Dataset, trained baseline and the fixed calibration and probe subsets for
// one seed. Shared by every strategy and p evaluated on that seed.
template <std::floating_point T>
struct Baseline {
  std::uint64_t seed = 0;
  Dataset<T> data;
  Network<T> net;
  std::vector<double> train_loss;
  Accuracy accuracy;
  Batch<T> calibration;
  Batch<T> probe;
};

template <std::floating_point T>
struct RunResult {
  nlohmann::json report;
  double baseline_acc = 0.0;
  double pruned_acc = 0.0;     // right after pruning
  double finetuned_acc = 0.0;  // after masked fine-tuning
  double mean_mad = 0.0;
  double reduction_pct = 0.0;
  ProbeStats probe_stats;
  Network<T> pruned;
  Network<T> finetuned;
  PruneMask mask;
};

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Run `fn` as the named stage. Failures are recorded in `report` and rethrown
// as a StageError carrying the partial report.
template <class F>
decltype(auto) stage(const std::string& name, nlohmann::json& report, F&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    report["complete"] = false;
    report["failed_stage"] = name;
    report["error"] = e.what();
    throw StageError(name, exit_code_for(e), e.what(), report);
  }
}

template <std::floating_point T>
void reshape_samples(Batch<T>& b, const Shape& sample) {
  Shape full = {b.size()};
  full.insert(full.end(), sample.begin(), sample.end());
  b.inputs.reshape(std::move(full));
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

// Network for the configured model, with dataset inputs reshaped to fit it.
template <std::floating_point T>
Network<T> build_model(const ModelSpec& spec, Dataset<T>& data) {
  const Shape sample = data.train.sample_shape();
  if (spec.kind == "mlp") {
    const Shape flat = {shape_size(sample)};
    detail::reshape_samples(data.train, flat);
    detail::reshape_samples(data.test, flat);
    return make_mlp<T>(flat[0], spec.hidden, data.num_classes);
  }
  const Shape chw = spec.input_shape ? *spec.input_shape : sample;
  if (chw.size() != 3) {
    throw ConfigError("tinyconv needs a (c, h, w) input: set model.input_shape for dataset samples shaped " +
                      to_string(sample));
  }
  if (shape_size(chw) != shape_size(sample)) {
    throw ConfigError("model.input_shape " + to_string(chw) + " does not match dataset samples " + to_string(sample));
  }
  detail::reshape_samples(data.train, chw);
  detail::reshape_samples(data.test, chw);
  return make_tinyconv<T>(chw, data.num_classes);
}

template <std::floating_point T>
Baseline<T> prepare_baseline(const ExperimentConfig& cfg, nlohmann::json& report) {
  Baseline<T> b;
  b.seed = cfg.seed;
  const std::uint64_t data_seed = cfg.data_seed ? *cfg.data_seed : derive_seed(cfg.seed, SeedStream::data);
  detail::stage("load-data", report, [&] {
    b.data = load_dataset<T>(cfg.dataset, data_seed);
    b.net = build_model(cfg.model, b.data);
    b.net.initialize(derive_seed(cfg.seed, SeedStream::init));
    b.calibration = calibration_batch(b.data.train, cfg.prune.curvature.calibration_samples,
                                      derive_seed(cfg.seed, SeedStream::calibration));
    b.probe = calibration_batch(b.data.test, cfg.probe.samples, derive_seed(cfg.seed, SeedStream::probe));
  });
  report["dataset"] = {{"train_samples", b.data.train.size()},
                       {"test_samples", b.data.test.size()},
                       {"num_classes", b.data.num_classes},
                       {"sample_shape", b.data.train.sample_shape()},
                       {"probe_samples", b.probe.size()},
                       {"calibration_samples", b.calibration.size()}};
  report["model"] = {{"layers", nlohmann::json::array()},
                     {"parameter_count", b.net.parameter_count()},
                     {"weight_count", b.net.weight_count()}};
  for (std::size_t k = 0; k < b.net.num_layers(); ++k) {
    report["model"]["layers"].push_back({{"name", layer_name(b.net, k)},
                                         {"kind", std::string(to_string(b.net.layer(k).spec.kind))},
                                         {"output_shape", b.net.layer_output_shape(k)}});
  }
  detail::stage("train-baseline", report, [&] {
    b.train_loss = train(b.net, b.data.train, cfg.train, derive_seed(cfg.seed, SeedStream::train));
  });
  detail::stage("evaluate-baseline", report, [&] { b.accuracy = evaluate(b.net, b.data.test); });
  report["baseline"] = {{"accuracy", to_json(b.accuracy)}, {"train_loss", b.train_loss}};
  return b;
}

template <std::floating_point T>
CurvatureProbe estimate_curvature(const ExperimentConfig& cfg, const Baseline<T>& b, nlohmann::json& report) {
  return detail::stage("curvature", report, [&] {
    return power_iteration(b.net, b.calibration, cfg.prune.curvature, derive_seed(cfg.seed, SeedStream::curvature));
  });
}

// Prune the baseline with `strategy` at `p`, fine-tune under the mask and
// measure everything. `curvature` is required for curvature-based strategies.
template <std::floating_point T>
RunResult<T> run_from_baseline(const ExperimentConfig& cfg, const Baseline<T>& b, Strategy strategy, double p,
                               const std::optional<CurvatureProbe>& curvature, nlohmann::json report,
                               bool measure_latency = true) {
  RunResult<T> out;
  out.baseline_acc = b.accuracy.top1;
  const std::uint64_t prune_seed = derive_seed(cfg.seed, SeedStream::prune);

  if (uses_curvature(strategy)) {
    if (!curvature) throw UsageError("strategy " + std::string(to_string(strategy)) + " needs a curvature probe");
    report["curvature"] = probe_to_json(*curvature, b.net);
  } else {
    report["curvature"] = nullptr;
  }

  PruneResult<T> pruned = detail::stage("prune", report, [&] {
    if (uses_curvature(strategy)) return prune(b.net, strategy, p, *curvature, prune_seed);
    return prune_with_scores(b.net, strategy, p, magnitude_scores(b.net), prune_seed);
  });
  report["prune"] = to_json(pruned.report);

  const Accuracy pruned_acc = detail::stage("evaluate-pruned", report, [&] { return evaluate(pruned.net, b.data.test); });
  report["pruned"] = {{"accuracy", to_json(pruned_acc)}};

  Network<T> tuned = pruned.net;
  std::vector<double> tune_loss;
  bool mask_intact = true;
  detail::stage("fine-tune", report, [&] {
    const std::vector<std::uint8_t> param_mask = expand_weight_mask(tuned, pruned.mask.values);
    tune_loss = train(tuned, b.data.train, cfg.finetune, derive_seed(cfg.seed, SeedStream::finetune),
                      std::span<const std::uint8_t>(param_mask));
    const std::vector<T> w = tuned.flatten_weights();
    for (std::size_t i = 0; i < w.size(); ++i) mask_intact = mask_intact && (pruned.mask.values[i] || w[i] == T{0});
  });
  const Accuracy tuned_acc = detail::stage("evaluate-finetuned", report, [&] { return evaluate(tuned, b.data.test); });
  report["finetuned"] = {{"accuracy", to_json(tuned_acc)}, {"train_loss", tune_loss}, {"mask_intact", mask_intact}};

  const AccuracyReport pre = compare_accuracy(b.accuracy, pruned_acc);
  const AccuracyReport post = compare_accuracy(b.accuracy, tuned_acc);
  report["delta_acc"] = {{"pruned", pre.delta_acc}, {"finetuned", post.delta_acc}};
  if (post.delta_top5) {
    report["delta_acc"]["pruned_top5"] = *pre.delta_top5;
    report["delta_acc"]["finetuned_top5"] = *post.delta_top5;
  }

  detail::stage("flops", report, [&] {
    const FlopsLedger dense = ledger(b.net);
    const FlopsLedger sparse = ledger(pruned.net, std::span<const std::uint8_t>(pruned.mask.values));
    nlohmann::json f = {{"baseline", to_json(dense)}, {"pruned", to_json(sparse)}, {"budget", nullptr}};
    if (cfg.prune.max_flops_pct) {
      const double budget = static_cast<double>(dense.dense_total) * *cfg.prune.max_flops_pct / 100.0;
      f["budget"] = {{"max_flops_pct", *cfg.prune.max_flops_pct},
                     {"budget_flops", budget},
                     {"within_budget", within_budget(sparse, budget)}};
    }
    report["flops"] = f;
    out.reduction_pct = sparse.reduction_pct;
  });

  detail::stage("probe-stats", report, [&] {
    out.probe_stats = probe_stats(b.net, pruned.net, b.probe);
    report["probe_stats"] = to_json(out.probe_stats);
    std::vector<double> m;
    for (const auto& s : out.probe_stats) m.push_back(s.mad);
    out.mean_mad = detail::mean_of(m);
  });

  if (measure_latency) {
    detail::stage("latency", report, [&] {
      report["latency"] = {
          {"baseline", to_json(time_inference(b.net, b.probe.inputs, cfg.probe.latency_repeats))},
          {"finetuned", to_json(time_inference(tuned, b.probe.inputs, cfg.probe.latency_repeats))},
          {"note", "host wall-clock inference time over the probe set; stands in for on-device power telemetry"}};
    });
  }

  out.pruned_acc = pruned_acc.top1;
  out.finetuned_acc = tuned_acc.top1;
  out.pruned = std::move(pruned.net);
  out.finetuned = std::move(tuned);
  out.mask = std::move(pruned.mask);
  out.report = std::move(report);
  return out;
}

// End to end: train, evaluate, prune, evaluate, masked fine-tune, evaluate,
// FLOPs ledger, probe statistics and latency. Failures throw StageError with
// the partial report.
template <std::floating_point T = double>
RunResult<T> run_pipeline(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  nlohmann::json report = {{"schema_version", kReportSchemaVersion},
                           {"version", std::string(kVersion)},
                           {"complete", false},
                           {"config", to_json(cfg)},
                           {"timing", {{"started_at", detail::utc_timestamp()}}}};
  const Baseline<T> b = prepare_baseline<T>(cfg, report);
  std::optional<CurvatureProbe> curvature;
  if (uses_curvature(cfg.prune.strategy)) curvature = estimate_curvature(cfg, b, report);
  RunResult<T> out = run_from_baseline(cfg, b, cfg.prune.strategy, cfg.prune.p, curvature, std::move(report));
  out.report["complete"] = true;
  out.report["timing"]["wall_ms"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Report with the fields that legitimately differ between identical runs removed.
inline nlohmann::json strip_timing(nlohmann::json report) {
  report.erase("timing");
  report.erase("latency");
  return report;
}

struct CompareRow {
  Strategy strategy = Strategy::camp_hive;
  double p = 0.0;
  std::size_t runs = 0;
  double mean_acc = 0.0;  // post fine-tune top-1
  double std_acc = 0.0;
  double mean_pruned_acc = 0.0;  // before fine-tune
  double std_pruned_acc = 0.0;
  double mean_delta_acc = 0.0;  // post fine-tune minus baseline
  double std_delta_acc = 0.0;
  double mean_mad = 0.0;
  double mean_reduction_pct = 0.0;
};

namespace detail {

// Population mean and standard deviation (a single value has std 0).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(v.size()))};
}

}  // namespace detail

// Accuracy-vs-p table over strategies and seeds. Each seed trains one baseline
// and estimates curvature once; every (strategy, p) cell reuses them. Rows
// follow the order of `strategies`, then `p_grid`.
template <std::floating_point T = double>
std::vector<CompareRow> compare_strategies(const ExperimentConfig& cfg, const std::vector<Strategy>& strategies,
                                           const std::vector<double>& p_grid, const std::vector<std::uint64_t>& seeds,
                                           std::ostream* progress = nullptr) {
  if (strategies.empty() || p_grid.empty() || seeds.empty()) {
    throw UsageError("compare needs at least one strategy, one p value and one seed");
  }
  for (double p : p_grid) {
    if (!(p >= 0.0 && p <= 100.0)) throw UsageError("p values must lie in [0, 100]");
  }
  const std::size_t cells = strategies.size() * p_grid.size();
  std::vector<std::vector<double>> acc(cells), pre(cells), delta(cells), mads(cells), red(cells);
  const bool need_curvature = std::any_of(strategies.begin(), strategies.end(), uses_curvature);

  for (std::uint64_t seed : seeds) {
    ExperimentConfig c = cfg;
    c.seed = seed;
    nlohmann::json scratch = nlohmann::json::object();
    const Baseline<T> b = prepare_baseline<T>(c, scratch);
    std::optional<CurvatureProbe> curvature;
    if (need_curvature) curvature = estimate_curvature(c, b, scratch);
    for (std::size_t si = 0; si < strategies.size(); ++si) {
      for (std::size_t pi = 0; pi < p_grid.size(); ++pi) {
        const RunResult<T> r = run_from_baseline(c, b, strategies[si], p_grid[pi], curvature, scratch, false);
        const std::size_t cell = si * p_grid.size() + pi;
        acc[cell].push_back(r.finetuned_acc);
        pre[cell].push_back(r.pruned_acc);
        delta[cell].push_back(r.finetuned_acc - r.baseline_acc);
        mads[cell].push_back(r.mean_mad);
        red[cell].push_back(r.reduction_pct);
        if (progress) {
          *progress << "seed " << seed << " " << to_string(strategies[si]) << " p=" << p_grid[pi]
                    << " acc=" << r.finetuned_acc << "\n";
        }
      }
    }
  }

  std::vector<CompareRow> rows;
  for (std::size_t si = 0; si < strategies.size(); ++si) {
    for (std::size_t pi = 0; pi < p_grid.size(); ++pi) {
      const std::size_t cell = si * p_grid.size() + pi;
      CompareRow row;
      row.strategy = strategies[si];
      row.p = p_grid[pi];
      row.runs = seeds.size();
      std::tie(row.mean_acc, row.std_acc) = detail::mean_std(acc[cell]);
      std::tie(row.mean_pruned_acc, row.std_pruned_acc) = detail::mean_std(pre[cell]);
      std::tie(row.mean_delta_acc, row.std_delta_acc) = detail::mean_std(delta[cell]);
      row.mean_mad = detail::mean_of(mads[cell]);
      row.mean_reduction_pct = detail::mean_of(red[cell]);
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_compare_csv(std::ostream& os, const std::vector<CompareRow>& rows) {
  os << "strategy,p,runs,mean_acc,std_acc,mean_pruned_acc,std_pruned_acc,mean_delta_acc,std_delta_acc,mean_mad,"
        "mean_reduction_pct\n";
  os.precision(10);
  for (const auto& r : rows) {
    os << to_string(r.strategy) << ',' << r.p << ',' << r.runs << ',' << r.mean_acc << ',' << r.std_acc << ','
       << r.mean_pruned_acc << ',' << r.std_pruned_acc << ',' << r.mean_delta_acc << ',' << r.std_delta_acc << ','
       << r.mean_mad << ',' << r.mean_reduction_pct << '\n';
  }
}

}  // namespace camp
