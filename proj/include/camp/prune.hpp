#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "camp/batch.hpp"
#include "camp/curvature.hpp"
#include "camp/error.hpp"
#include "camp/network.hpp"

namespace camp {

// Nearest-rank percentile: the r-th smallest value with
// r = max(1, ceil(p/100 * n)). p = 0 gives the minimum, p = 100 the maximum.
inline double percentile_threshold(std::span<const double> sigma, double p) {
  if (sigma.empty()) throw UsageError("percentile of an empty significance vector");
  if (!(p >= 0.0 && p <= 100.0)) throw UsageError("percentile p must lie in [0, 100]");
  const std::size_t n = sigma.size();
  const double x = p * static_cast<double>(n) / 100.0;
  // The slack absorbs representation error in p (e.g. 33.3 * 3 / 100).
  std::size_t r = static_cast<std::size_t>(std::ceil(x - 1e-9));
  r = std::clamp<std::size_t>(r, 1, n);
  std::vector<double> sorted(sigma.begin(), sigma.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(r - 1), sorted.end());
  return sorted[r - 1];
}

// Split of one layer's weight indices (0-based) around theta.
struct Partition {
  std::vector<std::size_t> significant;  // sigma >= theta, descending sigma, ties by index
  std::vector<std::size_t> less;         // sigma < theta, ascending sigma, ties by index
  double theta = 0.0;

  std::size_t size() const noexcept { return significant.size() + less.size(); }
};

inline Partition partition(std::span<const double> sigma, double theta) {
  if (sigma.empty()) throw UsageError("cannot partition an empty layer");
  if (std::isnan(theta)) throw UsageError("partition threshold is NaN");
  Partition part;
  part.theta = theta;
  for (std::size_t j = 0; j < sigma.size(); ++j) (sigma[j] >= theta ? part.significant : part.less).push_back(j);
  std::stable_sort(part.significant.begin(), part.significant.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });
  std::stable_sort(part.less.begin(), part.less.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] < sigma[b]; });
  return part;
}

// Position in S (1-based) receiving the i-th (1-based) less-significant weight.
inline std::size_t cyclic_index(std::size_t i, std::size_t s) {
  if (s == 0) throw UsageError("whole layer insignificant: no significant weight to merge into");
  if (i == 0) throw UsageError("cyclic_index positions are 1-based");
  return i % s + 1;
}

// One merge: L position i (1-based) was added into S position j (1-based).
struct Pairing {
  std::size_t less_position = 0;
  std::size_t sig_position = 0;
  std::size_t less_index = 0;  // weight index within the layer
  std::size_t sig_index = 0;

  bool operator==(const Pairing&) const = default;
};

using PairingMap = std::vector<Pairing>;

namespace detail {

inline void check_partition(std::size_t n, const Partition& part) {
  if (part.size() != n) throw ShapeError("partition does not cover the layer's weights");
  if (!part.less.empty() && part.significant.empty()) {
    throw UsageError("whole layer insignificant: no significant weight to merge into");
  }
}

template <std::floating_point T, class PickTarget>
PairingMap merge_into_significant(std::span<T> weights, const Partition& part, PickTarget pick) {
  check_partition(weights.size(), part);
  PairingMap pairs;
  pairs.reserve(part.less.size());
  const std::size_t s = part.significant.size();
  for (std::size_t i = 1; i <= part.less.size(); ++i) {
    const std::size_t j = pick(i, s);
    const std::size_t src = part.less[i - 1];
    const std::size_t dst = part.significant[j - 1];
    weights[dst] += weights[src];
    weights[src] = T{0};
    pairs.push_back({i, j, src, dst});
  }
  return pairs;
}

}  // namespace detail

// W[S[j]] += W[L[i]], W[L[i]] = 0 with j = cyclic_index(i, |S|), in L order.
template <std::floating_point T>
PairingMap merge_cyclic(std::span<T> weights, const Partition& part) {
  return detail::merge_into_significant(weights, part, [](std::size_t i, std::size_t s) { return cyclic_index(i, s); });
}

// Same merge, but every L element picks a uniformly random S position.
template <std::floating_point T>
PairingMap merge_random(std::span<T> weights, const Partition& part, std::mt19937_64& rng) {
  return detail::merge_into_significant(weights, part, [&rng](std::size_t, std::size_t s) {
    return std::uniform_int_distribution<std::size_t>(1, s)(rng);
  });
}

template <std::floating_point T>
void zero_less(std::span<T> weights, const Partition& part) {
  detail::check_partition(weights.size(), part);
  for (std::size_t j : part.less) weights[j] = T{0};
}

// 0/1 vector over the weight-only view; 0 marks pruned weights.
struct PruneMask {
  std::vector<std::uint8_t> values;
  double sparsity = 0.0;

  std::size_t zeros() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{0}));
  }
};

// Layer partitions in weight-view order.
inline PruneMask build_mask(std::span<const Partition> partitions) {
  PruneMask mask;
  for (const Partition& part : partitions) {
    if (part.size() && part.significant.empty()) {
      throw UsageError("whole layer insignificant: mask would remove every weight");
    }
    const std::size_t base = mask.values.size();
    mask.values.resize(base + part.size(), 1);
    for (std::size_t j : part.less) mask.values[base + j] = 0;
  }
  mask.sparsity = mask.values.empty() ? 0.0 : static_cast<double>(mask.zeros()) / static_cast<double>(mask.values.size());
  return mask;
}

enum class Strategy { camp_hive, hrp, hmp, magnitude };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::camp_hive: return "camp-hive";
    case Strategy::hrp: return "hrp";
    case Strategy::hmp: return "hmp";
    case Strategy::magnitude: return "magnitude";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "camp-hive") return Strategy::camp_hive;
  if (name == "hrp") return Strategy::hrp;
  if (name == "hmp") return Strategy::hmp;
  if (name == "magnitude") return Strategy::magnitude;
  throw UsageError("unknown pruning strategy '" + std::string(name) +
                   "' (expected camp-hive, hrp, hmp or magnitude)");
}

// Strategies ranked by the Hessian probe rather than |w|.
inline bool uses_curvature(Strategy s) { return s != Strategy::magnitude; }

struct LayerPruneReport {
  std::string layer;
  std::size_t n = 0;
  double theta = 0.0;
  std::size_t s = 0;
  std::size_t l = 0;
  double sparsity = 0.0;
  double weight_sum_before = 0.0;
  double weight_sum_after = 0.0;
};

struct PruneReport {
  Strategy strategy = Strategy::camp_hive;
  double p = 0.0;
  std::uint64_t seed = 0;
  std::vector<LayerPruneReport> layers;
  double total_sparsity = 0.0;
};

inline nlohmann::json to_json(const PruneReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"layer", l.layer},
                      {"n_k", l.n},
                      {"theta", l.theta},
                      {"s", l.s},
                      {"l", l.l},
                      {"sparsity", l.sparsity},
                      {"weight_sum_before", l.weight_sum_before},
                      {"weight_sum_after", l.weight_sum_after}});
  }
  return {{"strategy", std::string(to_string(r.strategy))},
          {"p", r.p},
          {"seed", r.seed},
          {"total_sparsity", r.total_sparsity},
          {"layers", layers}};
}

template <std::floating_point T>
struct PruneResult {
  Network<T> net;
  PruneMask mask;
  PruneReport report;
  std::vector<Partition> partitions;
  std::vector<PairingMap> pairings;  // empty maps for non-merging strategies
};

namespace detail {

template <std::floating_point T>
double layer_sum(std::span<const T> w) {
  double s = 0.0;
  for (T x : w) s += x;
  return s;
}

}  // namespace detail

// Apply `strategy` given per-layer scores (curvature significance, or |w| for
// magnitude pruning). Thresholds are computed per layer.
template <std::floating_point T>
PruneResult<T> prune_with_scores(const Network<T>& net, Strategy strategy, double p, const SignificanceMap& scores,
                                 std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 100.0)) throw UsageError("pruning percentage p must lie in [0, 100]");
  if (scores.layers != net.weighted_layers()) throw ShapeError("significance map does not match network layers");

  PruneResult<T> out{net, {}, {}, {}, {}};
  out.report.strategy = strategy;
  out.report.p = p;
  out.report.seed = seed;
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);

  for (std::size_t i = 0; i < scores.layers.size(); ++i) {
    const std::size_t k = scores.layers[i];
    const std::vector<double>& sigma = scores.sigma[i];
    std::span<T> w = out.net.layer(k).weight.values();
    if (sigma.size() != w.size()) throw ShapeError("significance vector length does not match layer weights");

    const double sum_before = detail::layer_sum<T>(w);
    Partition part = partition(sigma, percentile_threshold(sigma, p));
    PairingMap pairs;
    switch (strategy) {
      case Strategy::camp_hive: pairs = merge_cyclic(w, part); break;
      case Strategy::hrp: pairs = merge_random(w, part, rng); break;
      case Strategy::hmp:
      case Strategy::magnitude: zero_less(w, part); break;
    }
    out.report.layers.push_back({layer_name(net, k), w.size(), part.theta, part.significant.size(), part.less.size(),
                                 static_cast<double>(part.less.size()) / static_cast<double>(w.size()), sum_before,
                                 detail::layer_sum<T>(w)});
    out.partitions.push_back(std::move(part));
    out.pairings.push_back(std::move(pairs));
  }
  out.mask = build_mask(out.partitions);
  out.report.total_sparsity = out.mask.sparsity;
  return out;
}

// Prune with a curvature probe computed beforehand (reusable across p and
// strategies). Magnitude pruning ignores the probe.
template <std::floating_point T>
PruneResult<T> prune(const Network<T>& net, Strategy strategy, double p, const CurvatureProbe& probe,
                     std::uint64_t seed) {
  return prune_with_scores(net, strategy, p, uses_curvature(strategy) ? significance(probe, net) : magnitude_scores(net),
                           seed);
}

// Full pruning event: estimate curvature on `calib` once (when the strategy
// needs it), then threshold, partition, merge or zero, and build the mask.
template <std::floating_point T>
PruneResult<T> prune(const Network<T>& net, Strategy strategy, double p, const Batch<T>& calib,
                     const CurvatureConfig& curvature, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 100.0)) throw UsageError("pruning percentage p must lie in [0, 100]");
  if (!uses_curvature(strategy)) return prune_with_scores(net, strategy, p, magnitude_scores(net), seed);
  return prune(net, strategy, p, power_iteration(net, calib, curvature, seed), seed);
}

}  // namespace camp
