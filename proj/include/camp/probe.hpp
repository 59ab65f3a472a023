#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camp/backprop.hpp"
#include "camp/batch.hpp"
#include "camp/error.hpp"
#include "camp/network.hpp"

namespace camp {

// A layer output whose activations are recorded. Each weighted layer is
// sampled after its nonlinearity when one follows; a relu with no weighted
// layer in front of it is sampled on its own.
struct ProbePoint {
  std::size_t layer = 0;  // index of the layer whose output is read
  std::string name;
};

template <std::floating_point T>
std::vector<ProbePoint> probe_points(const Network<T>& net) {
  std::vector<ProbePoint> points;
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const LayerKind kind = net.layer(k).spec.kind;
    const bool next_is_relu = k + 1 < net.num_layers() && net.layer(k + 1).spec.kind == LayerKind::relu;
    if (net.layer(k).spec.has_weights() && !next_is_relu) {
      points.push_back({k, layer_name(net, k)});
    } else if (kind == LayerKind::relu) {
      const bool after_weighted = k > 0 && net.layer(k - 1).spec.has_weights();
      points.push_back({k, layer_name(net, after_weighted ? k - 1 : k)});
    }
  }
  return points;
}

struct ActivationStats {
  std::string layer;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

inline constexpr std::size_t kProbeChunk = 256;

namespace detail {

template <std::floating_point T, class Visit>
void for_each_chunk(const Batch<T>& data, Visit visit) {
  for (std::size_t begin = 0; begin < data.size(); begin += kProbeChunk) {
    const std::size_t end = std::min(data.size(), begin + kProbeChunk);
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    visit(gather(data, std::span<const std::size_t>(idx)));
  }
}

}  // namespace detail

// min / max / mean of every probe point's activations over the probe set.
template <std::floating_point T>
std::vector<ActivationStats> activation_stats(const Network<T>& net, const Batch<T>& probe) {
  validate_batch(probe);
  const auto points = probe_points(net);
  std::vector<ActivationStats> stats(points.size());
  std::vector<double> sums(points.size(), 0.0);
  std::vector<std::size_t> counts(points.size(), 0);
  for (std::size_t p = 0; p < points.size(); ++p) {
    stats[p].layer = points[p].name;
    stats[p].min = std::numeric_limits<double>::infinity();
    stats[p].max = -std::numeric_limits<double>::infinity();
  }
  detail::for_each_chunk(probe, [&](const Batch<T>& chunk) {
    const ForwardPass<T> pass = forward_activations(net, chunk.inputs);
    for (std::size_t p = 0; p < points.size(); ++p) {
      for (T v : pass.activations[points[p].layer].values()) {
        stats[p].min = std::min(stats[p].min, static_cast<double>(v));
        stats[p].max = std::max(stats[p].max, static_cast<double>(v));
        sums[p] += v;
      }
      counts[p] += pass.activations[points[p].layer].size();
    }
  });
  for (std::size_t p = 0; p < points.size(); ++p) stats[p].mean = sums[p] / static_cast<double>(counts[p]);
  return stats;
}

// Mean |a_base - a_pruned| per probe point, over every element and sample.
template <std::floating_point T>
std::vector<double> mad(const Network<T>& base, const Network<T>& pruned, const Batch<T>& probe) {
  if (!base.same_architecture(pruned)) throw ShapeError("mad: networks have different architectures");
  validate_batch(probe);
  const auto points = probe_points(base);
  std::vector<double> sums(points.size(), 0.0);
  std::vector<std::size_t> counts(points.size(), 0);
  detail::for_each_chunk(probe, [&](const Batch<T>& chunk) {
    const ForwardPass<T> a = forward_activations(base, chunk.inputs);
    const ForwardPass<T> b = forward_activations(pruned, chunk.inputs);
    for (std::size_t p = 0; p < points.size(); ++p) {
      const auto va = a.activations[points[p].layer].values();
      const auto vb = b.activations[points[p].layer].values();
      for (std::size_t i = 0; i < va.size(); ++i) {
        sums[p] += std::abs(static_cast<double>(va[i]) - static_cast<double>(vb[i]));
      }
      counts[p] += va.size();
    }
  });
  for (std::size_t p = 0; p < points.size(); ++p) sums[p] /= static_cast<double>(counts[p]);
  return sums;
}

struct LayerProbeStats {
  std::string layer;
  ActivationStats base;
  ActivationStats pruned;
  double mad = 0.0;
};

using ProbeStats = std::vector<LayerProbeStats>;

template <std::floating_point T>
ProbeStats probe_stats(const Network<T>& base, const Network<T>& pruned, const Batch<T>& probe) {
  const auto a = activation_stats(base, probe);
  const auto b = activation_stats(pruned, probe);
  const auto d = mad(base, pruned, probe);
  ProbeStats out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back({a[i].layer, a[i], b[i], d[i]});
  return out;
}

inline void write_probe_csv(std::ostream& os, const ProbeStats& stats) {
  os << "layer,min,max,mean,mad,base_min,base_max,base_mean\n";
  os.precision(17);
  for (const auto& s : stats) {
    os << s.layer << ',' << s.pruned.min << ',' << s.pruned.max << ',' << s.pruned.mean << ',' << s.mad << ','
       << s.base.min << ',' << s.base.max << ',' << s.base.mean << '\n';
  }
}

inline nlohmann::json to_json(const ProbeStats& stats) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : stats) {
    rows.push_back({{"layer", s.layer},
                    {"base", {{"min", s.base.min}, {"max", s.base.max}, {"mean", s.base.mean}}},
                    {"pruned", {{"min", s.pruned.min}, {"max", s.pruned.max}, {"mean", s.pruned.mean}}},
                    {"mad", s.mad}});
  }
  return rows;
}

// Accuracies in percent.
struct Accuracy {
  double top1 = 0.0;
  std::optional<double> top5;  // only for >= 5 classes
  std::size_t samples = 0;
};

// Top-1 and top-5 accuracy. Ties in the class scores rank the lower class id first.
template <std::floating_point T>
Accuracy evaluate(const Network<T>& net, const Batch<T>& data) {
  if (data.size() == 0) throw UsageError("evaluate: empty dataset");
  validate_batch(data);
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  std::size_t classes = 0;
  detail::for_each_chunk(data, [&](const Batch<T>& chunk) {
    const ForwardPass<T> pass = forward_activations(net, chunk.inputs);
    const Tensor<T>& z = pass.logits();
    if (z.rank() != 2) throw ShapeError("evaluate: network output must be a class-score vector");
    classes = z.dim(1);
    for (std::size_t s = 0; s < chunk.size(); ++s) {
      const std::size_t y = static_cast<std::size_t>(chunk.labels[s]);
      if (y >= classes) throw ShapeError("evaluate: label outside the network's classes");
      const T* row = z.data() + s * classes;
      std::size_t rank = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (row[c] > row[y] || (row[c] == row[y] && c < y)) ++rank;
      }
      hit1 += rank < 1;
      hit5 += rank < 5;
    }
  });
  Accuracy acc;
  acc.samples = data.size();
  acc.top1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(data.size());
  if (classes >= 5) acc.top5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(data.size());
  return acc;
}

struct AccuracyReport {
  Accuracy baseline;
  Accuracy pruned;
  double delta_acc = 0.0;  // pruned - baseline, percentage points
  std::optional<double> delta_top5;
};

inline AccuracyReport compare_accuracy(const Accuracy& baseline, const Accuracy& pruned) {
  AccuracyReport r{baseline, pruned, pruned.top1 - baseline.top1, std::nullopt};
  if (baseline.top5 && pruned.top5) r.delta_top5 = *pruned.top5 - *baseline.top5;
  return r;
}

inline nlohmann::json to_json(const Accuracy& a) {
  nlohmann::json j = {{"top1", a.top1}, {"samples", a.samples}};
  if (a.top5) j["top5"] = *a.top5;
  return j;
}

}  // namespace camp
