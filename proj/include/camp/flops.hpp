#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camp/error.hpp"
#include "camp/network.hpp"

namespace camp {

// 2 * o_h * o_w * o_c * (k_h * k_w * i_c)
inline std::uint64_t conv2d_flops(std::int64_t o_h, std::int64_t o_w, std::int64_t o_c, std::int64_t k_h,
                                  std::int64_t k_w, std::int64_t i_c) {
  if (o_h < 1 || o_w < 1 || o_c < 1 || k_h < 1 || k_w < 1 || i_c < 1) {
    throw UsageError("conv2d_flops: every dimension must be >= 1");
  }
  return 2ull * static_cast<std::uint64_t>(o_h) * static_cast<std::uint64_t>(o_w) * static_cast<std::uint64_t>(o_c) *
         (static_cast<std::uint64_t>(k_h) * static_cast<std::uint64_t>(k_w) * static_cast<std::uint64_t>(i_c));
}

// 2 * i_s * o_s
inline std::uint64_t dense_flops(std::int64_t i_s, std::int64_t o_s) {
  if (i_s < 1 || o_s < 1) throw UsageError("dense_flops: sizes must be >= 1");
  return 2ull * static_cast<std::uint64_t>(i_s) * static_cast<std::uint64_t>(o_s);
}

struct LayerFlops {
  std::string layer;
  std::uint64_t dense_flops = 0;
  double effective_flops = 0.0;  // dense_flops scaled by the surviving-weight fraction
  double sparsity = 0.0;
};

struct FlopsLedger {
  std::vector<LayerFlops> layers;
  std::uint64_t dense_total = 0;
  double effective_total = 0.0;
  double reduction_pct = 0.0;  // 100 * (1 - effective / dense)
};

// Dense FLOPs of one layer; zero for relu, flatten and pooling.
template <std::floating_point T>
std::uint64_t layer_flops(const Network<T>& net, std::size_t k) {
  const LayerSpec& s = net.layer(k).spec;
  switch (s.kind) {
    case LayerKind::dense:
      return dense_flops(static_cast<std::int64_t>(s.in_features), static_cast<std::int64_t>(s.out_features));
    case LayerKind::conv2d: {
      const Shape& out = net.layer_output_shape(k);
      return conv2d_flops(static_cast<std::int64_t>(out[1]), static_cast<std::int64_t>(out[2]),
                          static_cast<std::int64_t>(out[0]), static_cast<std::int64_t>(s.kernel_h),
                          static_cast<std::int64_t>(s.kernel_w), static_cast<std::int64_t>(s.in_channels));
    }
    default: return 0;
  }
}

// Per-layer and total FLOPs. With a weight mask, each weighted layer's
// effective count scales linearly with its fraction of surviving weights.
template <std::floating_point T>
FlopsLedger ledger(const Network<T>& net, std::optional<std::span<const std::uint8_t>> weight_mask = std::nullopt) {
  if (weight_mask && weight_mask->size() != net.weight_count()) {
    throw ShapeError("mask length does not match the network's weight count");
  }
  FlopsLedger out;
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    LayerFlops row{layer_name(net, k), layer_flops(net, k), 0.0, 0.0};
    row.effective_flops = static_cast<double>(row.dense_flops);
    if (weight_mask && net.layer(k).spec.has_weights()) {
      const std::size_t n = net.layer(k).weight.size();
      const auto m = weight_mask->subspan(net.weight_offset(k), n);
      std::size_t alive = 0;
      for (std::uint8_t x : m) alive += x ? 1 : 0;
      row.sparsity = 1.0 - static_cast<double>(alive) / static_cast<double>(n);
      row.effective_flops = static_cast<double>(row.dense_flops) * static_cast<double>(alive) / static_cast<double>(n);
    }
    out.dense_total += row.dense_flops;
    out.effective_total += row.effective_flops;
    out.layers.push_back(std::move(row));
  }
  out.reduction_pct =
      out.dense_total ? 100.0 * (1.0 - out.effective_total / static_cast<double>(out.dense_total)) : 0.0;
  return out;
}

// Budget constraint C(w) <= C_budget with C = effective total FLOPs.
inline bool within_budget(const FlopsLedger& l, double budget) { return l.effective_total <= budget; }

inline nlohmann::json to_json(const FlopsLedger& l) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : l.layers) {
    rows.push_back({{"layer", r.layer},
                    {"dense_flops", r.dense_flops},
                    {"effective_flops", r.effective_flops},
                    {"sparsity", r.sparsity}});
  }
  return {{"layers", rows},
          {"dense_total", l.dense_total},
          {"effective_total", l.effective_total},
          {"reduction_pct", l.reduction_pct}};
}

}  // namespace camp
