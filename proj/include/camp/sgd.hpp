#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <type_traits>
#include <span>
#include <vector>

#include "camp/backprop.hpp"
#include "camp/batch.hpp"
#include "camp/error.hpp"
#include "camp/network.hpp"

namespace camp {

// w <- w - lr * (g ⊙ mask). Coordinates with mask 0 are left untouched, so a
// zero there stays exactly zero.
template <std::floating_point T>
void sgd_step(Network<T>& net, std::type_identity_t<std::span<const T>> gradient, double lr,
              std::optional<std::span<const std::uint8_t>> mask = std::nullopt) {
  if (gradient.size() != net.parameter_count()) {
    throw ShapeError("gradient length " + std::to_string(gradient.size()) + " does not match " +
                     std::to_string(net.parameter_count()) + " parameters");
  }
  if (mask && mask->size() != net.parameter_count()) throw ShapeError("mask length does not match parameters");
  if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
  std::size_t pos = 0;
  auto update = [&](std::span<T> values) {
    for (T& w : values) {
      if (!mask || (*mask)[pos]) w = static_cast<T>(w - lr * gradient[pos]);
      ++pos;
    }
  };
  for (std::size_t k : net.weighted_layers()) {
    update(net.layer(k).weight.values());
    update(net.layer(k).bias.values());
  }
}

struct TrainSpec {
  std::size_t epochs = 20;
  double lr = 0.001;
  std::size_t batch_size = 32;
};

// Minibatch SGD with a seeded per-epoch shuffle. Returns the mean training
// loss of every epoch. `param_mask` (parameter-length, 0/1) freezes
// coordinates for masked fine-tuning.
template <std::floating_point T>
std::vector<double> train(Network<T>& net, const Batch<T>& data, const TrainSpec& spec, std::uint64_t seed,
                          std::optional<std::span<const std::uint8_t>> param_mask = std::nullopt) {
  validate_batch(data);
  if (spec.batch_size == 0) throw UsageError("batch size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += spec.batch_size) {
      const std::size_t end = std::min(order.size(), begin + spec.batch_size);
      const Batch<T> mb = gather(data, std::span<const std::size_t>(order.data() + begin, end - begin));
      auto [l, g] = loss_and_gradient(net, mb);
      sgd_step(net, std::span<const T>(g), spec.lr, param_mask);
      total += l;
      ++batches;
    }
    history.push_back(total / static_cast<double>(batches));
  }
  return history;
}

}  // namespace camp
