#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "camp/error.hpp"
#include "camp/tensor.hpp"

namespace camp {

// Labeled samples. `inputs` has a leading batch dimension.
template <std::floating_point T>
struct Batch {
  Tensor<T> inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }

  Shape sample_shape() const {
    const Shape& s = inputs.shape();
    return Shape(s.begin() + 1, s.end());
  }

  std::size_t sample_size() const { return size() ? inputs.size() / size() : 0; }

  std::span<const T> sample(std::size_t i) const {
    const std::size_t n = sample_size();
    return inputs.values().subspan(i * n, n);
  }

  bool operator==(const Batch&) const = default;
};

template <std::floating_point T>
void validate_batch(const Batch<T>& batch, std::size_t num_classes = 0) {
  if (batch.labels.empty()) throw ShapeError("batch is empty");
  if (batch.inputs.rank() < 2 || batch.inputs.dim(0) != batch.labels.size()) {
    throw ShapeError("batch inputs " + to_string(batch.inputs.shape()) + " do not match " +
                     std::to_string(batch.labels.size()) + " labels");
  }
  for (int y : batch.labels) {
    if (y < 0 || (num_classes && static_cast<std::size_t>(y) >= num_classes)) {
      throw ShapeError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

template <std::floating_point T>
Batch<T> make_batch(Tensor<T> inputs, std::vector<int> labels) {
  Batch<T> b{std::move(inputs), std::move(labels)};
  validate_batch(b);
  return b;
}

// Samples at `indices`, in that order.
template <std::floating_point T>
Batch<T> gather(const Batch<T>& batch, std::span<const std::size_t> indices) {
  const std::size_t n = batch.sample_size();
  Shape shape = batch.inputs.shape();
  shape[0] = indices.size();
  std::vector<T> data;
  data.reserve(indices.size() * n);
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= batch.size()) throw UsageError("sample index out of range");
    const auto s = batch.sample(i);
    data.insert(data.end(), s.begin(), s.end());
    labels.push_back(batch.labels[i]);
  }
  return Batch<T>{Tensor<T>(std::move(shape), std::move(data)), std::move(labels)};
}

// First `count` samples (or all of them if fewer).
template <std::floating_point T>
Batch<T> head(const Batch<T>& batch, std::size_t count) {
  std::vector<std::size_t> idx(std::min(count, batch.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather(batch, std::span<const std::size_t>(idx));
}

}  // namespace camp
