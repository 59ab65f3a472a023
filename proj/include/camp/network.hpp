#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "camp/error.hpp"
#include "camp/layers.hpp"
#include "camp/tensor.hpp"

namespace camp {

template <std::floating_point T>
struct Layer {
  LayerSpec spec;
  Tensor<T> weight;  // empty for parameter-free layers
  Tensor<T> bias;

  bool operator==(const Layer&) const = default;
};

// Where a flat parameter index lives inside the network.
struct ParamLocation {
  std::size_t layer = 0;
  bool is_bias = false;
  std::size_t offset = 0;

  bool operator==(const ParamLocation&) const = default;
};

// Ordered feed-forward network.
//
// Flat parameter order: for every weighted layer in sequence, its weights
// (row-major) followed by its bias. The weight-only view used for curvature
// and pruning keeps the same order with the biases left out.
template <std::floating_point T>
class Network {
 public:
  using value_type = T;

  Network() = default;

  Network(Shape input_shape, const std::vector<LayerSpec>& specs) : input_shape_(std::move(input_shape)) {
    if (input_shape_.empty()) throw ShapeError("network input shape is empty");
    (void)shape_size(input_shape_);
    Shape current = input_shape_;
    std::size_t param_pos = 0;
    std::size_t weight_pos = 0;
    for (const LayerSpec& spec : specs) {
      Layer<T> layer{spec, {}, {}};
      input_shapes_.push_back(current);
      current = spec.output_shape(current);
      output_shapes_.push_back(current);
      if (spec.has_weights()) {
        layer.weight = Tensor<T>(spec.weight_shape());
        layer.bias = Tensor<T>(spec.bias_shape());
        weighted_.push_back(layers_.size());
        param_offsets_.push_back(param_pos);
        weight_offsets_.push_back(weight_pos);
        param_pos += layer.weight.size() + layer.bias.size();
        weight_pos += layer.weight.size();
      } else {
        param_offsets_.push_back(param_pos);
        weight_offsets_.push_back(weight_pos);
      }
      layers_.push_back(std::move(layer));
    }
    param_count_ = param_pos;
    weight_count_ = weight_pos;
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  const Layer<T>& layer(std::size_t k) const { return layers_.at(k); }
  Layer<T>& layer(std::size_t k) { return layers_.at(k); }
  std::span<const Layer<T>> layers() const noexcept { return layers_; }

  const Shape& layer_input_shape(std::size_t k) const { return input_shapes_.at(k); }
  const Shape& layer_output_shape(std::size_t k) const { return output_shapes_.at(k); }
  const Shape& output_shape() const { return output_shapes_.empty() ? input_shape_ : output_shapes_.back(); }

  // Indices of dense/conv2d layers, in order.
  const std::vector<std::size_t>& weighted_layers() const noexcept { return weighted_; }

  std::size_t parameter_count() const noexcept { return param_count_; }
  std::size_t weight_count() const noexcept { return weight_count_; }

  // Offset of layer k's first weight in the flat parameter vector.
  std::size_t param_offset(std::size_t k) const { return param_offsets_.at(k); }
  // Offset of layer k's first weight in the weight-only vector.
  std::size_t weight_offset(std::size_t k) const { return weight_offsets_.at(k); }

  std::size_t param_position(const ParamLocation& loc) const {
    const Layer<T>& l = layer(loc.layer);
    const std::size_t limit = loc.is_bias ? l.bias.size() : l.weight.size();
    if (loc.offset >= limit) throw UsageError("parameter offset out of range");
    return param_offsets_[loc.layer] + (loc.is_bias ? l.weight.size() : 0) + loc.offset;
  }

  ParamLocation locate(std::size_t flat) const {
    if (flat >= param_count_) throw UsageError("flat parameter index out of range");
    for (std::size_t k : weighted_) {
      const Layer<T>& l = layers_[k];
      const std::size_t begin = param_offsets_[k];
      if (flat < begin + l.weight.size()) return {k, false, flat - begin};
      if (flat < begin + l.weight.size() + l.bias.size()) return {k, true, flat - begin - l.weight.size()};
    }
    throw UsageError("flat parameter index out of range");
  }

  std::vector<T> flatten_params() const {
    std::vector<T> flat;
    flat.reserve(param_count_);
    for (std::size_t k : weighted_) {
      const Layer<T>& l = layers_[k];
      flat.insert(flat.end(), l.weight.values().begin(), l.weight.values().end());
      flat.insert(flat.end(), l.bias.values().begin(), l.bias.values().end());
    }
    return flat;
  }

  void unflatten_params(std::span<const T> flat) {
    if (flat.size() != param_count_) {
      throw ShapeError("expected " + std::to_string(param_count_) + " parameters, got " +
                       std::to_string(flat.size()));
    }
    auto it = flat.begin();
    for (std::size_t k : weighted_) {
      Layer<T>& l = layers_[k];
      std::copy_n(it, l.weight.size(), l.weight.values().begin());
      it += static_cast<std::ptrdiff_t>(l.weight.size());
      std::copy_n(it, l.bias.size(), l.bias.values().begin());
      it += static_cast<std::ptrdiff_t>(l.bias.size());
    }
  }

  std::vector<T> flatten_weights() const {
    std::vector<T> flat;
    flat.reserve(weight_count_);
    for (std::size_t k : weighted_) {
      const auto w = layers_[k].weight.values();
      flat.insert(flat.end(), w.begin(), w.end());
    }
    return flat;
  }

  template <typename U>
  void unflatten_weights(std::span<const U> flat) {
    if (flat.size() != weight_count_) {
      throw ShapeError("expected " + std::to_string(weight_count_) + " weights, got " + std::to_string(flat.size()));
    }
    auto it = flat.begin();
    for (std::size_t k : weighted_) {
      for (T& w : layers_[k].weight.values()) w = static_cast<T>(*it++);
    }
  }

  // Restrict a full parameter-length vector (e.g. a gradient) to the weight entries.
  template <typename U>
  std::vector<U> weights_of(std::span<const U> params) const {
    if (params.size() != param_count_) throw ShapeError("vector length does not match parameter count");
    std::vector<U> out;
    out.reserve(weight_count_);
    for (std::size_t k : weighted_) {
      const auto begin = params.begin() + static_cast<std::ptrdiff_t>(param_offsets_[k]);
      out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(layers_[k].weight.size()));
    }
    return out;
  }

  // He-uniform weights, zero biases.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t k : weighted_) {
      Layer<T>& l = layers_[k];
      const std::size_t fan_in = l.weight.size() / l.weight.dim(0);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (T& w : l.weight.values()) w = static_cast<T>(dist(rng));
      for (T& b : l.bias.values()) b = T{0};
    }
  }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l.spec);
    return out;
  }

  bool same_architecture(const Network& other) const {
    return input_shape_ == other.input_shape_ && specs() == other.specs();
  }

  bool operator==(const Network& other) const {
    return input_shape_ == other.input_shape_ && layers_ == other.layers_;
  }

 private:
  Shape input_shape_;
  std::vector<Layer<T>> layers_;
  std::vector<Shape> input_shapes_;
  std::vector<Shape> output_shapes_;
  std::vector<std::size_t> weighted_;
  std::vector<std::size_t> param_offsets_;
  std::vector<std::size_t> weight_offsets_;
  std::size_t param_count_ = 0;
  std::size_t weight_count_ = 0;
};

template <std::floating_point T>
Network<T> unflatten_params(Network<T> net, std::span<const T> flat) {
  net.unflatten_params(flat);
  return net;
}

// Display name of layer k, e.g. "dense_2".
template <std::floating_point T>
std::string layer_name(const Network<T>& net, std::size_t k) {
  return std::string(to_string(net.layer(k).spec.kind)) + "_" + std::to_string(k);
}

// Expand a weight-only 0/1 mask to a parameter-length mask; biases stay trainable.
template <std::floating_point T>
std::vector<std::uint8_t> expand_weight_mask(const Network<T>& net, std::span<const std::uint8_t> weight_mask) {
  if (weight_mask.size() != net.weight_count()) throw ShapeError("weight mask length does not match weight count");
  std::vector<std::uint8_t> out(net.parameter_count(), 1);
  for (std::size_t k : net.weighted_layers()) {
    const std::size_t n = net.layer(k).weight.size();
    std::copy_n(weight_mask.begin() + static_cast<std::ptrdiff_t>(net.weight_offset(k)), n,
                out.begin() + static_cast<std::ptrdiff_t>(net.param_offset(k)));
  }
  return out;
}

// Multi-layer perceptron: dense/relu blocks followed by a dense classifier head.
template <std::floating_point T = double>
Network<T> make_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes) {
  std::vector<LayerSpec> specs;
  std::size_t prev = inputs;
  for (std::size_t h : hidden) {
    specs.push_back(LayerSpec::dense(prev, h));
    specs.push_back(LayerSpec::relu());
    prev = h;
  }
  specs.push_back(LayerSpec::dense(prev, classes));
  return Network<T>({inputs}, specs);
}

// conv 3x3x8 -> relu -> maxpool -> conv 3x3x16 -> relu -> maxpool -> flatten -> dense.
// Convolutions use stride 1 and same padding.
template <std::floating_point T = double>
Network<T> make_tinyconv(const Shape& input_chw, std::size_t classes) {
  if (input_chw.size() != 3) throw ShapeError("tinyconv expects a (c, h, w) input shape");
  std::vector<LayerSpec> specs = {
      LayerSpec::conv2d(input_chw[0], 8, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool2x2(),
      LayerSpec::conv2d(8, 16, 3, 3, 1, 1),           LayerSpec::relu(), LayerSpec::maxpool2x2(),
      LayerSpec::flatten()};
  Shape shape = input_chw;
  for (const auto& s : specs) shape = s.output_shape(shape);
  specs.push_back(LayerSpec::dense(shape_size(shape), classes));
  return Network<T>(input_chw, specs);
}

}  // namespace camp
