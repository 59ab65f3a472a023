#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "camp/error.hpp"
#include "camp/tensor.hpp"

namespace camp {

enum class LayerKind { dense, conv2d, relu, flatten, maxpool2x2 };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::maxpool2x2: return "maxpool2x2";
  }
  return "unknown";
}

inline LayerKind parse_layer_kind(std::string_view name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "relu") return LayerKind::relu;
  if (name == "flatten") return LayerKind::flatten;
  if (name == "maxpool2x2") return LayerKind::maxpool2x2;
  throw UsageError("unknown layer kind '" + std::string(name) + "'");
}

// Static description of one layer. Only dense and conv2d carry parameters.
//
// Per-sample tensor layouts: dense consumes a rank-1 vector, conv2d and
// maxpool2x2 consume (channels, height, width). Dense weights are stored
// (out, in); conv2d weights are stored (out_c, in_c, k_h, k_w).
struct LayerSpec {
  LayerKind kind = LayerKind::relu;

  std::size_t in_features = 0;
  std::size_t out_features = 0;

  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_features = in;
    s.out_features = out;
    return s;
  }

  static LayerSpec conv2d(std::size_t in_c, std::size_t out_c, std::size_t k_h, std::size_t k_w,
                          std::size_t stride = 1, std::size_t padding = 0) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel_h = k_h;
    s.kernel_w = k_w;
    s.stride = stride;
    s.padding = padding;
    return s;
  }

  static LayerSpec relu() { return LayerSpec{}; }

  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
  }

  static LayerSpec maxpool2x2() {
    LayerSpec s;
    s.kind = LayerKind::maxpool2x2;
    return s;
  }

  bool has_weights() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  Shape weight_shape() const {
    switch (kind) {
      case LayerKind::dense: return {out_features, in_features};
      case LayerKind::conv2d: return {out_channels, in_channels, kernel_h, kernel_w};
      default: return {};
    }
  }

  Shape bias_shape() const {
    switch (kind) {
      case LayerKind::dense: return {out_features};
      case LayerKind::conv2d: return {out_channels};
      default: return {};
    }
  }

  void validate() const {
    switch (kind) {
      case LayerKind::dense:
        if (in_features == 0 || out_features == 0) throw ShapeError("dense layer needs positive sizes");
        break;
      case LayerKind::conv2d:
        if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0) {
          throw ShapeError("conv2d layer needs positive channels, kernel and stride");
        }
        break;
      default: break;
    }
  }

  // Per-sample output shape for a per-sample input shape.
  Shape output_shape(const Shape& input) const {
    validate();
    switch (kind) {
      case LayerKind::dense:
        if (input.size() != 1 || input[0] != in_features) {
          throw ShapeError("dense(" + std::to_string(in_features) + "->" + std::to_string(out_features) +
                           ") cannot consume input " + to_string(input));
        }
        return {out_features};
      case LayerKind::conv2d: {
        if (input.size() != 3 || input[0] != in_channels) {
          throw ShapeError("conv2d with " + std::to_string(in_channels) + " input channels cannot consume input " +
                           to_string(input));
        }
        const std::size_t h = input[1] + 2 * padding;
        const std::size_t w = input[2] + 2 * padding;
        if (h < kernel_h || w < kernel_w) {
          throw ShapeError("conv2d kernel larger than padded input " + to_string(input));
        }
        return {out_channels, (h - kernel_h) / stride + 1, (w - kernel_w) / stride + 1};
      }
      case LayerKind::relu: return input;
      case LayerKind::flatten: return {shape_size(input)};
      case LayerKind::maxpool2x2:
        if (input.size() != 3 || input[1] < 2 || input[2] < 2) {
          throw ShapeError("maxpool2x2 needs a (c, h, w) input with h, w >= 2, got " + to_string(input));
        }
        return {input[0], input[1] / 2, input[2] / 2};
    }
    return input;
  }

  bool operator==(const LayerSpec&) const = default;
};

}  // namespace camp
