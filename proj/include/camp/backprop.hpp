#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "camp/batch.hpp"
#include "camp/error.hpp"
#include "camp/network.hpp"
#include "camp/tensor.hpp"

namespace camp {

// State retained by a forward pass: every layer's output plus what backward
// needs. `loss` and `probabilities` are only set by forward().
template <std::floating_point T>
struct ForwardPass {
  Tensor<T> input;
  std::vector<Tensor<T>> activations;                 // activations[k] = output of layer k
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // per layer, maxpool only
  std::vector<double> probabilities;                  // softmax, batch x classes
  double loss = std::numeric_limits<double>::quiet_NaN();

  bool has_loss() const noexcept { return !probabilities.empty(); }
  std::size_t batch_size() const { return input.empty() ? 0 : input.dim(0); }
  const Tensor<T>& logits() const { return activations.empty() ? input : activations.back(); }
};

namespace detail {

template <std::floating_point T>
void dense_forward(const Layer<T>& layer, std::size_t n, std::span<const T> in, std::span<T> out) {
  const std::size_t in_f = layer.spec.in_features;
  const std::size_t out_f = layer.spec.out_features;
  const T* w = layer.weight.data();
  const T* b = layer.bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * in_f;
    T* y = out.data() + s * out_f;
    for (std::size_t o = 0; o < out_f; ++o) {
      const T* row = w + o * in_f;
      double acc = b[o];
      for (std::size_t i = 0; i < in_f; ++i) acc += static_cast<double>(row[i]) * x[i];
      y[o] = static_cast<T>(acc);
    }
  }
}

template <std::floating_point T>
void dense_backward(const Layer<T>& layer, std::size_t n, std::span<const T> in, std::span<const double> dy,
                    double* dw, double* db, std::vector<double>* dx) {
  const std::size_t in_f = layer.spec.in_features;
  const std::size_t out_f = layer.spec.out_features;
  const T* w = layer.weight.data();
  if (dx) dx->assign(n * in_f, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * in_f;
    const double* g = dy.data() + s * out_f;
    double* dxs = dx ? dx->data() + s * in_f : nullptr;
    for (std::size_t o = 0; o < out_f; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      db[o] += go;
      double* dwrow = dw + o * in_f;
      for (std::size_t i = 0; i < in_f; ++i) dwrow[i] += go * x[i];
      if (dxs) {
        const T* row = w + o * in_f;
        for (std::size_t i = 0; i < in_f; ++i) dxs[i] += go * row[i];
      }
    }
  }
}

struct ConvGeometry {
  std::size_t in_c, in_h, in_w, out_c, out_h, out_w, k_h, k_w, stride, pad;
};

template <std::floating_point T>
ConvGeometry conv_geometry(const Network<T>& net, std::size_t k) {
  const LayerSpec& s = net.layer(k).spec;
  const Shape& in = net.layer_input_shape(k);
  const Shape& out = net.layer_output_shape(k);
  return {in[0], in[1], in[2], out[0], out[1], out[2], s.kernel_h, s.kernel_w, s.stride, s.padding};
}

template <std::floating_point T>
void conv_forward(const Layer<T>& layer, const ConvGeometry& g, std::size_t n, std::span<const T> in,
                  std::span<T> out) {
  const std::size_t in_size = g.in_c * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  std::vector<double> acc(out_plane);
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * in_size;
    T* y = out.data() + s * g.out_c * out_plane;
    for (std::size_t oc = 0; oc < g.out_c; ++oc) {
      std::fill(acc.begin(), acc.end(), static_cast<double>(layer.bias[oc]));
      for (std::size_t ic = 0; ic < g.in_c; ++ic) {
        const T* plane = x + ic * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          for (std::size_t kx = 0; kx < g.k_w; ++kx) {
            const double wv = layer.weight[((oc * g.in_c + ic) * g.k_h + ky) * g.k_w + kx];
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                acc[oy * g.out_w + ox] += wv * plane[static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)];
              }
            }
          }
        }
      }
      for (std::size_t i = 0; i < out_plane; ++i) y[oc * out_plane + i] = static_cast<T>(acc[i]);
    }
  }
}

template <std::floating_point T>
void conv_backward(const Layer<T>& layer, const ConvGeometry& g, std::size_t n, std::span<const T> in,
                   std::span<const double> dy, double* dw, double* db, std::vector<double>* dx) {
  const std::size_t in_size = g.in_c * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  if (dx) dx->assign(n * in_size, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * in_size;
    const double* gy = dy.data() + s * g.out_c * out_plane;
    double* gx = dx ? dx->data() + s * in_size : nullptr;
    for (std::size_t oc = 0; oc < g.out_c; ++oc) {
      const double* gplane = gy + oc * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) db[oc] += gplane[i];
      for (std::size_t ic = 0; ic < g.in_c; ++ic) {
        const T* plane = x + ic * g.in_h * g.in_w;
        double* gxplane = gx ? gx + ic * g.in_h * g.in_w : nullptr;
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          for (std::size_t kx = 0; kx < g.k_w; ++kx) {
            const std::size_t widx = ((oc * g.in_c + ic) * g.k_h + ky) * g.k_w + kx;
            const double wv = layer.weight[widx];
            double wacc = 0.0;
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                const std::size_t pos = static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix);
                const double go = gplane[oy * g.out_w + ox];
                wacc += go * plane[pos];
                if (gxplane) gxplane[pos] += go * wv;
              }
            }
            dw[widx] += wacc;
          }
        }
      }
    }
  }
}

template <std::floating_point T>
void maxpool_forward(const Shape& in_shape, std::size_t n, std::span<const T> in, std::span<T> out,
                     std::vector<std::uint32_t>& argmax) {
  const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
  const std::size_t oh = h / 2, ow = w / 2;
  const std::size_t in_size = c * h * w;
  const std::size_t out_size = c * oh * ow;
  argmax.resize(n * out_size);
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * in_size;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = ch * h * w + (2 * oy) * w + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t pos = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
              if (x[pos] > x[best]) best = pos;
            }
          }
          const std::size_t o = (ch * oh + oy) * ow + ox;
          out[s * out_size + o] = x[best];
          argmax[s * out_size + o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
}

}  // namespace detail

// Propagate `inputs` (leading batch dimension) through every layer.
template <std::floating_point T>
ForwardPass<T> forward_activations(const Network<T>& net, const Tensor<T>& inputs) {
  if (inputs.rank() < 2) throw ShapeError("inputs need a leading batch dimension");
  const Shape sample(inputs.shape().begin() + 1, inputs.shape().end());
  if (sample != net.input_shape()) {
    throw ShapeError("input sample shape " + to_string(sample) + " does not match network input " +
                     to_string(net.input_shape()));
  }
  if (!inputs.all_finite()) throw NumericError("non-finite value in network inputs");
  const std::size_t n = inputs.dim(0);

  ForwardPass<T> pass;
  pass.input = inputs;
  pass.activations.reserve(net.num_layers());
  pass.pool_argmax.resize(net.num_layers());
  const Tensor<T>* current = &pass.input;
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const Layer<T>& layer = net.layer(k);
    Shape out_shape = net.layer_output_shape(k);
    out_shape.insert(out_shape.begin(), n);
    Tensor<T> out(out_shape);
    switch (layer.spec.kind) {
      case LayerKind::dense: detail::dense_forward(layer, n, current->values(), out.values()); break;
      case LayerKind::conv2d:
        detail::conv_forward(layer, detail::conv_geometry(net, k), n, current->values(), out.values());
        break;
      case LayerKind::relu:
        std::transform(current->values().begin(), current->values().end(), out.values().begin(),
                       [](T v) { return v > T{0} ? v : T{0}; });
        break;
      case LayerKind::flatten:
        std::copy(current->values().begin(), current->values().end(), out.values().begin());
        break;
      case LayerKind::maxpool2x2:
        detail::maxpool_forward(net.layer_input_shape(k), n, current->values(), out.values(), pass.pool_argmax[k]);
        break;
    }
    pass.activations.push_back(std::move(out));
    current = &pass.activations.back();
  }
  return pass;
}

// Mean softmax cross-entropy of the batch; keeps all activations for backward.
template <std::floating_point T>
ForwardPass<T> forward(const Network<T>& net, const Batch<T>& batch) {
  validate_batch(batch);
  ForwardPass<T> pass = forward_activations(net, batch.inputs);
  const Tensor<T>& logits = pass.logits();
  if (logits.rank() != 2) throw ShapeError("network output must be a class-score vector per sample");
  const std::size_t n = batch.size();
  const std::size_t classes = logits.dim(1);
  pass.probabilities.assign(n * classes, 0.0);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const int y = batch.labels[s];
    if (static_cast<std::size_t>(y) >= classes) {
      throw ShapeError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
    const T* z = logits.data() + s * classes;
    double zmax = z[0];
    for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, static_cast<double>(z[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(static_cast<double>(z[c]) - zmax);
    const double log_sum = zmax + std::log(sum);
    for (std::size_t c = 0; c < classes; ++c) {
      pass.probabilities[s * classes + c] = std::exp(static_cast<double>(z[c]) - log_sum);
    }
    total += log_sum - static_cast<double>(z[y]);
  }
  pass.loss = total / static_cast<double>(n);
  if (!std::isfinite(pass.loss)) throw NumericError("numeric overflow: loss is not finite");
  return pass;
}

template <std::floating_point T>
double loss(const Network<T>& net, const Batch<T>& batch) {
  return forward(net, batch).loss;
}

// Gradient of the mean loss with respect to every parameter, in flat
// parameter order. Requires the ForwardPass produced by forward(net, batch).
template <std::floating_point T>
std::vector<T> backward(const Network<T>& net, const ForwardPass<T>& pass, const Batch<T>& batch) {
  if (!pass.has_loss() || pass.activations.size() != net.num_layers() || pass.batch_size() != batch.size()) {
    throw UsageError("backward called without a matching forward pass");
  }
  const std::size_t n = batch.size();
  const std::size_t classes = pass.logits().dim(1);

  // d(mean loss)/d(logits)
  std::vector<double> grad_out(pass.probabilities);
  for (std::size_t s = 0; s < n; ++s) grad_out[s * classes + static_cast<std::size_t>(batch.labels[s])] -= 1.0;
  for (double& g : grad_out) g /= static_cast<double>(n);

  std::vector<double> grad(net.parameter_count(), 0.0);
  std::vector<double> grad_in;
  for (std::size_t k = net.num_layers(); k-- > 0;) {
    const Layer<T>& layer = net.layer(k);
    const Tensor<T>& in = k == 0 ? pass.input : pass.activations[k - 1];
    const bool need_dx = k > 0;
    double* dw = grad.data() + net.param_offset(k);
    double* db = dw + layer.weight.size();
    switch (layer.spec.kind) {
      case LayerKind::dense:
        detail::dense_backward(layer, n, in.values(), grad_out, dw, db, need_dx ? &grad_in : nullptr);
        break;
      case LayerKind::conv2d:
        detail::conv_backward(layer, detail::conv_geometry(net, k), n, in.values(), grad_out, dw, db,
                              need_dx ? &grad_in : nullptr);
        break;
      case LayerKind::relu: {
        const auto out = pass.activations[k].values();
        grad_in.resize(grad_out.size());
        for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[i] = out[i] > T{0} ? grad_out[i] : 0.0;
        break;
      }
      case LayerKind::flatten: grad_in = grad_out; break;
      case LayerKind::maxpool2x2: {
        const std::size_t in_size = shape_size(net.layer_input_shape(k));
        const std::size_t out_size = shape_size(net.layer_output_shape(k));
        grad_in.assign(n * in_size, 0.0);
        const auto& argmax = pass.pool_argmax[k];
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t o = 0; o < out_size; ++o) {
            grad_in[s * in_size + argmax[s * out_size + o]] += grad_out[s * out_size + o];
          }
        }
        break;
      }
    }
    if (need_dx) std::swap(grad_out, grad_in);
  }

  std::vector<T> out(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = static_cast<T>(grad[i]);
  return out;
}

template <std::floating_point T>
std::pair<double, std::vector<T>> loss_and_gradient(const Network<T>& net, const Batch<T>& batch) {
  ForwardPass<T> pass = forward(net, batch);
  std::vector<T> g = backward(net, pass, batch);
  return {pass.loss, std::move(g)};
}

}  // namespace camp
