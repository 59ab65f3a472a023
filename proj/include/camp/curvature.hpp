#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camp/backprop.hpp"
#include "camp/batch.hpp"
#include "camp/error.hpp"
#include "camp/network.hpp"

namespace camp {

// Anything that can evaluate the gradient of a scalar loss at a point.
template <class F>
concept GradientField = requires(const F& f, std::span<const double> x) {
  { f.dimension() } -> std::convertible_to<std::size_t>;
  { f.gradient(x) } -> std::convertible_to<std::vector<double>>;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot product of vectors with different lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Finite-difference step: 1e-3 * max(1, ||w||_inf).
inline double default_epsilon(std::span<const double> w) {
  double m = 0.0;
  for (double x : w) m = std::max(m, std::abs(x));
  return 1e-3 * std::max(1.0, m);
}

// (grad(w + eps v) - grad(w)) / eps, with grad(w) supplied by the caller.
// The step is taken along v / ||v|| and the result scaled back by ||v||, so
// the displacement is eps whatever the length of v and the result is linear
// in v. For unit v this is the plain forward difference.
template <GradientField F>
std::vector<double> hvp_fd(const F& field, std::span<const double> w, std::span<const double> v, double eps,
                           std::span<const double> grad_at_w) {
  const std::size_t n = field.dimension();
  if (w.size() != n || v.size() != n || grad_at_w.size() != n) {
    throw ShapeError("hvp_fd: point, direction and gradient must have the field's dimension");
  }
  if (!(eps > 0.0) || !std::isfinite(eps)) throw UsageError("hvp_fd: epsilon must be positive and finite");
  const double len = norm2(v);
  if (!(len > 1e-12)) throw UsageError("hvp_fd: direction vector has (near-)zero norm");
  const double step = len == 1.0 ? eps : eps / len;

  std::vector<double> shifted(n);
  for (std::size_t i = 0; i < n; ++i) shifted[i] = w[i] + step * v[i];
  std::vector<double> hv = field.gradient(shifted);
  for (std::size_t i = 0; i < n; ++i) {
    hv[i] = (hv[i] - grad_at_w[i]) / step;
    if (!std::isfinite(hv[i])) {
      throw NumericError("hvp_fd: non-finite Hessian-vector product; try a smaller or larger epsilon");
    }
  }
  return hv;
}

template <GradientField F>
std::vector<double> hvp_fd(const F& field, std::span<const double> w, std::span<const double> v, double eps) {
  const std::vector<double> g = field.gradient(w);
  return hvp_fd(field, w, v, eps, g);
}

// Power-iteration state after a run.
struct CurvatureProbe {
  std::vector<double> v;               // unit norm
  double rayleigh = 0.0;               // v^T H v at exit
  std::size_t iterations_run = 0;
  std::vector<double> cosine_trace;    // cos(v_new, v) per iteration
  std::vector<double> rayleigh_trace;  // v^T H v of the iterate entering each iteration
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  bool converged = false;
};

struct PowerIterationOptions {
  std::size_t max_iterations = 10;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  std::optional<double> epsilon;  // default_epsilon(w) when unset
};

// Seeded Rademacher vector scaled to unit norm.
inline std::vector<double> rademacher_unit(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw UsageError("cannot draw a direction in zero dimensions");
  std::mt19937_64 rng(seed);
  std::vector<double> v(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 64 == 0) bits = rng();
    v[i] = (bits & 1u) ? scale : -scale;
    bits >>= 1;
  }
  return v;
}

// v <- normalize(Hv) until |cos(v_new, v)| >= 1 - tol or max_iterations.
//
// The absolute cosine is the stopping test so that a dominant negative
// eigenvalue, which flips the sign of v every step, still terminates.
template <GradientField F>
CurvatureProbe power_iteration(const F& field, std::span<const double> w, const PowerIterationOptions& opt) {
  if (opt.max_iterations < 1) throw UsageError("power_iteration: max_iterations must be >= 1");
  if (!(opt.tol > 0.0 && opt.tol < 1.0)) throw UsageError("power_iteration: tol must lie in (0, 1)");
  const std::size_t n = field.dimension();
  if (w.size() != n) throw ShapeError("power_iteration: point does not match field dimension");

  CurvatureProbe probe;
  probe.seed = opt.seed;
  probe.epsilon = opt.epsilon.value_or(default_epsilon(w));
  probe.v = rademacher_unit(n, opt.seed);
  const std::vector<double> g0 = field.gradient(w);

  for (std::size_t t = 0; t < opt.max_iterations; ++t) {
    std::vector<double> hv = hvp_fd(field, w, probe.v, probe.epsilon, g0);
    probe.rayleigh_trace.push_back(dot(probe.v, hv));
    const double len = norm2(hv);
    if (!(len > 1e-12)) throw DegenerateCurvatureError(t + 1, len);
    for (double& x : hv) x /= len;
    const double cos = std::clamp(dot(hv, probe.v), -1.0, 1.0);
    probe.cosine_trace.push_back(cos);
    probe.v = std::move(hv);
    probe.iterations_run = t + 1;
    if (std::abs(cos) >= 1.0 - opt.tol) {
      probe.converged = true;
      break;
    }
  }
  probe.rayleigh = dot(probe.v, hvp_fd(field, w, probe.v, probe.epsilon, g0));
  return probe;
}

// Mean training loss of a network as a function of its weights (biases
// fixed). Gradients are evaluated on a private copy; the source network is
// never modified.
template <std::floating_point T>
class NetworkLossField {
 public:
  NetworkLossField(const Network<T>& net, const Batch<T>& calib) : scratch_(net), calib_(&calib) {
    validate_batch(calib);
  }

  std::size_t dimension() const { return scratch_.weight_count(); }

  std::vector<double> gradient(std::span<const double> weights) const {
    scratch_.unflatten_weights(weights);
    const std::vector<T> g = backward(scratch_, forward(scratch_, *calib_), *calib_);
    const std::vector<T> gw = scratch_.weights_of(std::span<const T>(g));
    return std::vector<double>(gw.begin(), gw.end());
  }

 private:
  mutable Network<T> scratch_;
  const Batch<T>* calib_;
};

template <std::floating_point T>
std::vector<double> weights_as_double(const Network<T>& net) {
  const std::vector<T> w = net.flatten_weights();
  return std::vector<double>(w.begin(), w.end());
}

// Hessian-vector product over the weight subspace of `net` on a calibration batch.
template <std::floating_point T>
std::vector<double> hvp_fd(const Network<T>& net, const Batch<T>& calib, std::span<const double> v, double epsilon) {
  const NetworkLossField<T> field(net, calib);
  const std::vector<double> w = weights_as_double(net);
  return hvp_fd(field, std::span<const double>(w), v, epsilon);
}

struct CurvatureConfig {
  std::size_t max_iterations = 10;
  double tol = 1e-6;
  std::optional<double> epsilon;  // default_epsilon when unset
  std::size_t calibration_samples = 512;
};

template <std::floating_point T>
CurvatureProbe power_iteration(const Network<T>& net, const Batch<T>& calib, const CurvatureConfig& config,
                               std::uint64_t seed) {
  const NetworkLossField<T> field(net, calib);
  const std::vector<double> w = weights_as_double(net);
  return power_iteration(field, std::span<const double>(w),
                         PowerIterationOptions{config.max_iterations, config.tol, seed, config.epsilon});
}

// Fixed seeded subset of `samples` training points (all of them if fewer).
template <std::floating_point T>
Batch<T> calibration_batch(const Batch<T>& train, std::size_t samples, std::uint64_t seed) {
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (samples < train.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(samples);
    std::sort(idx.begin(), idx.end());
  }
  return gather(train, std::span<const std::size_t>(idx));
}

// Per-layer significance: sigma_j = |v_j| over the layer's weights.
struct SignificanceMap {
  std::vector<std::size_t> layers;          // network layer index of each entry
  std::vector<std::vector<double>> sigma;   // one vector per weighted layer
};

template <std::floating_point T>
SignificanceMap significance(std::span<const double> v, const Network<T>& net) {
  if (v.size() != net.weight_count()) {
    throw ShapeError("probe vector length " + std::to_string(v.size()) + " does not match " +
                     std::to_string(net.weight_count()) + " weights");
  }
  SignificanceMap map;
  for (std::size_t k : net.weighted_layers()) {
    const std::size_t off = net.weight_offset(k);
    const std::size_t n = net.layer(k).weight.size();
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) s[j] = std::abs(v[off + j]);
    map.layers.push_back(k);
    map.sigma.push_back(std::move(s));
  }
  return map;
}

template <std::floating_point T>
SignificanceMap significance(const CurvatureProbe& probe, const Network<T>& net) {
  return significance(std::span<const double>(probe.v), net);
}

// Magnitude scores |w| laid out like a SignificanceMap.
template <std::floating_point T>
SignificanceMap magnitude_scores(const Network<T>& net) {
  return significance(std::span<const double>(weights_as_double(net)), net);
}

// Debug dump of a probe: seed, epsilon, rayleigh, traces, per-layer sigma summaries.
template <std::floating_point T>
nlohmann::json probe_to_json(const CurvatureProbe& probe, const Network<T>& net) {
  const SignificanceMap map = significance(probe, net);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < map.layers.size(); ++i) {
    const auto& s = map.sigma[i];
    const auto [mn, mx] = std::minmax_element(s.begin(), s.end());
    layers.push_back({{"layer", layer_name(net, map.layers[i])},
                      {"n", s.size()},
                      {"sigma_min", *mn},
                      {"sigma_mean", std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size())},
                      {"sigma_max", *mx}});
  }
  return {{"seed", probe.seed},
          {"epsilon", probe.epsilon},
          {"rayleigh", probe.rayleigh},
          {"iterations_run", probe.iterations_run},
          {"converged", probe.converged},
          {"cosine_trace", probe.cosine_trace},
          {"rayleigh_trace", probe.rayleigh_trace},
          {"layers", layers}};
}

}  // namespace camp
