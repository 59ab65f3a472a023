#pragma once

// Test-only reference computations. Nothing here calls into the curvature
// or pruning code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "camp/backprop.hpp"
#include "camp/network.hpp"

namespace camp::oracle {

// Relative error with a small absolute floor so exact zeros compare sanely.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central differences of the loss with respect to every parameter.
template <class T>
std::vector<double> numeric_gradient(const Network<T>& net, const Batch<T>& batch, double h) {
  Network<T> probe = net;
  std::vector<T> params = net.flatten_params();
  std::vector<double> g(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    const T saved = params[j];
    params[j] = saved + static_cast<T>(h);
    probe.unflatten_params(std::span<const T>(params));
    const double up = loss(probe, batch);
    params[j] = saved - static_cast<T>(h);
    probe.unflatten_params(std::span<const T>(params));
    const double down = loss(probe, batch);
    params[j] = saved;
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

// Analytic gradient restricted to the weight subspace, as a function of the weights.
template <class T>
std::vector<double> weight_gradient(const Network<T>& net, const Batch<T>& batch, std::span<const double> weights) {
  Network<T> probe = net;
  probe.unflatten_weights(weights);
  const auto [l, g] = loss_and_gradient(probe, batch);
  (void)l;
  const auto gw = probe.weights_of(std::span<const T>(g));
  return std::vector<double>(gw.begin(), gw.end());
}

// Explicit weight Hessian H_ij = d2L / dw_i dw_j built column by column from
// central differences of analytic gradients, then symmetrised.
template <class T>
Eigen::MatrixXd explicit_hessian(const Network<T>& net, const Batch<T>& batch, double h = 1e-5) {
  const auto w0 = net.flatten_weights();
  std::vector<double> w(w0.begin(), w0.end());
  const std::size_t n = w.size();
  Eigen::MatrixXd H(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double saved = w[j];
    w[j] = saved + h;
    const auto gp = weight_gradient(net, batch, w);
    w[j] = saved - h;
    const auto gm = weight_gradient(net, batch, w);
    w[j] = saved;
    for (std::size_t i = 0; i < n; ++i) H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (gp[i] - gm[i]) / (2 * h);
  }
  return 0.5 * (H + H.transpose());
}

struct Eigenpair {
  double value;
  Eigen::VectorXd vector;
};

// Eigenpair with the largest |eigenvalue|.
inline Eigenpair dominant_eigenpair(const Eigen::MatrixXd& H) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(H);
  const auto& values = solver.eigenvalues();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (std::abs(values(i)) > std::abs(values(best))) best = i;
  }
  return {values(best), solver.eigenvectors().col(best)};
}

// Separable 2-D-ish toy classification data: class c centred at c along each axis.
template <class T = double>
Batch<T> toy_batch(std::size_t n, std::size_t features, std::size_t classes, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.6);
  std::vector<T> x(n * features);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % classes);
    for (std::size_t f = 0; f < features; ++f) {
      const double centre = ((y[i] + f) % classes) == 0 ? 1.0 : -0.5;
      x[i * features + f] = static_cast<T>(centre + noise(rng));
    }
  }
  return Batch<T>{Tensor<T>({n, features}, std::move(x)), std::move(y)};
}

}  // namespace camp::oracle
