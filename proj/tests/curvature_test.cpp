#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "camp/curvature.hpp"
#include "camp/sgd.hpp"
#include "oracles.hpp"

using namespace camp;

namespace {

// L(w) = 1/2 w^T A w, so grad = A w and H = A.
struct QuadraticField {
  Eigen::MatrixXd A;
  std::size_t dimension() const { return static_cast<std::size_t>(A.rows()); }
  std::vector<double> gradient(std::span<const double> x) const {
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::VectorXd g = A * w;
    return std::vector<double>(g.data(), g.data() + g.size());
  }
};

QuadraticField diagonal(std::initializer_list<double> d) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(d.size()));
  Eigen::Index i = 0;
  for (double x : d) v(i++) = x;
  return {v.asDiagonal()};
}

static_assert(GradientField<QuadraticField>);
static_assert(GradientField<NetworkLossField<double>>);

Network<double> small_trained_mlp() {
  auto net = make_mlp(3, {4}, 3);
  net.initialize(17);
  train(net, oracle::toy_batch(60, 3, 3, 4), TrainSpec{30, 0.1, 16}, 3);
  return net;
}

}  // namespace

TEST(Hvp, ExactOnQuadratic) {
  const auto f = diagonal({2.0, 1.0});
  const std::vector<double> w = {1.0, 1.0}, v = {1.0, 0.0};
  for (double eps : {0.5, 1e-3, 1e-6, 3.0}) {
    const auto hv = hvp_fd(f, w, v, eps);
    EXPECT_NEAR(hv[0], 2.0, 1e-9) << eps;
    EXPECT_NEAR(hv[1], 0.0, 1e-9) << eps;
  }
  const auto hv = hvp_fd(f, w, v, 0.5);
  EXPECT_EQ(hv[0], 2.0);
  EXPECT_EQ(hv[1], 0.0);
}

TEST(Hvp, LinearInDirection) {
  // The finite-difference step has length eps for any |v|, so scaling v
  // scales the product and kinks further than eps away are never crossed.
  const auto net = small_trained_mlp();
  const auto calib = oracle::toy_batch(40, 3, 3, 9);
  const auto v = rademacher_unit(net.weight_count(), 3);
  std::vector<double> v5 = v;
  for (double& x : v5) x *= 5.0;
  const auto a = hvp_fd(net, calib, v, 1e-3);
  const auto b = hvp_fd(net, calib, v5, 1e-3);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 5.0 * a[i], 1e-9 * (1.0 + std::abs(b[i])));
}

TEST(Hvp, RejectsDegenerateDirectionAndEpsilon) {
  const auto f = diagonal({2.0, 1.0});
  const std::vector<double> w = {1.0, 1.0};
  EXPECT_THROW(hvp_fd(f, w, std::vector<double>{1e-13, 0.0}, 1e-3), UsageError);
  EXPECT_THROW(hvp_fd(f, w, std::vector<double>{1.0, 0.0}, 0.0), UsageError);
  EXPECT_THROW(hvp_fd(f, w, std::vector<double>{1.0}, 1e-3), ShapeError);
}

TEST(Hvp, MatchesExplicitHessianOnTinyMlp) {
  const auto net = small_trained_mlp();
  const auto calib = oracle::toy_batch(40, 3, 3, 9);
  ASSERT_LE(net.parameter_count(), 60u);
  const Eigen::MatrixXd H = oracle::explicit_hessian(net, calib);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> v(net.weight_count());
    for (double& x : v) x = n01(rng);
    const auto w = weights_as_double(net);
    const auto hv = hvp_fd(net, calib, v, default_epsilon(w));
    const Eigen::VectorXd expected = H * Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    const Eigen::VectorXd got = Eigen::Map<const Eigen::VectorXd>(hv.data(), static_cast<Eigen::Index>(hv.size()));
    EXPECT_LE((got - expected).norm() / expected.norm(), 1e-2);
  }
}

TEST(Hvp, LeavesNetworkUntouched) {
  const auto net = small_trained_mlp();
  const Network<double> before = net;
  const auto calib = oracle::toy_batch(20, 3, 3, 1);
  const auto v = rademacher_unit(net.weight_count(), 1);
  (void)hvp_fd(net, calib, v, 1e-3);
  (void)power_iteration(net, calib, CurvatureConfig{}, 4);
  EXPECT_TRUE(net == before);
}

TEST(PowerIteration, RecoversDominantDiagonalDirection) {
  const auto f = diagonal({3.0, 1.0, 0.5});
  const std::vector<double> w = {0.2, -0.1, 0.4};
  const auto probe = power_iteration(f, w, PowerIterationOptions{10, 1e-6, 42, std::nullopt});
  EXPECT_GE(std::abs(probe.v[0]), 0.999);
  EXPECT_NEAR(probe.rayleigh, 3.0, 0.01);
}

TEST(PowerIteration, IdentityIsFixedPoint) {
  const auto f = diagonal({1.0, 1.0, 1.0, 1.0});
  const std::vector<double> w(4, 0.0);
  const auto v0 = rademacher_unit(4, 8);
  const auto probe = power_iteration(f, w, PowerIterationOptions{1, 1e-6, 8, std::nullopt});
  EXPECT_EQ(probe.iterations_run, 1u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(probe.v[i]), std::abs(v0[i]), 1e-9);
  EXPECT_NEAR(probe.rayleigh, 1.0, 1e-9);
  EXPECT_NEAR(std::abs(probe.cosine_trace[0]), 1.0, 1e-12);
}

TEST(PowerIteration, SameSeedSameTrace) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(6, 6);
  const QuadraticField f{A * A.transpose()};
  const std::vector<double> w(6, 0.1);
  const auto a = power_iteration(f, w, PowerIterationOptions{20, 1e-12, 3, std::nullopt});
  const auto b = power_iteration(f, w, PowerIterationOptions{20, 1e-12, 3, std::nullopt});
  EXPECT_EQ(a.cosine_trace, b.cosine_trace);
  EXPECT_EQ(a.v, b.v);
}

TEST(PowerIteration, UnitNormAndBoundedCosines) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(8, 8);
  const QuadraticField f{A + A.transpose()};
  const std::vector<double> w(8, 0.0);
  for (std::size_t iters = 1; iters <= 12; ++iters) {
    const auto probe = power_iteration(f, w, PowerIterationOptions{iters, 1e-15, 1, std::nullopt});
    EXPECT_NEAR(norm2(probe.v), 1.0, 1e-6);
    for (double c : probe.cosine_trace) {
      EXPECT_GE(c, -1.0);
      EXPECT_LE(c, 1.0);
    }
  }
}

TEST(PowerIteration, RayleighNonDecreasingOnPsdQuadratics) {
  for (int trial = 0; trial < 20; ++trial) {
    std::srand(static_cast<unsigned>(trial + 1));
    Eigen::MatrixXd B = Eigen::MatrixXd::Random(10, 10);
    const QuadraticField f{B * B.transpose()};
    const std::vector<double> w(10, 0.3);
    const auto probe = power_iteration(f, w, PowerIterationOptions{30, 1e-14, static_cast<std::uint64_t>(trial), std::nullopt});
    for (std::size_t t = 1; t < probe.rayleigh_trace.size(); ++t) {
      EXPECT_GE(probe.rayleigh_trace[t], probe.rayleigh_trace[t - 1] - 1e-9) << "trial " << trial << " t " << t;
    }
  }
}

TEST(PowerIteration, NegativeDominantEigenvalueTerminates) {
  const auto f = diagonal({-4.0, 1.0, 0.5});
  const std::vector<double> w(3, 0.0);
  const auto probe = power_iteration(f, w, PowerIterationOptions{50, 1e-9, 2, std::nullopt});
  EXPECT_TRUE(probe.converged);
  EXPECT_LT(probe.iterations_run, 50u);
  EXPECT_NEAR(probe.rayleigh, -4.0, 1e-6);
}

TEST(PowerIteration, ZeroCurvatureIsDegenerate) {
  const auto f = diagonal({0.0, 0.0});
  const std::vector<double> w = {1.0, 2.0};
  try {
    (void)power_iteration(f, w, PowerIterationOptions{});
    FAIL() << "expected DegenerateCurvatureError";
  } catch (const DegenerateCurvatureError& e) {
    EXPECT_EQ(e.iteration(), 1u);
  }
}

TEST(PowerIteration, ValidatesOptions) {
  const auto f = diagonal({1.0});
  const std::vector<double> w = {0.0};
  EXPECT_THROW(power_iteration(f, w, PowerIterationOptions{0, 1e-6, 0, std::nullopt}), UsageError);
  EXPECT_THROW(power_iteration(f, w, PowerIterationOptions{5, 1.0, 0, std::nullopt}), UsageError);
}

TEST(PowerIteration, AgreesWithExplicitHessianOnTinyMlp) {
  const auto net = small_trained_mlp();
  const auto calib = oracle::toy_batch(40, 3, 3, 9);
  const auto oracle = oracle::dominant_eigenpair(oracle::explicit_hessian(net, calib));
  const auto probe = power_iteration(net, calib, CurvatureConfig{500, 1e-12, std::nullopt, 512}, 7);
  const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(probe.v.data(), static_cast<Eigen::Index>(probe.v.size()));
  EXPECT_GE(std::abs(v.dot(oracle.vector)), 0.99);
  EXPECT_NEAR(probe.rayleigh, oracle.value, 0.02 * std::abs(oracle.value));
}

TEST(Significance, AbsoluteValuesPerLayer) {
  Network<double> net({1}, {LayerSpec::dense(1, 3)});
  const std::vector<double> v = {0.5, -0.8, 0.1};
  const auto map = significance(std::span<const double>(v), net);
  ASSERT_EQ(map.sigma.size(), 1u);
  EXPECT_EQ(map.sigma[0], (std::vector<double>{0.5, 0.8, 0.1}));
  EXPECT_THROW(significance(std::span<const double>(v.data(), 2), net), ShapeError);
}

TEST(Significance, SquaresSumToOneAndSignInvariant) {
  const auto net = small_trained_mlp();
  const auto calib = oracle::toy_batch(30, 3, 3, 2);
  auto probe = power_iteration(net, calib, CurvatureConfig{}, 11);
  const auto map = significance(probe, net);
  double total = 0.0;
  for (const auto& s : map.sigma)
    for (double x : s) total += x * x;
  EXPECT_NEAR(total, 1.0, 1e-6);
  for (double& x : probe.v) x = -x;
  const auto flipped = significance(probe, net);
  EXPECT_EQ(flipped.sigma, map.sigma);
  ASSERT_EQ(map.layers, net.weighted_layers());
  EXPECT_EQ(map.sigma[0].size(), 12u);
}

TEST(Calibration, FixedSeededSubset) {
  const auto train = oracle::toy_batch(700, 3, 3, 1);
  const auto a = calibration_batch(train, 512, 5);
  const auto b = calibration_batch(train, 512, 5);
  EXPECT_EQ(a.size(), 512u);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(calibration_batch(train, 1000, 5).size(), 700u);
}

TEST(ProbeDump, ContainsSummaries) {
  const auto net = small_trained_mlp();
  const auto probe = power_iteration(net, oracle::toy_batch(30, 3, 3, 2), CurvatureConfig{}, 11);
  const auto j = probe_to_json(probe, net);
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 11u);
  EXPECT_EQ(j.at("layers").size(), 2u);
  EXPECT_EQ(j.at("cosine_trace").size(), probe.iterations_run);
  EXPECT_LE(j["layers"][0]["sigma_min"].get<double>(), j["layers"][0]["sigma_max"].get<double>());
}
