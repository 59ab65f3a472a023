#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "camp/prune.hpp"
#include "camp/sgd.hpp"
#include "oracles.hpp"

using namespace camp;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Sort-and-index reference for the nearest-rank percentile.
double reference_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  std::size_t r = 1;
  while (static_cast<double>(r) * 100.0 < p * static_cast<double>(v.size())) ++r;
  return v[std::min(r, v.size()) - 1];
}

}  // namespace

TEST(Percentile, MedianOfTenth) {
  const std::vector<double> s = {0.3, 0.1, 0.5, 0.2, 0.9, 1.0, 0.4, 0.6, 0.8, 0.7};
  EXPECT_DOUBLE_EQ(percentile_threshold(s, 50), 0.5);
  EXPECT_DOUBLE_EQ(percentile_threshold(s, 100), 1.0);
  EXPECT_DOUBLE_EQ(percentile_threshold(s, 0), 0.1);
  EXPECT_DOUBLE_EQ(percentile_threshold(s, 70), 0.7);
}

TEST(Percentile, MatchesSortAndIndexReference) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    const auto v = random_vector(n, rng, 0.0, 1.0);
    const double p = static_cast<double>(rng() % 101);
    EXPECT_EQ(percentile_threshold(v, p), reference_percentile(v, p)) << "n=" << n << " p=" << p;
  }
}

TEST(Percentile, TiesMakePruningNoOp) {
  const std::vector<double> s(9, 0.25);
  for (double p : {0.0, 30.0, 50.0, 100.0}) {
    const double theta = percentile_threshold(s, p);
    EXPECT_EQ(theta, 0.25);
    EXPECT_TRUE(partition(s, theta).less.empty());
  }
}

TEST(Percentile, RejectsBadInput) {
  EXPECT_THROW(percentile_threshold(std::vector<double>{}, 50), UsageError);
  EXPECT_THROW(percentile_threshold(std::vector<double>{1.0}, 101), UsageError);
  EXPECT_THROW(percentile_threshold(std::vector<double>{1.0}, -1), UsageError);
}

TEST(Partition, OrdersSignificantDescendingAndLessAscending) {
  const std::vector<double> s = {0.9, 0.2, 0.7, 0.1};
  const auto part = partition(s, 0.7);
  EXPECT_EQ(part.significant, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(part.less, (std::vector<std::size_t>{3, 1}));
  EXPECT_TRUE(partition(s, 0.1).less.empty());
}

TEST(Partition, CoversEveryIndexOnRandomVectors) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto v = random_vector(1 + rng() % 64, rng, 0.0, 1.0);
    const double theta = percentile_threshold(v, static_cast<double>(rng() % 101));
    const auto part = partition(v, theta);
    ASSERT_EQ(part.significant.size() + part.less.size(), v.size());
    std::vector<int> seen(v.size(), 0);
    for (std::size_t j : part.significant) {
      ++seen[j];
      EXPECT_GE(v[j], theta);
    }
    for (std::size_t j : part.less) {
      ++seen[j];
      EXPECT_LT(v[j], theta);
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    EXPECT_FALSE(part.significant.empty());
  }
}

TEST(CyclicIndex, FollowsModularRule) {
  EXPECT_EQ(cyclic_index(1, 3), 2u);
  EXPECT_EQ(cyclic_index(2, 3), 3u);
  EXPECT_EQ(cyclic_index(3, 3), 1u);
  EXPECT_EQ(cyclic_index(5, 3), 3u);
  for (std::size_t i = 1; i < 10; ++i) EXPECT_EQ(cyclic_index(i, 1), 1u);
  EXPECT_THROW(cyclic_index(1, 0), UsageError);
  EXPECT_THROW(cyclic_index(0, 2), UsageError);
}

TEST(MergeCyclic, HandTrace) {
  // Layer: S = {w0 = 1.0, w1 = 2.0} (descending sigma), L = {w2, w3, w4} ascending sigma.
  std::vector<double> w = {1.0, 2.0, 0.1, 0.2, 0.3};
  const std::vector<double> sigma = {0.9, 0.8, 0.1, 0.2, 0.3};
  const auto part = partition(sigma, 0.8);
  const auto pairs = merge_cyclic(std::span<double>(w), part);
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0], (Pairing{1, 2, 2, 1}));
  EXPECT_EQ(pairs[1], (Pairing{2, 1, 3, 0}));
  EXPECT_EQ(pairs[2], (Pairing{3, 2, 4, 1}));
  EXPECT_NEAR(w[0], 1.2, 1e-15);
  EXPECT_NEAR(w[1], 2.4, 1e-15);
  EXPECT_EQ(w[2], 0.0);
  EXPECT_EQ(w[3], 0.0);
  EXPECT_EQ(w[4], 0.0);
  EXPECT_NEAR(w[0] + w[1], 3.6, 1e-12);
}

TEST(MergeCyclic, EmptyLessIsIdentity) {
  std::vector<double> w = {0.4, -0.2};
  const auto pairs = merge_cyclic(std::span<double>(w), partition(std::vector<double>{0.5, 0.5}, 0.5));
  EXPECT_TRUE(pairs.empty());
  EXPECT_EQ(w, (std::vector<double>{0.4, -0.2}));
}

TEST(MergeCyclic, ConservesSumOnRandomLayer) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto w = random_vector(257, rng);
    const auto sigma = random_vector(257, rng, 0.0, 1.0);
    double before = 0.0;
    for (double x : w) before += x;  // independent left-to-right sum
    const auto part = partition(sigma, percentile_threshold(sigma, 70));
    merge_cyclic(std::span<double>(w), part);
    double after = 0.0;
    for (double x : w) after += x;
    EXPECT_NEAR(before, after, 1e-6);
    EXPECT_EQ(static_cast<std::size_t>(std::count(w.begin(), w.end(), 0.0)), part.less.size());
  }
}

TEST(MergeCyclic, BalancedInDegree) {
  for (std::size_t s = 1; s <= 20; ++s) {
    for (std::size_t l = 1; l <= 40; ++l) {
      std::vector<double> sigma;
      for (std::size_t j = 0; j < s; ++j) sigma.push_back(1.0 + static_cast<double>(j));
      for (std::size_t j = 0; j < l; ++j) sigma.push_back(0.001 * static_cast<double>(j + 1));
      std::vector<double> w(s + l, 1.0);
      const auto pairs = merge_cyclic(std::span<double>(w), partition(sigma, 1.0));
      std::vector<std::size_t> degree(s, 0);
      for (const auto& pr : pairs) ++degree[pr.sig_position - 1];
      const auto [mn, mx] = std::minmax_element(degree.begin(), degree.end());
      EXPECT_LE(*mx - *mn, 1u);
      EXPECT_EQ(*mn, l / s);
    }
  }
}

TEST(MergeRandom, SeededAndConserving) {
  std::mt19937_64 gen(4);
  const auto sigma = random_vector(100, gen, 0.0, 1.0);
  const auto base = random_vector(100, gen);
  const auto part = partition(sigma, percentile_threshold(sigma, 60));
  auto a = base, b = base;
  std::mt19937_64 r1(7), r2(7);
  const auto pa = merge_random(std::span<double>(a), part, r1);
  const auto pb = merge_random(std::span<double>(b), part, r2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(pa, pb);
  double sa = 0.0, s0 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    s0 += base[i];
  }
  EXPECT_NEAR(sa, s0, 1e-9);
}

TEST(Mask, ZerosExactlyTheLessIndices) {
  Partition part;
  part.significant = {0, 1};
  part.less = {2, 3, 4};
  const std::vector<Partition> parts = {part};
  const auto mask = build_mask(parts);
  EXPECT_EQ(mask.values, (std::vector<std::uint8_t>{1, 1, 0, 0, 0}));
  EXPECT_DOUBLE_EQ(mask.sparsity, 0.6);
  Partition all_less;
  all_less.less = {0, 1};
  const std::vector<Partition> bad = {all_less};
  EXPECT_THROW(build_mask(bad), UsageError);
}

TEST(Mask, SparsityTracksPercentile) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 500;
    const double p = static_cast<double>(rng() % 101);
    const auto sigma = random_vector(n, rng, 0.0, 1.0);
    const std::vector<Partition> parts = {partition(sigma, percentile_threshold(sigma, p))};
    const auto mask = build_mask(parts);
    EXPECT_LE(std::abs(mask.sparsity - p / 100.0), 1.0 / static_cast<double>(n) + 1e-12) << "n=" << n << " p=" << p;
  }
}

namespace {

Network<double> trained_net() {
  auto net = make_mlp(4, {10}, 3);
  net.initialize(3);
  train(net, oracle::toy_batch(90, 4, 3, 1), TrainSpec{20, 0.1, 16}, 2);
  return net;
}

}  // namespace

TEST(Prune, MagnitudeKeepsWeightsAtOrAboveTheta) {
  Network<double> net({1}, {LayerSpec::dense(1, 3)});
  net.unflatten_params(std::vector<double>{0.05, -0.5, 0.2, 0.0, 0.0, 0.0});
  const auto calib = oracle::toy_batch(3, 1, 3, 0);
  // p = 50 on |w| = (0.05, 0.5, 0.2): r = 2, theta = 0.2.
  const auto r = prune(net, Strategy::magnitude, 50, calib, CurvatureConfig{}, 1);
  EXPECT_DOUBLE_EQ(r.report.layers[0].theta, 0.2);
  EXPECT_EQ(r.net.layer(0).weight.values()[0], 0.0);
  EXPECT_EQ(r.net.layer(0).weight.values()[1], -0.5);
  EXPECT_EQ(r.net.layer(0).weight.values()[2], 0.2);
  EXPECT_EQ(r.mask.values, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(Prune, CampHiveAndHmpShareMaskButNotValues) {
  const auto net = trained_net();
  const auto calib = oracle::toy_batch(60, 4, 3, 7);
  const auto probe = power_iteration(net, calib, CurvatureConfig{}, 5);
  const auto camp = prune(net, Strategy::camp_hive, 50, probe, 5);
  const auto hmp = prune(net, Strategy::hmp, 50, probe, 5);
  EXPECT_EQ(camp.mask.values, hmp.mask.values);
  EXPECT_GT(camp.mask.zeros(), 0u);
  EXPECT_NE(camp.net.flatten_weights(), hmp.net.flatten_weights());
  // The full entry point reaches the same result from the same seed.
  const auto again = prune(net, Strategy::camp_hive, 50, calib, CurvatureConfig{}, 5);
  EXPECT_EQ(again.net.flatten_weights(), camp.net.flatten_weights());
}

TEST(Prune, HrpReproducible) {
  const auto net = trained_net();
  const auto calib = oracle::toy_batch(60, 4, 3, 7);
  const auto a = prune(net, Strategy::hrp, 60, calib, CurvatureConfig{}, 9);
  const auto b = prune(net, Strategy::hrp, 60, calib, CurvatureConfig{}, 9);
  EXPECT_TRUE(a.net == b.net);
}

TEST(Prune, ConservationOnlyForMergingStrategies) {
  const auto net = trained_net();
  const auto calib = oracle::toy_batch(60, 4, 3, 7);
  const auto probe = power_iteration(net, calib, CurvatureConfig{}, 5);
  for (Strategy s : {Strategy::camp_hive, Strategy::hrp, Strategy::hmp, Strategy::magnitude}) {
    const auto r = prune(net, s, 50, probe, 5);
    for (std::size_t i = 0; i < r.report.layers.size(); ++i) {
      const auto& row = r.report.layers[i];
      double removed = 0.0;
      for (std::size_t j : r.partitions[i].less) removed += net.layer(net.weighted_layers()[i]).weight[j];
      if (s == Strategy::camp_hive || s == Strategy::hrp) {
        EXPECT_NEAR(row.weight_sum_before, row.weight_sum_after, 1e-6);
      } else if (std::abs(removed) > 1e-9) {
        EXPECT_NE(row.weight_sum_before, row.weight_sum_after);
        EXPECT_NEAR(row.weight_sum_before - row.weight_sum_after, removed, 1e-9);
      }
    }
  }
}

TEST(Prune, MaskedCoordinatesAreZero) {
  const auto net = trained_net();
  const auto calib = oracle::toy_batch(60, 4, 3, 7);
  for (Strategy s : {Strategy::camp_hive, Strategy::hrp, Strategy::hmp, Strategy::magnitude}) {
    for (double p : {0.0, 30.0, 80.0, 100.0}) {
      const auto r = prune(net, s, p, calib, CurvatureConfig{}, 3);
      const auto w = r.net.flatten_weights();
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (!r.mask.values[j]) {
          EXPECT_EQ(w[j], 0.0);
        }
      }
      for (std::size_t i = 0; i < r.report.layers.size(); ++i) {
        EXPECT_LE(std::abs(r.report.layers[i].sparsity - p / 100.0),
                  1.0 / static_cast<double>(r.report.layers[i].n) + 1e-12);
      }
    }
  }
}

TEST(Prune, ZeroPercentIsNoOp) {
  const auto net = trained_net();
  const auto r = prune(net, Strategy::camp_hive, 0, oracle::toy_batch(30, 4, 3, 2), CurvatureConfig{}, 1);
  EXPECT_TRUE(r.net == net);
  EXPECT_EQ(r.mask.zeros(), 0u);
}

TEST(Prune, RejectsBadArguments) {
  const auto net = trained_net();
  const auto calib = oracle::toy_batch(30, 4, 3, 2);
  EXPECT_THROW(prune(net, Strategy::hmp, 120, calib, CurvatureConfig{}, 1), UsageError);
  EXPECT_THROW(parse_strategy("random"), UsageError);
  EXPECT_EQ(parse_strategy("camp-hive"), Strategy::camp_hive);
}

TEST(Prune, ReportSerialises) {
  const auto net = trained_net();
  const auto r = prune(net, Strategy::camp_hive, 40, oracle::toy_batch(30, 4, 3, 2), CurvatureConfig{}, 1);
  const auto j = to_json(r.report);
  EXPECT_EQ(j["strategy"], "camp-hive");
  EXPECT_EQ(j["layers"].size(), 2u);
  for (const char* key : {"n_k", "theta", "s", "l", "sparsity", "weight_sum_before", "weight_sum_after"}) {
    EXPECT_TRUE(j["layers"][0].contains(key)) << key;
  }
  EXPECT_DOUBLE_EQ(j["total_sparsity"].get<double>(), r.mask.sparsity);
}
