#include <gtest/gtest.h>

#include <random>

#include "camp/flops.hpp"
#include "camp/prune.hpp"

using namespace camp;

TEST(Flops, ConvFormula) {
  EXPECT_EQ(conv2d_flops(8, 8, 4, 3, 3, 3), 13824u);
  EXPECT_EQ(conv2d_flops(1, 1, 1, 1, 1, 1), 2u);
  EXPECT_THROW(conv2d_flops(0, 1, 1, 1, 1, 1), UsageError);
  EXPECT_THROW(conv2d_flops(1, 1, 1, -3, 1, 1), UsageError);
}

TEST(Flops, DenseFormula) {
  EXPECT_EQ(dense_flops(128, 10), 2560u);
  EXPECT_EQ(dense_flops(1, 1), 2u);
  EXPECT_EQ(dense_flops(784, 128), 200704u);
  EXPECT_THROW(dense_flops(0, 3), UsageError);
}

TEST(Flops, TinyConvFirstLayerFromShapeInference) {
  const auto net = make_tinyconv<double>({1, 28, 28}, 10);
  // same padding keeps 28x28; 2 * 28 * 28 * 8 * (3 * 3 * 1)
  EXPECT_EQ(layer_flops(net, 0), 112896u);
  EXPECT_EQ(layer_flops(net, 1), 0u);
  EXPECT_EQ(layer_flops(net, 2), 0u);
  EXPECT_EQ(layer_flops(net, 6), 0u);
}

TEST(Ledger, AdditiveAndDenseWithoutMask) {
  const auto net = make_tinyconv<double>({1, 28, 28}, 10);
  const auto l = ledger(net);
  std::uint64_t total = 0;
  for (const auto& row : l.layers) {
    total += row.dense_flops;
    EXPECT_EQ(row.effective_flops, static_cast<double>(row.dense_flops));
  }
  EXPECT_EQ(total, l.dense_total);
  EXPECT_EQ(l.reduction_pct, 0.0);
}

TEST(Ledger, AllOnesMaskHasNoReduction) {
  const auto net = make_mlp(20, {16}, 4);
  const std::vector<std::uint8_t> ones(net.weight_count(), 1);
  EXPECT_EQ(ledger(net, std::span<const std::uint8_t>(ones)).reduction_pct, 0.0);
  const std::vector<std::uint8_t> short_mask(3, 1);
  EXPECT_THROW(ledger(net, std::span<const std::uint8_t>(short_mask)), ShapeError);
}

TEST(Ledger, HalfSparsityHalvesFlops) {
  const auto net = make_mlp(21, {13}, 5);
  std::vector<std::uint8_t> mask(net.weight_count(), 1);
  for (std::size_t k : net.weighted_layers()) {
    const std::size_t n = net.layer(k).weight.size();
    for (std::size_t j = 0; j < n / 2; ++j) mask[net.weight_offset(k) + j] = 0;
  }
  const auto l = ledger(net, std::span<const std::uint8_t>(mask));
  double expected_effective = 0.0;
  for (std::size_t k : net.weighted_layers()) {
    const std::size_t n = net.layer(k).weight.size();
    expected_effective += static_cast<double>(layer_flops(net, k)) * static_cast<double>(n - n / 2) / static_cast<double>(n);
  }
  EXPECT_NEAR(l.effective_total, expected_effective, 1e-9);
  EXPECT_NEAR(l.reduction_pct, 50.0, 100.0 / 65.0);
  for (const auto& row : l.layers) EXPECT_LE(row.effective_flops, static_cast<double>(row.dense_flops));
}

TEST(Ledger, BudgetCheckFollowsPruneLevel) {
  auto net = make_mlp(30, {20}, 6);
  net.initialize(2);
  const double budget = 0.5 * static_cast<double>(ledger(net).dense_total);
  auto run = [&](double p) {
    const auto r = prune_with_scores(net, Strategy::magnitude, p, magnitude_scores(net), 1);
    return within_budget(ledger(r.net, std::span<const std::uint8_t>(r.mask.values)), budget);
  };
  EXPECT_TRUE(run(60));
  EXPECT_FALSE(run(30));
}

TEST(Ledger, ReductionMonotoneInP) {
  auto net = make_mlp(25, {17}, 4);
  net.initialize(8);
  double last = -1.0;
  for (int p = 0; p <= 100; p += 5) {
    const auto r = prune_with_scores(net, Strategy::magnitude, p, magnitude_scores(net), 1);
    const double red = ledger(r.net, std::span<const std::uint8_t>(r.mask.values)).reduction_pct;
    EXPECT_GE(red, last);
    last = red;
  }
}

TEST(Ledger, SerialisesRowsAndTotals) {
  const auto j = to_json(ledger(make_mlp(784, {128}, 10)));
  EXPECT_EQ(j["dense_total"].get<std::uint64_t>(), 200704u + 2560u);
  EXPECT_EQ(j["layers"].size(), 3u);
}
