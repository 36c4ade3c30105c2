#include <gtest/gtest.h>

#include <chrono>
#include <random>

#include "humas/lsdd.hpp"

using namespace humas;

namespace {

std::vector<Point2> gaussian(std::size_t n, double mx, double my, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, sd);
  std::vector<Point2> out(n);
  for (auto& p : out) p = {mx + z(rng), my + z(rng)};
  return out;
}

// midpoint-rule integral of (p - q)^2 for two isotropic unit Gaussians
double grid_l2_oracle(double ax, double ay, double bx, double by) {
  const double lo = std::min({ax, ay, bx, by}) - 8, hi = std::max({ax, ay, bx, by}) + 8, step = 0.02;
  const double c = 1.0 / (2.0 * std::numbers::pi);
  double acc = 0;
  for (double x = lo + step / 2; x < hi; x += step)
    for (double y = lo + step / 2; y < hi; y += step) {
      const double p = c * std::exp(-0.5 * ((x - ax) * (x - ax) + (y - ay) * (y - ay)));
      const double q = c * std::exp(-0.5 * ((x - bx) * (x - bx) + (y - by) * (y - by)));
      acc += (p - q) * (p - q);
    }
  return acc * step * step;
}

}  // namespace

TEST(Lsdd, IdenticalSetsGiveExactZero) {
  auto a = gaussian(150, 0, 0, 1);
  EXPECT_EQ(lsdd_estimate(a, a), 0.0);
  auto b = a;
  std::reverse(b.begin(), b.end());
  EXPECT_EQ(lsdd_estimate(a, b), 0.0);
}

TEST(Lsdd, SymmetricUnderSwap) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto a = gaussian(120, 0, 0, 2 * s + 1);
    auto b = gaussian(90, 0.5, 0.3, 2 * s + 2, 1.3);
    LsddConfig cfg;
    cfg.center_seed = s;
    EXPECT_EQ(lsdd_estimate(a, b, cfg), lsdd_estimate(b, a, cfg));
  }
}

TEST(Lsdd, SubsampledCentersStillSymmetric) {
  auto a = gaussian(300, 0, 0, 5);
  auto b = gaussian(300, 1, 0, 6);
  LsddConfig cfg;
  cfg.center_seed = 77;
  EXPECT_EQ(lsdd_estimate(a, b, cfg), lsdd_estimate(b, a, cfg));
}

TEST(Lsdd, SeparatedGaussiansMatchGridIntegral) {
  const double oracle = grid_l2_oracle(0, 0, 10, 10);
  EXPECT_NEAR(oracle, 1.0 / (2.0 * std::numbers::pi), 1e-4);
  LsddConfig cfg;
  cfg.standardize = false;
  auto u = gaussian(500, 0, 0, 10);
  auto v = gaussian(500, 10, 10, 11);
  const double est = lsdd_estimate(u, v, cfg);
  EXPECT_NEAR(est, oracle, 0.25 * oracle);
}

TEST(Lsdd, ShiftedGaussiansMatchGridIntegral) {
  // overlapping case: mean shift of 2 along x
  const double oracle = grid_l2_oracle(0, 0, 2, 0);
  LsddConfig cfg;
  cfg.standardize = false;
  auto u = gaussian(500, 0, 0, 12);
  auto v = gaussian(500, 2, 0, 13);
  EXPECT_NEAR(lsdd_estimate(u, v, cfg), oracle, 0.35 * oracle);
}

TEST(Lsdd, SameDistributionIsSmall) {
  LsddConfig cfg;
  cfg.standardize = false;
  const double sep = lsdd_estimate(gaussian(500, 0, 0, 20), gaussian(500, 10, 10, 21), cfg);
  const double same = lsdd_estimate(gaussian(500, 0, 0, 22), gaussian(500, 0, 0, 23), cfg);
  EXPECT_LE(same, 0.1 * sep);
}

TEST(Lsdd, RejectsTooFewPoints) {
  auto a = gaussian(19, 0, 0, 1);
  auto b = gaussian(50, 0, 0, 2);
  EXPECT_THROW(lsdd_estimate(a, b), Error);
  LsddConfig cfg;
  cfg.lambda_grid.clear();
  EXPECT_THROW(lsdd_estimate(b, b, cfg), Error);
}

TEST(Lsdd, ScaleInvariantWhenStandardized) {
  auto a = gaussian(100, 0, 0, 30);
  auto b = gaussian(100, 0.8, 0, 31);
  auto a2 = a, b2 = b;
  for (auto* s : {&a2, &b2})
    for (auto& p : *s) p = {p.x * 1000 + 5, p.y * 0.001};
  EXPECT_NEAR(lsdd_estimate(a, b), lsdd_estimate(a2, b2), 1e-8);
}

TEST(Permutation, NearestRankDefinition) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = 100 - i;  // 1..100 reversed
  EXPECT_EQ(LsddTest::nearest_rank(v, 0.95), 95.0);
  EXPECT_EQ(LsddTest::nearest_rank(v, 0.99), 99.0);
  EXPECT_EQ(LsddTest::nearest_rank(v, 1.0), 100.0);
  EXPECT_EQ(LsddTest::nearest_rank({3.0}, 0.5), 3.0);
}

TEST(Permutation, ThresholdIsOrderStatisticOfScores) {
  auto a = gaussian(80, 0, 0, 40);
  auto b = gaussian(80, 0, 0, 41);
  LsddTest t(a, b, LsddConfig{});
  auto scores = t.permutation_scores(100, 9);
  std::sort(scores.begin(), scores.end());
  EXPECT_EQ(t.threshold(0.05, 100, 9), scores[94]);
  EXPECT_GE(t.threshold(0.01, 100, 9), t.threshold(0.05, 100, 9));
  EXPECT_EQ(permutation_threshold(a, b, LsddConfig{}, 0.05, 100, 9), scores[94]);
}

TEST(Permutation, DeterministicGivenSeed) {
  auto a = gaussian(60, 0, 0, 50);
  auto b = gaussian(70, 0, 0, 51);
  LsddTest t(a, b, LsddConfig{});
  EXPECT_EQ(t.permutation_scores(20, 3), t.permutation_scores(20, 3));
  EXPECT_NE(t.permutation_scores(20, 3), t.permutation_scores(20, 4));
}

TEST(Permutation, ShiftExceedsThreshold) {
  auto a = gaussian(180, 0, 0, 60);
  auto b = gaussian(180, 1.5, 0, 61);
  LsddTest t(a, b, LsddConfig{});
  EXPECT_GT(t.statistic(), t.threshold(0.05, 100, 1));
}

TEST(Permutation, SingleCallUnderOneSecond) {
  auto a = gaussian(180, 0, 0, 70);
  auto b = gaussian(180, 0.2, 0, 71);
  const auto t0 = std::chrono::steady_clock::now();
  LsddTest t(a, b, LsddConfig{});
  t.threshold(0.05, 100, 1);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(s, 1.0);
}
