#include <gtest/gtest.h>

#include <random>

#include "humas/pattern.hpp"

using namespace humas;

namespace {

// global OLS line SSE, computed independently of the learner
double global_line_sse(const std::vector<XY>& pts) {
  long double n = 0, sx = 0, sy = 0;
  for (const auto& p : pts) n += 1, sx += p.x, sy += p.y;
  const long double mx = sx / n, my = sy / n;
  long double sxx = 0, sxy = 0;
  for (const auto& p : pts) sxx += (p.x - mx) * (p.x - mx), sxy += (p.x - mx) * (p.y - my);
  const long double a = sxy / sxx, b = my - a * mx;
  long double s = 0;
  for (const auto& p : pts) {
    const long double r = p.y - (a * p.x + b);
    s += r * r;
  }
  return static_cast<double>(s);
}

std::vector<XY> two_regime(std::uint64_t seed, std::size_t n = 1200) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(200, 2000);
  std::normal_distribution<double> z(0, 1);
  std::vector<XY> pts(n);
  for (auto& p : pts) {
    p.x = ux(rng);
    const double y = p.x < 1000 ? 3 * p.x : 3000 + 5 * (p.x - 1000);
    p.y = y * (1 + 0.01 * z(rng));
  }
  return pts;
}

}  // namespace

TEST(Fit, ExactLineIsOneSegment) {
  std::vector<XY> pts;
  for (int i = 0; i < 500; ++i) {
    const double x = 100 + 7.3 * i;
    pts.push_back({x, 2 * x + 100});
  }
  auto m = fit_pattern(pts);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_NEAR(m.segments[0].alpha, 2, 1e-6);
  EXPECT_NEAR(m.segments[0].beta, 100, 1e-3);
  EXPECT_EQ(m.splits.front(), 100);
  EXPECT_EQ(m.splits.back(), 100 + 7.3 * 499);
}

TEST(Fit, RecoversTwoRegimes) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto pts = two_regime(seed);
    auto m = fit_pattern(pts);
    ASSERT_GE(m.size(), 2u);
    bool near_break = false;
    for (std::size_t l = 1; l + 1 < m.splits.size(); ++l)
      near_break |= std::abs(m.splits[l] - 1000) <= 100;
    EXPECT_TRUE(near_break) << "seed " << seed;
    for (std::size_t l = 0; l < m.size(); ++l) {
      const double lo = m.splits[l], hi = m.splits[l + 1];
      if (hi <= 1000) EXPECT_NEAR(m.segments[l].alpha, 3, 0.15);
      if (lo >= 1000) EXPECT_NEAR(m.segments[l].alpha, 5, 0.25);
    }
  }
}

TEST(Fit, SseNoWorseThanGlobalLine) {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1000);
    std::vector<XY> pts(300);
    for (auto& p : pts) p = {u(rng), std::sin(p.x / 100) * 50 + u(rng) * 0.2 + 100};
    for (auto& p : pts) p.y = std::sin(p.x / 100) * 50 + 100 + u(rng) * 0.05;
    auto m = fit_pattern(pts);
    EXPECT_LE(pattern_sse(m, pts), global_line_sse(pts) * (1 + 1e-9));
    EXPECT_LE(m.size(), 16u);
    EXPECT_GE(m.sample_count, m.size() * 32);
    for (std::size_t l = 1; l < m.splits.size(); ++l) EXPECT_LT(m.splits[l - 1], m.splits[l]);
  }
}

TEST(Fit, RespectsMaxSegmentsAndMinLeaf) {
  std::vector<XY> pts;
  for (int i = 0; i < 2000; ++i) pts.push_back({static_cast<double>(i), std::fmod(i, 100.0) * 3});
  PatternConfig cfg;
  cfg.max_segments = 4;
  auto m = fit_pattern(pts, cfg);
  EXPECT_LE(m.size(), 4u);
  cfg.max_segments = 16;
  cfg.min_leaf = 200;
  auto m2 = fit_pattern(pts, cfg);
  EXPECT_LE(m2.size(), 10u);
}

TEST(Fit, DeterministicRefit) {
  auto pts = two_regime(7);
  auto a = fit_pattern(pts), b = fit_pattern(pts);
  EXPECT_EQ(a.splits, b.splits);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t l = 0; l < a.size(); ++l) {
    EXPECT_EQ(a.segments[l].alpha, b.segments[l].alpha);
    EXPECT_EQ(a.segments[l].beta, b.segments[l].beta);
  }
}

TEST(Fit, Errors) {
  std::vector<XY> few(63, XY{1, 1});
  EXPECT_THROW(fit_pattern(few), Error);
  std::vector<XY> flat(100, XY{5, 0});
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i].y = static_cast<double>(i);
  auto m = fit_pattern(flat);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.segments[0].alpha, 0.0);
  EXPECT_DOUBLE_EQ(m.segments[0].beta, 49.5);
}

TEST(Predict, Examples) {
  PiecewisePattern m;
  m.splits = {0, 1000};
  m.segments = {{2, 100}};
  EXPECT_EQ(predict(m, 500), 1100);
  m.segments = {{-1, 10}};
  EXPECT_EQ(predict(m, 100), 0);
}

TEST(Predict, HalfOpenIntervalsAndExtrapolation) {
  PiecewisePattern m;
  m.splits = {0, 10, 20};
  m.segments = {{1, 0}, {2, 0}};
  EXPECT_EQ(predict(m, 9.999), 9.999);
  EXPECT_EQ(predict(m, 10), 20);  // right segment on the split
  EXPECT_EQ(predict(m, 20), 40);  // last interval closed
  EXPECT_EQ(predict(m, -5), 0);   // first segment, floored
  EXPECT_EQ(predict(m, 30), 60);  // last segment extrapolated
  PiecewisePattern empty;
  EXPECT_THROW(predict(empty, 1), Error);
}

TEST(PatternJson, Shape) {
  PiecewisePattern m;
  m.splits = {0, 10};
  m.segments = {{1.5, 2}};
  m.sample_count = 64;
  auto j = pattern_json("svc", m);
  EXPECT_EQ(j["service_id"], "svc");
  EXPECT_EQ(j["segments"][0]["alpha"], 1.5);
  EXPECT_EQ(j["trained_on"]["sample_count"], 64);
}
