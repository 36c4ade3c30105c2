#include <gtest/gtest.h>

#include <cmath>

#include "humas/forecast.hpp"
#include "humas/normalizer.hpp"
#include "humas/synth.hpp"

using namespace humas;

namespace {

std::vector<double> periodic(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = 1000 + 300 * std::sin(2 * std::numbers::pi * static_cast<double>(i % 1440) / 1440.0) + static_cast<double>((i % 1440) % 7);
  return v;
}

double true_max(const std::vector<double>& v, std::size_t from, std::size_t len) {
  return *std::max_element(v.begin() + static_cast<std::ptrdiff_t>(from),
                           v.begin() + static_cast<std::ptrdiff_t>(from + len));
}

}  // namespace

TEST(Forecast, ParseMethod) {
  EXPECT_EQ(parse_forecast_method("seasonal_naive_trend"), ForecastMethod::kSeasonalNaiveTrend);
  EXPECT_EQ(to_string(ForecastMethod::kOracle), "oracle");
  EXPECT_THROW(parse_forecast_method("informer"), Error);
}

TEST(Forecast, PeriodicHistoryIsExact) {
  auto v = periodic(6 * 1440);
  for (std::size_t now : {3 * 1440, 3 * 1440 + 517, 5 * 1440 + 1380}) {
    ForecastRequest req{std::span<const double>(v.data(), now), 60, {}};
    EXPECT_EQ(forecast_max(req, ForecastMethod::kSeasonalNaiveTrend), true_max(v, now, 60));
  }
}

TEST(Forecast, ConstantHistoryEveryMethod) {
  std::vector<double> v(3 * 1440, 500.0);
  ForecastRequest req{std::span<const double>(v.data(), 2 * 1440 + 10), 60,
                      std::span<const double>(v.data() + 2 * 1440 + 10, 60)};
  for (auto m : {ForecastMethod::kSeasonalNaiveTrend, ForecastMethod::kLastValue, ForecastMethod::kOracle})
    EXPECT_EQ(forecast_max(req, m), 500.0);
}

TEST(Forecast, TrendClamped) {
  std::vector<double> v(2 * 1440, 100.0);
  for (std::size_t i = 1440; i < v.size(); ++i) v[i] = 1000.0;  // 10x jump
  ForecastRequest req{v, 60, {}};
  EXPECT_DOUBLE_EQ(forecast_max(req, ForecastMethod::kSeasonalNaiveTrend), 1250.0);
  for (std::size_t i = 1440; i < v.size(); ++i) v[i] = 10.0;
  EXPECT_DOUBLE_EQ(forecast_max(req, ForecastMethod::kSeasonalNaiveTrend), 8.0);
}

TEST(Forecast, ShortHistoryFallsBackToLastValue) {
  std::vector<double> v(2000, 1.0);
  v[1990] = 7.0;
  v[100] = 50.0;
  ForecastRequest req{v, 60, {}};
  EXPECT_EQ(forecast_max(req, ForecastMethod::kSeasonalNaiveTrend), 7.0);
  EXPECT_EQ(forecast_max(req, ForecastMethod::kLastValue), 7.0);
}

TEST(Forecast, HorizonLongerThanSeasonWraps) {
  auto v = periodic(3 * 1440);
  ForecastRequest req{std::span<const double>(v.data(), 2 * 1440), 2000, {}};
  EXPECT_EQ(forecast_max(req, ForecastMethod::kSeasonalNaiveTrend), *std::max_element(v.begin(), v.end()));
}

TEST(Forecast, MissingMinutesIgnored) {
  auto v = periodic(3 * 1440);
  std::vector<double> h(v.begin(), v.begin() + 2 * 1440);
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 1440; i < 1500; ++i) h[i] = nan;
  ForecastRequest req{h, 60, {}};
  const double x = forecast_max(req, ForecastMethod::kSeasonalNaiveTrend);
  EXPECT_FALSE(std::isnan(x));
  std::vector<double> all_nan(100, nan);
  EXPECT_THROW(forecast_max(ForecastRequest{all_nan, 60, {}}, ForecastMethod::kLastValue), Error);
}

TEST(Forecast, InvariantToOlderHistory) {
  auto v = periodic(20 * 1440);
  for (std::size_t i = 0; i < 5 * 1440; ++i) v[i] *= 3;  // older than 14 days from the end
  const std::size_t now = 20 * 1440;
  ForecastRequest full{std::span<const double>(v.data(), now), 60, {}};
  ForecastRequest cut{std::span<const double>(v.data() + now - 14 * 1440, 14 * 1440), 60, {}};
  for (auto m : {ForecastMethod::kSeasonalNaiveTrend, ForecastMethod::kLastValue})
    EXPECT_EQ(forecast_max(full, m), forecast_max(cut, m));
}

TEST(Forecast, Errors) {
  std::vector<double> v(10, 1.0);
  EXPECT_THROW(forecast_max(ForecastRequest{{}, 60, {}}, ForecastMethod::kLastValue), Error);
  EXPECT_THROW(forecast_max(ForecastRequest{v, 0, {}}, ForecastMethod::kLastValue), Error);
  EXPECT_THROW(forecast_max(ForecastRequest{v, 60, {}}, ForecastMethod::kOracle), Error);
}

TEST(Forecast, GeneratorTraceWithinFifteenPercent) {
  GenSpec spec;
  spec.seed = 31;
  spec.days = 10;
  spec.fleet = default_fleet();
  ServiceGenSpec s;
  s.service_id = "s";
  s.base_total_rps = 60000;
  s.daily_amplitude = 0.5;
  s.noise_cv = 0.05;
  s.containers = {{"826X", 40}, {"816X", 10}};
  spec.services.push_back(s);
  auto c = generate(spec);
  auto tot = build_totals(c.traces[0], RedTable::uniform("s", {"826X", "816X"}));
  const auto& x = tot.x;
  int good = 0, epochs = 0;
  for (std::size_t now = 2 * 1440; now + 60 <= x.size(); now += 60) {
    ForecastRequest req{std::span<const double>(x.data(), now), 60, {}};
    const double est = forecast_max(req, ForecastMethod::kSeasonalNaiveTrend);
    const double truth = true_max(x, now, 60);
    ++epochs;
    good += std::abs(est - truth) / truth <= 0.15;
  }
  EXPECT_GE(static_cast<double>(good) / epochs, 0.90);
}
