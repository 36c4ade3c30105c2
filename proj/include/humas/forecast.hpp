#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "humas/common.hpp"

namespace humas {

enum class ForecastMethod { kSeasonalNaiveTrend, kLastValue, kOracle };

inline ForecastMethod parse_forecast_method(const std::string& s) {
  if (s == "seasonal_naive_trend") return ForecastMethod::kSeasonalNaiveTrend;
  if (s == "last_value") return ForecastMethod::kLastValue;
  if (s == "oracle") return ForecastMethod::kOracle;
  throw Error("unknown forecaster.method '" + s + "'");
}

inline std::string to_string(ForecastMethod m) {
  switch (m) {
    case ForecastMethod::kSeasonalNaiveTrend: return "seasonal_naive_trend";
    case ForecastMethod::kLastValue: return "last_value";
    case ForecastMethod::kOracle: return "oracle";
  }
  return "?";
}

/// history holds one value per minute ending just before now; NaN marks a missing
/// minute. `future` is only read by the oracle method.
struct ForecastRequest {
  std::span<const double> history;
  Minute horizon = 60;
  std::span<const double> future;
};

struct ForecastParams {
  Minute season = kMinutesPerDay;
  Minute last_value_window = 60;
  double trend_min = 0.8;
  double trend_max = 1.25;
};

namespace detail {

inline double nan_mean(std::span<const double> v) {
  double s = 0;
  std::size_t c = 0;
  for (double x : v)
    if (!std::isnan(x)) s += x, ++c;
  return c ? s / static_cast<double>(c) : std::numeric_limits<double>::quiet_NaN();
}

inline double nan_max(std::span<const double> v) {
  double m = std::numeric_limits<double>::quiet_NaN();
  for (double x : v)
    if (!std::isnan(x) && (std::isnan(m) || x > m)) m = x;
  return m;
}

}  // namespace detail

inline double forecast_last_value(const ForecastRequest& req, const ForecastParams& p = {}) {
  const auto& h = req.history;
  if (h.empty()) throw Error("forecast: empty history");
  const auto w = std::min<std::size_t>(h.size(), static_cast<std::size_t>(p.last_value_window));
  double m = detail::nan_max(h.subspan(h.size() - w));
  if (std::isnan(m)) m = detail::nan_max(h);
  if (std::isnan(m)) throw Error("forecast: history has no valid values");
  return std::max(m, 0.0);
}

/// Maximum predicted workload over [now, now + horizon).
inline double forecast_max(const ForecastRequest& req, ForecastMethod method, const ForecastParams& p = {}) {
  if (req.horizon < 1) throw Error("forecast: horizon must be >= 1");
  if (req.history.empty()) throw Error("forecast: empty history");
  switch (method) {
    case ForecastMethod::kOracle: {
      const auto n = std::min<std::size_t>(req.future.size(), static_cast<std::size_t>(req.horizon));
      const double m = detail::nan_max(req.future.subspan(0, n));
      if (std::isnan(m)) throw Error("forecast: oracle has no future values");
      return std::max(m, 0.0);
    }
    case ForecastMethod::kLastValue:
      return forecast_last_value(req, p);
    case ForecastMethod::kSeasonalNaiveTrend: {
      const auto& h = req.history;
      const auto season = static_cast<std::size_t>(p.season);
      if (h.size() < 2 * season) return forecast_last_value(req, p);
      const double last = detail::nan_mean(h.subspan(h.size() - season, season));
      const double prior = detail::nan_mean(h.subspan(h.size() - 2 * season, season));
      double g = 1.0;
      if (!std::isnan(last) && !std::isnan(prior) && prior > 0) g = std::clamp(last / prior, p.trend_min, p.trend_max);
      double m = std::numeric_limits<double>::quiet_NaN();
      for (Minute u = 0; u < req.horizon; ++u) {
        // X(now + u - season) sits at history index size - season + u
        const auto k = h.size() - season + static_cast<std::size_t>(u % p.season);
        const double v = h[k] * g;
        if (!std::isnan(v) && (std::isnan(m) || v > m)) m = v;
      }
      if (std::isnan(m)) return forecast_last_value(req, p);
      return std::max(m, 0.0);
    }
  }
  throw Error("forecast: unknown method");
}

}  // namespace humas
