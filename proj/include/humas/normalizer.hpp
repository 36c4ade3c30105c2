#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "humas/common.hpp"
#include "humas/red_table.hpp"
#include "humas/trace.hpp"

namespace humas {

struct NormalizerConfig {
  double rps_floor = 1.0;
  std::int64_t min_samples = 60;
  double red_min = 0.25;
  double red_max = 4.0;
  bool workload_weighted = false;  // weight per-timestamp ratios by total RPS
};

/// RUE = usage / rps. nullopt when rps is at or below the floor (low-load sample).
inline std::optional<double> compute_rue(double usage_mean, double rps_mean, double rps_floor = 1.0) {
  if (!(rps_mean > rps_floor)) return std::nullopt;
  return usage_mean / rps_mean;
}

inline double normalize_usage(double usage_mean, double red_j) {
  if (!(red_j > 0)) throw Error("normalize_usage: red must be positive");
  return usage_mean / red_j;
}

/// RED factors of every type of `trace` over sample indices [from, to).
inline RedTable estimate_red_indices(const ServiceTrace& trace, const std::string& standard, std::size_t from,
                                     std::size_t to, const NormalizerConfig& cfg = {}) {
  to = std::min(to, trace.length);
  from = std::min(from, to);
  RedTable table;
  const TypeSeries* std_series = trace.type(standard);
  const Minute from_ts = trace.ts_at(from), to_ts = trace.ts_at(to);

  auto rue_at = [&](const TypeSeries& s, std::size_t i) -> std::optional<double> {
    if (!s.has(i) || s.containers[i] == 0) return std::nullopt;
    return compute_rue(s.usage_per_container[i], s.rps_per_container[i], cfg.rps_floor);
  };

  std::int64_t std_count = 0;
  if (std_series)
    for (std::size_t i = from; i < to; ++i) std_count += rue_at(*std_series, i).has_value() ? 1 : 0;

  for (const auto& s : trace.types) {
    RedEntry e{trace.service_id, s.machine_type, 1.0, 0, from_ts, to_ts, false};
    if (s.machine_type == standard) {
      e.sample_count = std_count;
      table.upsert(std::move(e));
      continue;
    }
    double sum = 0.0, wsum = 0.0;
    std::int64_t count = 0;
    if (std_series) {
      for (std::size_t i = from; i < to; ++i) {
        auto rj = rue_at(s, i);
        if (!rj) continue;
        auto rs = rue_at(*std_series, i);
        if (!rs || !(*rs > 0)) continue;
        double w = 1.0;
        if (cfg.workload_weighted) {
          w = 0.0;
          for (const auto& t : trace.types)
            if (t.has(i)) w += static_cast<double>(t.containers[i]) * t.rps_per_container[i];
        }
        sum += w * (*rj / *rs);
        wsum += w;
        ++count;
      }
    }
    e.sample_count = count;
    if (count < cfg.min_samples || !(wsum > 0)) {
      e.low_confidence = true;
      e.red = 1.0;
      log::warn("RED " + trace.service_id + "/" + s.machine_type + ": " + std::to_string(count) +
                " co-observed samples, defaulting to 1.0");
    } else {
      double r = sum / wsum;
      if (r < cfg.red_min || r > cfg.red_max) {
        log::warn("RED " + trace.service_id + "/" + s.machine_type + " = " + fmt_g9(r) + " clamped");
        r = std::clamp(r, cfg.red_min, cfg.red_max);
      }
      e.red = r;
    }
    table.upsert(std::move(e));
  }
  return table;
}

/// RED factors over the half-open ts range [from_ts, to_ts).
inline RedTable estimate_red(const ServiceTrace& trace, const std::string& standard, Minute from_ts, Minute to_ts,
                             const NormalizerConfig& cfg = {}) {
  auto idx = [&](Minute ts) -> std::size_t {
    if (ts <= trace.start_ts) return 0;
    auto k = (ts - trace.start_ts + trace.sampling_period - 1) / trace.sampling_period;
    return std::min(static_cast<std::size_t>(k), trace.length);
  };
  return estimate_red_indices(trace, standard, idx(from_ts), idx(to_ts), cfg);
}

/// Totals of Eq. (5) on the trace grid; valid[i] == 0 marks missing points.
struct TotalsSeries {
  Minute start_ts = 0;
  Minute sampling_period = 1;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<std::int64_t> n;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return x.size(); }
  Minute ts_at(std::size_t i) const { return start_ts + static_cast<Minute>(i) * sampling_period; }
};

inline void append_totals(TotalsSeries& out, const ServiceTrace& trace, const RedTable& red, std::size_t from,
                          std::size_t to) {
  for (std::size_t i = from; i < to; ++i) {
    auto agg = aggregate_at_index(trace, red, i);
    if (!agg) {
      out.x.push_back(0.0);
      out.y.push_back(0.0);
      out.n.push_back(0);
      out.valid.push_back(0);
      continue;
    }
    const auto dn = static_cast<double>(agg->containers);
    out.x.push_back(agg->mean_rps * dn);
    out.y.push_back(agg->mean_norm_usage * dn);
    out.n.push_back(agg->containers);
    out.valid.push_back(1);
  }
}

inline TotalsSeries build_totals(const ServiceTrace& trace, const RedTable& red) {
  TotalsSeries out;
  out.start_ts = trace.start_ts;
  out.sampling_period = trace.sampling_period;
  append_totals(out, trace, red, 0, trace.length);
  return out;
}

}  // namespace humas
