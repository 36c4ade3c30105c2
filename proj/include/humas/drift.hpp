#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "humas/common.hpp"
#include "humas/lsdd.hpp"
#include "humas/normalizer.hpp"
#include "humas/synth.hpp"
#include "humas/trace.hpp"

namespace humas {

struct WindowConfig {
  double W_hours = 48.0;
  double S_hours = 8.0;
  int theta = 3;
  double mu = 0.05;
  int m = 100;
  double max_missing_frac = 0.25;
  Minute point_stride_min = 8;  // points are means of this many consecutive minutes

  Minute window_min() const { return static_cast<Minute>(std::llround(W_hours * 60.0)); }
  Minute step_min() const { return static_cast<Minute>(std::llround(S_hours * 60.0)); }
  /// Windows between a confirmed drift's first window and the first fully later window.
  std::int64_t windows_per_span() const { return (window_min() + step_min() - 1) / step_min(); }

  void validate() const {
    if (!(W_hours > 0) || !(S_hours > 0)) throw Error("window: W and S must be positive");
    if (S_hours > W_hours) throw Error("window: S must not exceed W");
    if (!(mu > 0 && mu < 0.5)) throw Error("window: mu must be in (0, 0.5)");
    if (static_cast<double>(m) < 1.0 / mu - 1e-9) throw Error("window: m must be >= 1/mu");
    if (theta < 1) throw Error("window: theta must be >= 1");
    if (point_stride_min < 1) throw Error("window: point_stride_min must be >= 1");
    if (max_missing_frac < 0 || max_missing_frac >= 1) throw Error("window: max_missing_frac must be in [0,1)");
  }
};

enum class DecisionKind { kNoDrift, kPending, kDrift, kSkipped, kAwaitingReference };

struct Decision {
  DecisionKind kind = DecisionKind::kNoDrift;
  int counter = 0;
  std::int64_t i_d = -1;
};

struct WindowRecord {
  std::int64_t window_index = 0;
  Minute window_end_ts = 0;
  bool tested = false;
  double d2 = 0.0;
  double threshold = 0.0;
  bool rejected = false;
  bool confirmed_drift = false;
  std::int64_t i_d = -1;
  DecisionKind kind = DecisionKind::kNoDrift;
};

struct DriftState {
  std::int64_t reference_index = -1;
  std::vector<Point2> reference;
  int counter = 0;
  std::vector<std::int64_t> candidates;
  std::vector<WindowRecord> history;
  // after a confirmed drift, the window that becomes the new reference
  std::optional<std::int64_t> next_reference;
};

/// One step of the consecutive-rejection rule for window `i` with points `z`
/// (nullopt when the window has too much missing data).
inline Decision detect_step(DriftState& st, std::int64_t i, Minute window_end_ts,
                            const std::optional<std::vector<Point2>>& z, const WindowConfig& wc,
                            LsddConfig lc, std::uint64_t center_seed, std::uint64_t perm_seed) {
  WindowRecord rec;
  rec.window_index = i;
  rec.window_end_ts = window_end_ts;
  Decision d;

  if (st.next_reference && i < *st.next_reference) {
    d.kind = DecisionKind::kAwaitingReference;
  } else if (!z) {
    d.kind = DecisionKind::kSkipped;
    d.counter = st.counter;
    log::debug("window " + std::to_string(i) + " skipped: too much missing data");
  } else if (st.reference_index < 0 || (st.next_reference && i >= *st.next_reference)) {
    st.reference_index = i;
    st.reference = *z;
    st.next_reference.reset();
    d.kind = DecisionKind::kAwaitingReference;
  } else {
    lc.center_seed = center_seed;
    LsddTest test(st.reference, *z, lc);
    rec.tested = true;
    rec.d2 = test.statistic();
    rec.threshold = test.threshold(wc.mu, wc.m, perm_seed);
    rec.rejected = rec.d2 > rec.threshold;
    if (rec.rejected) {
      ++st.counter;
      st.candidates.push_back(i);
    } else {
      st.counter = 0;
      st.candidates.clear();
    }
    d.counter = st.counter;
    d.kind = rec.rejected ? DecisionKind::kPending : DecisionKind::kNoDrift;
    if (st.counter >= wc.theta) {
      d.kind = DecisionKind::kDrift;
      d.i_d = st.candidates.front();
      rec.confirmed_drift = true;
      rec.i_d = d.i_d;
      st.counter = 0;
      st.candidates.clear();
      st.next_reference = std::max(d.i_d + wc.windows_per_span(), i + 1);
    }
  }
  rec.kind = d.kind;
  st.history.push_back(rec);
  return d;
}

inline std::int64_t window_count(std::size_t length, const WindowConfig& wc) {
  const auto w = static_cast<std::size_t>(wc.window_min()), s = static_cast<std::size_t>(wc.step_min());
  if (length < w) return 0;
  return static_cast<std::int64_t>((length - w) / s + 1);
}

/// (X, Y) points of window i: [i*S, i*S + W) minutes from the trace start, as
/// bin means of point_stride_min minutes. RED is estimated on the window itself
/// unless `normalize` is false. nullopt when more than max_missing_frac is missing.
inline std::optional<std::vector<Point2>> window_points(const ServiceTrace& trace, const std::string& standard,
                                                        std::int64_t i, const WindowConfig& wc, bool normalize,
                                                        const NormalizerConfig& nc = {}) {
  const auto per = static_cast<std::size_t>(trace.sampling_period);
  const auto from = static_cast<std::size_t>(i * wc.step_min()) / per;
  const auto count = static_cast<std::size_t>(wc.window_min()) / per;
  const auto to = std::min(from + count, trace.length);
  if (to <= from) return std::nullopt;
  RedTable red = normalize ? estimate_red_indices(trace, standard, from, to, nc)
                           : RedTable::uniform(trace.service_id, trace.type_names());
  TotalsSeries tot;
  append_totals(tot, trace, red, from, to);
  std::size_t missing = count - (to - from);
  for (auto v : tot.valid) missing += v ? 0 : 1;
  if (static_cast<double>(missing) > wc.max_missing_frac * static_cast<double>(count)) return std::nullopt;

  const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(wc.point_stride_min) / per);
  std::vector<Point2> pts;
  pts.reserve(tot.size() / stride + 1);
  for (std::size_t b = 0; b < tot.size(); b += stride) {
    double sx = 0, sy = 0;
    std::size_t c = 0;
    for (std::size_t k = b; k < std::min(b + stride, tot.size()); ++k) {
      if (!tot.valid[k]) continue;
      sx += tot.x[k];
      sy += tot.y[k];
      ++c;
    }
    if (c > 0) pts.push_back(Point2{sx / static_cast<double>(c), sy / static_cast<double>(c)});
  }
  return pts;
}

struct DetectOptions {
  WindowConfig window;
  LsddConfig lsdd;
  NormalizerConfig normalizer;
  bool normalize = true;
  std::uint64_t global_seed = 0;
};

struct ConfirmedDrift {
  std::string service_id;
  std::int64_t i_d = 0;
  std::int64_t confirmed_at = 0;
  Minute window_start_ts = 0;  // start of window i_d
  Minute window_end_ts = 0;    // end of window i_d
  Minute confirmed_ts = 0;     // end of the window that confirmed the drift
};

struct ServiceDetections {
  std::string service_id;
  Minute start_ts = 0;
  std::vector<WindowRecord> records;
  std::vector<ConfirmedDrift> drifts;
};

/// Runs the detector over every window of one service, optionally stopping
/// before windows ending after `until_ts`.
inline ServiceDetections detect_service(const ServiceTrace& trace, const std::string& standard,
                                        const DetectOptions& opt,
                                        std::optional<Minute> until_ts = std::nullopt) {
  opt.window.validate();
  ServiceDetections out;
  out.service_id = trace.service_id;
  out.start_ts = trace.start_ts;
  DriftState st;
  const auto n = window_count(trace.length, opt.window);
  for (std::int64_t i = 0; i < n; ++i) {
    const Minute start = trace.start_ts + i * opt.window.step_min();
    const Minute end = start + opt.window.window_min();
    if (until_ts && end > *until_ts) break;
    auto z = window_points(trace, standard, i, opt.window, opt.normalize, opt.normalizer);
    const auto cs = derive_seed(opt.global_seed, "drift.centers", trace.service_id, static_cast<std::uint64_t>(i));
    const auto ps = derive_seed(opt.global_seed, "drift.perm", trace.service_id, static_cast<std::uint64_t>(i));
    auto d = detect_step(st, i, end, z, opt.window, opt.lsdd, cs, ps);
    if (d.kind == DecisionKind::kDrift) {
      const Minute ws = trace.start_ts + d.i_d * opt.window.step_min();
      out.drifts.push_back(ConfirmedDrift{trace.service_id, d.i_d, i, ws, ws + opt.window.window_min(), end});
    }
  }
  out.records = std::move(st.history);
  return out;
}

inline void write_detections_header(std::ostream& os) {
  os << "service_id,window_index,window_end_ts,d2,threshold,rejected,confirmed_drift,i_d\n";
}

/// Untested windows (reference, awaiting, skipped) leave d2/threshold/i_d empty.
inline void write_detections(const ServiceDetections& sd, std::ostream& os) {
  for (const auto& r : sd.records) {
    os << sd.service_id << ',' << r.window_index << ',' << r.window_end_ts << ',';
    if (r.tested) os << fmt_g9(r.d2) << ',' << fmt_g9(r.threshold);
    else os << ',';
    os << ',' << (r.rejected ? 1 : 0) << ',' << (r.confirmed_drift ? 1 : 0) << ',';
    if (r.confirmed_drift) os << r.i_d;
    os << '\n';
  }
}

struct DetectionScore {
  std::int64_t tdd = 0;
  std::int64_t fdd = 0;
  std::int64_t dd = 0;
  std::int64_t upgrades = 0;
  std::int64_t matched_upgrades = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::vector<std::uint8_t> upgrade_detected;  // parallel to the upgrade list given
};

/// A detection is true if window i_d or i_d - 1 overlaps an upgrade of the same
/// service. Matching is one-to-one, greedy in detection time order; each
/// detection takes the earliest unmatched overlapping upgrade.
inline DetectionScore score_detections(const std::vector<ServiceDetections>& dets,
                                       const std::vector<UpgradeEvent>& upgrades, const WindowConfig& wc) {
  DetectionScore sc;
  sc.upgrades = static_cast<std::int64_t>(upgrades.size());
  sc.upgrade_detected.assign(upgrades.size(), 0);
  std::map<std::string, std::vector<std::size_t>> by_service;
  for (std::size_t k = 0; k < upgrades.size(); ++k) by_service[upgrades[k].service_id].push_back(k);
  for (auto& [sid, v] : by_service)
    std::sort(v.begin(), v.end(), [&](auto a, auto b) { return upgrades[a].start_ts < upgrades[b].start_ts; });

  for (const auto& sd : dets) {
    auto drifts = sd.drifts;
    std::sort(drifts.begin(), drifts.end(), [](const auto& a, const auto& b) { return a.i_d < b.i_d; });
    for (const auto& d : drifts) {
      ++sc.dd;
      // union of windows i_d - 1 and i_d
      const Minute lo = sd.start_ts + std::max<std::int64_t>(d.i_d - 1, 0) * wc.step_min();
      const Minute hi = sd.start_ts + d.i_d * wc.step_min() + wc.window_min();
      bool hit = false;
      if (auto it = by_service.find(sd.service_id); it != by_service.end()) {
        for (auto k : it->second) {
          const auto& u = upgrades[k];
          if (sc.upgrade_detected[k]) continue;
          if (u.start_ts < hi && u.end_ts > lo) {
            sc.upgrade_detected[k] = 1;
            hit = true;
            break;
          }
        }
      }
      if (hit) ++sc.tdd;
      else ++sc.fdd;
    }
  }
  sc.matched_upgrades = sc.tdd;
  if (sc.dd > 0) sc.precision = static_cast<double>(sc.tdd) / static_cast<double>(sc.dd);
  if (sc.upgrades > 0) sc.recall = static_cast<double>(sc.matched_upgrades) / static_cast<double>(sc.upgrades);
  return sc;
}

}  // namespace humas
