#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "humas/common.hpp"

namespace humas {

struct PatternConfig {
  int max_segments = 16;
  std::size_t min_leaf = 32;
  double improvement_min = 0.01;
  int quantile_bins = 64;

  void validate() const {
    if (max_segments < 1) throw Error("pattern: max_segments must be >= 1");
    if (min_leaf < 2) throw Error("pattern: min_leaf must be >= 2");
    if (improvement_min < 0) throw Error("pattern: improvement_min must be >= 0");
    if (quantile_bins < 2) throw Error("pattern: quantile_bins must be >= 2");
  }
};

struct XY {
  double x = 0.0;
  double y = 0.0;
};

struct Segment {
  double alpha = 0.0;  // mCore per RPS
  double beta = 0.0;   // mCore
};

/// Piecewise local-linear workload -> usage model.
/// splits = {x_0, x_1, ..., x_L}; segment l covers [x_{l-1}, x_l).
struct PiecewisePattern {
  std::vector<double> splits;
  std::vector<Segment> segments;
  Minute trained_from = 0;
  Minute trained_to = 0;
  std::size_t sample_count = 0;

  std::size_t size() const { return segments.size(); }
};

namespace detail {

struct Moments {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;

  Moments operator-(const Moments& o) const {
    return {n - o.n, sx - o.sx, sy - o.sy, sxx - o.sxx, sxy - o.sxy, syy - o.syy};
  }

  /// Residual sum of squares of the OLS line through these points.
  double sse() const {
    if (n < 1) return 0.0;
    const double vxx = sxx - sx * sx / n;
    const double vyy = syy - sy * sy / n;
    const double vxy = sxy - sx * sy / n;
    double r = vxx > 1e-12 * std::max(1.0, sxx) ? vyy - vxy * vxy / vxx : vyy;
    return std::max(r, 0.0);
  }
};

/// Two-pass centered OLS over a contiguous range of x-sorted points.
inline Segment ols(std::span<const XY> pts) {
  const double n = static_cast<double>(pts.size());
  double mx = 0, my = 0;
  for (const auto& p : pts) mx += p.x, my += p.y;
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (const auto& p : pts) {
    sxx += (p.x - mx) * (p.x - mx);
    sxy += (p.x - mx) * (p.y - my);
  }
  if (!(sxx > 0)) return {0.0, my};
  const double a = sxy / sxx;
  return {a, my - a * mx};
}

}  // namespace detail

/// Greedy best-first segmentation on x. Candidate splits sit at the node's
/// 1/quantile_bins quantiles and need min_leaf points per side. The best
/// remaining split is taken while it lowers the model's total SSE by at least
/// improvement_min times the current total.
inline PiecewisePattern fit_pattern(std::vector<XY> pairs, const PatternConfig& cfg = {}) {
  cfg.validate();
  if (pairs.size() < 2 * cfg.min_leaf)
    throw Error("pattern: need at least " + std::to_string(2 * cfg.min_leaf) + " pairs, got " +
                std::to_string(pairs.size()));
  std::sort(pairs.begin(), pairs.end(), [](const XY& a, const XY& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  const std::size_t n = pairs.size();

  PiecewisePattern out;
  out.sample_count = n;
  if (pairs.front().x == pairs.back().x) {
    double my = 0;
    for (const auto& p : pairs) my += p.y;
    out.splits = {pairs.front().x, pairs.back().x};
    out.segments = {Segment{0.0, my / static_cast<double>(n)}};
    return out;
  }

  // prefix moments about the global means keep the sums well scaled
  double gx = 0, gy = 0;
  for (const auto& p : pairs) gx += p.x, gy += p.y;
  gx /= static_cast<double>(n);
  gy /= static_cast<double>(n);
  std::vector<detail::Moments> pre(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pairs[i].x - gx, y = pairs[i].y - gy;
    pre[i + 1] = pre[i];
    auto& m = pre[i + 1];
    m.n += 1, m.sx += x, m.sy += y, m.sxx += x * x, m.sxy += x * y, m.syy += y * y;
  }
  auto range = [&](std::size_t a, std::size_t b) { return pre[b] - pre[a]; };
  const double sst = range(0, n).sse() + 1e-300;

  struct Node {
    std::size_t a, b;
    std::size_t cut = 0;  // best split position (first index of the right child)
    double gain = -1.0;
  };
  auto best_split = [&](Node& nd) {
    const std::size_t len = nd.b - nd.a;
    nd.gain = -1.0;
    if (len < 2 * cfg.min_leaf) return;
    const double parent = range(nd.a, nd.b).sse();
    if (parent <= 1e-12 * sst) return;
    std::size_t last = 0;
    for (int q = 1; q < cfg.quantile_bins; ++q) {
      std::size_t p = nd.a + static_cast<std::size_t>(q) * len / static_cast<std::size_t>(cfg.quantile_bins);
      // move to the first point with this x so equal x never straddle a split
      const double xv = pairs[p].x;
      p = static_cast<std::size_t>(
          std::lower_bound(pairs.begin() + static_cast<std::ptrdiff_t>(nd.a), pairs.begin() + static_cast<std::ptrdiff_t>(nd.b), xv,
                           [](const XY& e, double v) { return e.x < v; }) -
          pairs.begin());
      if (p == last) continue;
      last = p;
      if (p - nd.a < cfg.min_leaf || nd.b - p < cfg.min_leaf) continue;
      const double gain = parent - range(nd.a, p).sse() - range(p, nd.b).sse();
      if (gain > nd.gain) {
        nd.gain = gain;
        nd.cut = p;
      }
    }
  };

  auto cmp = [](const Node& l, const Node& r) { return l.gain < r.gain || (l.gain == r.gain && l.a > r.a); };
  std::priority_queue<Node, std::vector<Node>, decltype(cmp)> open(cmp);
  std::vector<Node> leaves;
  Node root{0, n};
  best_split(root);
  open.push(root);
  double total_sse = range(0, n).sse();
  while (!open.empty()) {
    Node nd = open.top();
    open.pop();
    const std::size_t count = leaves.size() + open.size() + 1;
    if (nd.gain < 0 || nd.gain < cfg.improvement_min * total_sse ||
        count >= static_cast<std::size_t>(cfg.max_segments)) {
      leaves.push_back(nd);
      continue;
    }
    total_sse -= nd.gain;
    Node l{nd.a, nd.cut}, r{nd.cut, nd.b};
    best_split(l);
    best_split(r);
    open.push(l);
    open.push(r);
  }
  std::sort(leaves.begin(), leaves.end(), [](const Node& l, const Node& r) { return l.a < r.a; });

  out.splits.push_back(pairs.front().x);
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const auto& lf = leaves[k];
    out.segments.push_back(detail::ols(std::span<const XY>(pairs.data() + lf.a, lf.b - lf.a)));
    out.splits.push_back(k + 1 < leaves.size() ? pairs[lf.b].x : pairs.back().x);
  }
  return out;
}

/// Segment index for x: half-open [x_{l-1}, x_l); values on an interior split use the right segment.
inline std::size_t segment_index(const PiecewisePattern& m, double x) {
  if (m.segments.size() <= 1) return 0;
  auto first = m.splits.begin() + 1;
  auto last = m.splits.end() - 1;
  return static_cast<std::size_t>(std::upper_bound(first, last, x) - first);
}

inline double predict(const PiecewisePattern& m, double x) {
  if (m.segments.empty()) throw Error("pattern: model not fitted");
  if (x < m.splits.front() || x > m.splits.back())
    log::debug("pattern: extrapolating at x = " + fmt_g9(x));
  const auto& s = m.segments[segment_index(m, x)];
  return std::max(s.alpha * x + s.beta, 0.0);
}

/// Training-set SSE of a fitted model.
inline double pattern_sse(const PiecewisePattern& m, std::span<const XY> pairs) {
  double s = 0;
  for (const auto& p : pairs) {
    const auto& seg = m.segments[segment_index(m, p.x)];
    const double r = p.y - (seg.alpha * p.x + seg.beta);
    s += r * r;
  }
  return s;
}

inline nlohmann::ordered_json pattern_json(const std::string& service_id, const PiecewisePattern& m) {
  nlohmann::ordered_json j;
  j["service_id"] = service_id;
  j["splits"] = m.splits;
  auto segs = nlohmann::ordered_json::array();
  for (const auto& s : m.segments) segs.push_back({{"alpha", s.alpha}, {"beta", s.beta}});
  j["segments"] = segs;
  j["trained_on"] = {{"from_ts", m.trained_from}, {"to_ts", m.trained_to}, {"sample_count", m.sample_count}};
  return j;
}

}  // namespace humas
