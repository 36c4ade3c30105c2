#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "humas/common.hpp"
#include "humas/drift.hpp"
#include "humas/forecast.hpp"
#include "humas/normalizer.hpp"
#include "humas/parallel.hpp"
#include "humas/pattern.hpp"
#include "humas/planner.hpp"
#include "humas/trace.hpp"

namespace humas {

// ---------------------------------------------------------------------------
// Latency

/// p95 lookup keyed by (per-container RPS bin, utilization bin). Edges are bin
/// lower bounds; values below the first edge use the first bin.
struct LatencyTable {
  std::vector<double> rps_edges;
  std::vector<double> util_edges;
  std::vector<std::vector<double>> p95_ms;  // [rps_bin][util_bin]

  void validate() const {
    if (rps_edges.empty() || util_edges.empty()) throw Error("latency table: empty edges");
    if (!std::is_sorted(rps_edges.begin(), rps_edges.end()) || !std::is_sorted(util_edges.begin(), util_edges.end()))
      throw Error("latency table: edges must ascend");
    if (p95_ms.size() != rps_edges.size()) throw Error("latency table: one row per rps bin required");
    for (const auto& row : p95_ms) {
      if (row.size() != util_edges.size()) throw Error("latency table: one column per utilization bin required");
      for (std::size_t k = 1; k < row.size(); ++k)
        if (row[k] < row[k - 1]) throw Error("latency table: latency must be nondecreasing in utilization");
    }
  }

  static std::size_t bin(const std::vector<double>& edges, double v) {
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    return it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
  }

  double lookup(double rps, double util) const { return p95_ms[bin(rps_edges, rps)][bin(util_edges, util)]; }
};

struct LatencyModel {
  enum class Mode { kSynthetic, kTable };
  Mode mode = Mode::kSynthetic;
  double rho_0 = 50.0;  // ms
  double kappa = 0.5;
  double sentinel = 1e9;  // ms, returned at u >= 1
  LatencyTable table;

  void validate() const {
    if (mode == Mode::kTable) table.validate();
    else if (!(rho_0 > 0) || !(kappa >= 0)) throw Error("latency: rho_0 must be positive and kappa >= 0");
  }

  /// p95 latency (ms) at utilization u (fraction).
  double latency(double u, double rps_per_container = 0.0) const {
    if (mode == Mode::kTable) return table.lookup(rps_per_container, u);
    if (u >= 1.0) return sentinel;
    u = std::max(u, 0.0);
    return rho_0 * (1.0 + kappa * u / (1.0 - u));
  }
};

// ---------------------------------------------------------------------------
// Cluster state

struct ApplyResult {
  std::int64_t placed = 0;
  std::int64_t removed = 0;
  std::int64_t evicted = 0;  // displaced by a quota increase, then re-placed if possible
  std::int64_t shortfall = 0;
};

/// Machines with their hosted containers. Placement picks the machine with the
/// lowest allocated/capacity ratio that fits; reclaim takes from the highest.
/// Ties go to the lower machine id.
class ClusterState {
 public:
  struct Machine {
    std::size_t type = 0;
    double capacity = 0.0;  // mCore
    double allocated = 0.0;
    std::map<std::size_t, std::int64_t> hosted;  // service index -> containers
    double util() const { return allocated / capacity; }
  };

  explicit ClusterState(const MachineFleet& fleet) : fleet_(fleet) {
    for (std::size_t t = 0; t < fleet.entries().size(); ++t) {
      const auto& e = fleet.entries()[t];
      for (std::int64_t k = 0; k < e.machine_count; ++k) {
        Machine m;
        m.type = t;
        m.capacity = static_cast<double>(e.cores_per_machine) * 1000.0;
        machines_.push_back(std::move(m));
      }
    }
    for (std::size_t i = 0; i < machines_.size(); ++i) order_.insert({0.0, i});
  }

  std::size_t service_index(const std::string& sid) {
    auto it = index_.find(sid);
    if (it != index_.end()) return it->second;
    const std::size_t k = services_.size();
    index_[sid] = k;
    Service s;
    s.id = sid;
    s.quotas.assign(fleet_.entries().size(), 0.0);
    s.by_type.assign(fleet_.entries().size(), 0);
    services_.push_back(std::move(s));
    return k;
  }

  std::int64_t containers(const std::string& sid) const {
    auto it = index_.find(sid);
    return it == index_.end() ? 0 : services_[it->second].total;
  }

  /// Container counts per machine type, fleet order.
  std::vector<std::int64_t> containers_by_type(const std::string& sid) const {
    auto it = index_.find(sid);
    if (it == index_.end()) return std::vector<std::int64_t>(fleet_.entries().size(), 0);
    return services_[it->second].by_type;
  }

  std::vector<double> quotas(const std::string& sid) const {
    auto it = index_.find(sid);
    if (it == index_.end()) return std::vector<double>(fleet_.entries().size(), 0.0);
    return services_[it->second].quotas;
  }

  const std::vector<Machine>& machines() const { return machines_; }
  const MachineFleet& fleet() const { return fleet_; }

  /// Applies quotas (Eq. 9) and scales the service to plan.n_prime containers.
  ApplyResult apply_plan(const CapacityPlan& plan) {
    ApplyResult res;
    const std::size_t s = service_index(plan.service_id);
    auto& svc = services_[s];
    const auto total_machines = static_cast<std::int64_t>(machines_.size());
    const std::int64_t cap = std::max<std::int64_t>(1, (plan.n_prime + total_machines - 1) / total_machines);

    std::vector<double> nq = svc.quotas;
    for (std::size_t t = 0; t < nq.size(); ++t) {
      auto it = plan.quotas.find(fleet_.entries()[t].machine_type);
      if (it != plan.quotas.end()) nq[t] = it->second;
      if (!(nq[t] > 0)) throw Error("apply_plan: missing or non-positive quota for " + fleet_.entries()[t].machine_type);
    }
    // resize in place; evict what no longer fits
    if (nq != svc.quotas) {
      const auto old = svc.quotas;
      svc.quotas = nq;
      std::vector<std::size_t> hosts;
      for (const auto& [m, c] : svc.placement) hosts.push_back(m);
      for (auto m : hosts) {
        auto& mc = machines_[m];
        const std::int64_t c = mc.hosted.at(s);
        const double others = mc.allocated - static_cast<double>(c) * old[mc.type];
        std::int64_t keep = c;
        const double q = nq[mc.type];
        while (keep > 0 && others + static_cast<double>(keep) * q > mc.capacity + kEps) --keep;
        if (keep < c) {
          res.evicted += c - keep;
          set_count(m, s, keep);
        }
        refresh(m);
      }
    }
    std::int64_t target = plan.n_prime;
    while (svc.total < target) {
      auto m = pick_place(s, cap);
      if (!m) {
        res.shortfall = target - svc.total;
        log::warn("apply_plan: insufficient capacity for " + plan.service_id + ", shortfall " +
                  std::to_string(res.shortfall));
        break;
      }
      set_count(*m, s, machines_[*m].hosted[s] + 1);
      refresh(*m);
      ++res.placed;
    }
    while (svc.total > target) {
      auto m = pick_reclaim(s);
      set_count(m, s, machines_[m].hosted.at(s) - 1);
      refresh(m);
      ++res.removed;
    }
    return res;
  }

  /// Throws when capacity or count bookkeeping is inconsistent.
  void check_invariants() const {
    std::vector<std::int64_t> totals(services_.size(), 0);
    for (const auto& m : machines_) {
      double a = 0;
      for (const auto& [s, c] : m.hosted) {
        a += static_cast<double>(c) * services_[s].quotas[m.type];
        totals[s] += c;
      }
      if (a > m.capacity + kEps) throw Error("cluster: machine over capacity");
      if (std::abs(a - m.allocated) > 1e-6 * std::max(1.0, a)) throw Error("cluster: allocation bookkeeping drift");
    }
    for (std::size_t s = 0; s < services_.size(); ++s)
      if (totals[s] != services_[s].total) throw Error("cluster: container count mismatch for " + services_[s].id);
  }

 private:
  static constexpr double kEps = 1e-6;

  struct Service {
    std::string id;
    std::vector<double> quotas;
    std::vector<std::int64_t> by_type;
    std::map<std::size_t, std::int64_t> placement;  // machine -> containers
    std::int64_t total = 0;
  };

  void set_count(std::size_t m, std::size_t s, std::int64_t c) {
    auto& mc = machines_[m];
    auto& svc = services_[s];
    const std::int64_t prev = mc.hosted.count(s) ? mc.hosted[s] : 0;
    const std::int64_t d = c - prev;
    svc.total += d;
    svc.by_type[mc.type] += d;
    if (c == 0) {
      mc.hosted.erase(s);
      svc.placement.erase(m);
    } else {
      mc.hosted[s] = c;
      svc.placement[m] = c;
    }
  }

  /// Recomputes a machine's allocation from its hosted containers and reindexes it.
  void refresh(std::size_t m) {
    auto& mc = machines_[m];
    order_.erase({mc.util(), m});
    double a = 0;
    for (const auto& [s, c] : mc.hosted) a += static_cast<double>(c) * services_[s].quotas[mc.type];
    mc.allocated = a;
    order_.insert({mc.util(), m});
  }

  std::optional<std::size_t> pick_place(std::size_t s, std::int64_t cap) const {
    for (const auto& [u, m] : order_) {
      const auto& mc = machines_[m];
      auto it = mc.hosted.find(s);
      if (it != mc.hosted.end() && it->second >= cap) continue;
      if (mc.allocated + services_[s].quotas[mc.type] <= mc.capacity + kEps) return m;
    }
    return std::nullopt;
  }

  std::size_t pick_reclaim(std::size_t s) const {
    std::size_t best = 0;
    double best_u = -1.0;
    for (const auto& [m, c] : services_[s].placement) {
      const double u = machines_[m].util();
      if (u > best_u) best_u = u, best = m;
    }
    return best;
  }

  MachineFleet fleet_;
  std::vector<Machine> machines_;
  std::set<std::pair<double, std::size_t>> order_;
  std::vector<Service> services_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Replay

/// Utilization of each machine type's containers for one service at one minute.
struct TypeUtilization {
  std::vector<double> util;          // fraction, fleet order; NaN where the type hosts none
  std::vector<double> usage;         // mCore per container
  double service_util = std::numeric_limits<double>::quiet_NaN();
  double capacity_mcore = 0.0;
};

/// Ground truth for one minute under equal load balancing:
/// usage_j = red_true_j * (normalized total usage) / n_sim.
inline TypeUtilization replay_step(const std::vector<std::int64_t>& n_by_type, const std::vector<double>& quotas,
                                   const std::vector<double>& red_true, double y_true_norm) {
  TypeUtilization out;
  const std::size_t k = n_by_type.size();
  out.util.assign(k, std::numeric_limits<double>::quiet_NaN());
  out.usage.assign(k, 0.0);
  std::int64_t n = 0;
  for (auto c : n_by_type) n += c;
  if (n == 0) return out;
  double used = 0, cap = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (n_by_type[j] == 0) continue;
    out.usage[j] = red_true[j] * y_true_norm / static_cast<double>(n);
    out.util[j] = out.usage[j] / quotas[j];
    used += static_cast<double>(n_by_type[j]) * out.usage[j];
    cap += static_cast<double>(n_by_type[j]) * quotas[j];
  }
  out.service_util = used / cap;
  out.capacity_mcore = cap;
  return out;
}

/// Utilization of the container at the 95th percentile (nearest rank).
inline double p95_utilization(const std::vector<std::int64_t>& n_by_type, const std::vector<double>& util) {
  std::vector<std::pair<double, std::int64_t>> groups;
  std::int64_t n = 0;
  for (std::size_t j = 0; j < util.size(); ++j)
    if (n_by_type[j] > 0) groups.push_back({util[j], n_by_type[j]}), n += n_by_type[j];
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  std::sort(groups.begin(), groups.end());
  const auto rank = static_cast<std::int64_t>(std::ceil(0.95 * static_cast<double>(n) - 1e-9));
  std::int64_t seen = 0;
  for (const auto& [u, c] : groups) {
    seen += c;
    if (seen >= rank) return u;
  }
  return groups.back().first;
}

// ---------------------------------------------------------------------------
// Episodes

enum class SimModeKind { kHumas, kFixedRelearn, kNoNormalize, kStatic };

struct SimMode {
  SimModeKind kind = SimModeKind::kHumas;
  double relearn_days = 8.0;

  static SimMode parse(const std::string& s) {
    if (s == "humas") return {SimModeKind::kHumas};
    if (s == "no_normalize") return {SimModeKind::kNoNormalize};
    if (s == "static") return {SimModeKind::kStatic};
    const std::string pre = "fixed_relearn:";
    if (s.rfind(pre, 0) == 0) {
      double d = 0;
      if (!csv::parse(std::string_view(s).substr(pre.size()), d) || !(d > 0))
        throw Error("mode '" + s + "': relearn interval must be a positive number of days");
      return {SimModeKind::kFixedRelearn, d};
    }
    throw Error("unknown simulator mode '" + s + "'");
  }

  std::string name() const {
    switch (kind) {
      case SimModeKind::kHumas: return "humas";
      case SimModeKind::kNoNormalize: return "no_normalize";
      case SimModeKind::kStatic: return "static";
      case SimModeKind::kFixedRelearn: return "fixed_relearn:" + fmt_g9(relearn_days);
    }
    return "?";
  }

  bool normalizes() const { return kind == SimModeKind::kHumas || kind == SimModeKind::kFixedRelearn; }
  bool uses_detector() const { return kind == SimModeKind::kHumas || kind == SimModeKind::kNoNormalize; }
};

struct SimConfig {
  DetectOptions detect;
  PatternConfig pattern;
  ForecastMethod forecast = ForecastMethod::kSeasonalNaiveTrend;
  ForecastParams forecast_params;
  LatencyModel latency;
  double warmup_hours = 48.0;
  double red_window_hours = 48.0;
  Minute timeseries_stride_min = 60;
  Minute forecast_lookback_min = 14 * kMinutesPerDay;
};

using DriftMap = std::map<std::string, std::vector<ConfirmedDrift>>;

struct SimInputs {
  const std::vector<ServiceTrace>* traces = nullptr;
  const MachineFleet* fleet = nullptr;
  std::map<std::string, std::map<std::string, double>> true_red;
  std::map<std::string, ServicePolicy> policies;
  const DriftMap* drifts_normalized = nullptr;  // used by humas
  const DriftMap* drifts_raw = nullptr;         // used by no_normalize
};

struct ServiceMetrics {
  std::string service_id;
  double U_star = 0.0;
  double psi = 0.0;
  double rho_star = 0.0;
  std::int64_t minutes = 0;
  double mean_util = 0.0;
  double slack_pct = 0.0;
  double util_std_total = 0.0;
  std::map<std::string, double> util_std_per_type;
  std::map<std::string, double> mean_util_per_type;
  double util_std_per_type_avg = 0.0;  // container-weighted over types
  double vio_pct = 0.0;
  double mean_capacity_cores = 0.0;
  double mean_abs_target_dev = 0.0;  // mean |u - U*/(1+psi)|
  double max_type_gap_pp = 0.0;
  std::int64_t refits = 0;
  std::int64_t shortfall_epochs = 0;
};

struct AggregateMetrics {
  double slack_pct = 0.0;
  double util_std_total = 0.0;
  std::map<std::string, double> util_std_per_type;
  double util_std_per_type_avg = 0.0;
  double vio_pct = 0.0;
  double mean_capacity_cores = 0.0;  // sum over services
  double mean_abs_target_dev = 0.0;
};

struct TimeseriesRow {
  Minute ts = 0;
  std::string service_id;
  std::string machine_type;  // "all" for the service-level row
  double utilization_pct = 0.0;
  double capacity_mcore = 0.0;
};

struct PlotRow {
  Minute epoch_ts = 0;
  std::string service_id;
  double x_max_forecast = 0.0;
  double x_max_true = 0.0;
  double y_max = 0.0;
  std::int64_t n_prime = 0;
  std::int64_t containers = 0;
  double mean_util_pct = 0.0;
  double u_star_pct = 0.0;
};

struct EpisodeResult {
  std::string mode;
  std::vector<ServiceMetrics> services;
  AggregateMetrics aggregate;
  std::vector<TimeseriesRow> timeseries;
  std::vector<PlotRow> plots;
  std::vector<CapacityPlan> plans;
  std::vector<std::pair<std::string, PiecewisePattern>> final_models;
};

namespace detail {

struct EpochPlan {
  Minute ts = 0;
  double x_max = 0.0;
  double y_max = 0.0;
  double r_prime = 0.0;
  std::map<std::string, double> quotas;
};

struct ServicePlanning {
  std::vector<EpochPlan> epochs;
  PiecewisePattern model;
  std::int64_t refits = 0;
};

inline std::vector<XY> training_pairs(const ServiceTrace& tr, const RedTable& red, std::size_t from, std::size_t to) {
  TotalsSeries tot;
  append_totals(tot, tr, red, from, to);
  std::vector<XY> out;
  out.reserve(tot.size());
  for (std::size_t i = 0; i < tot.size(); ++i)
    if (tot.valid[i]) out.push_back({tot.x[i], tot.y[i]});
  return out;
}

inline ServicePlanning plan_service(const ServiceTrace& tr, const MachineFleet& fleet, const ServicePolicy& pol,
                                    const SimMode& mode, const SimConfig& cfg, const std::vector<ConfirmedDrift>* drifts,
                                    const std::vector<double>& x_hist) {
  ServicePlanning out;
  const auto per = static_cast<std::size_t>(tr.sampling_period);
  const auto w0 = static_cast<std::size_t>(std::llround(cfg.warmup_hours * 60.0)) / per;
  const auto epoch_len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(pol.h_p_hours * 60.0)) / per);
  const auto red_win = static_cast<std::size_t>(std::llround(cfg.red_window_hours * 60.0)) / per;
  const std::string& standard = fleet.standard_type();
  const auto types = fleet.types();
  const std::size_t min_pairs = 2 * cfg.pattern.min_leaf;
  const auto lookback = static_cast<std::size_t>(cfg.forecast_lookback_min) / per;

  RedTable red = RedTable::uniform(tr.service_id, types);
  auto update_red = [&](std::size_t from, std::size_t to) {
    if (!mode.normalizes() || to <= from) return;
    auto est = estimate_red_indices(tr, standard, from, to, cfg.detect.normalizer);
    for (const auto& e : est.entries())
      if (!e.low_confidence) red.upsert(e);
  };
  bool have_model = false;
  auto refit = [&](std::size_t from, std::size_t to) {
    auto pairs = training_pairs(tr, red, from, to);
    if (pairs.size() < min_pairs) return false;
    out.model = fit_pattern(std::move(pairs), cfg.pattern);
    out.model.trained_from = tr.ts_at(from);
    out.model.trained_to = tr.ts_at(to);
    have_model = true;
    ++out.refits;
    return true;
  };

  if (mode.kind == SimModeKind::kStatic) return out;

  // warmup
  update_red(w0 > red_win ? w0 - red_win : 0, w0);
  std::size_t last_fit = w0;
  const std::size_t relearn =
      static_cast<std::size_t>(std::llround(mode.relearn_days * static_cast<double>(kMinutesPerDay))) / per;
  {
    std::size_t from = 0;
    if (mode.kind == SimModeKind::kFixedRelearn && w0 > relearn) from = w0 - relearn;
    if (!refit(from, w0)) throw Error("simulate: warmup too short to fit a pattern for " + tr.service_id);
  }

  std::size_t reset = 0;
  bool pending = false;
  std::size_t next_drift = 0;
  for (std::size_t t = w0; t < tr.length; t += epoch_len) {
    const Minute now = tr.ts_at(t);
    if (mode.uses_detector() && drifts) {
      while (next_drift < drifts->size() && (*drifts)[next_drift].confirmed_ts <= now) {
        const Minute r = (*drifts)[next_drift].window_end_ts;
        reset = r <= tr.start_ts ? 0 : static_cast<std::size_t>((r - tr.start_ts) / tr.sampling_period);
        pending = true;
        ++next_drift;
      }
    }
    update_red(std::max(t > red_win ? t - red_win : 0, reset), t);
    if (pending && t > reset && refit(reset, t)) pending = false;
    if (mode.kind == SimModeKind::kFixedRelearn && t - last_fit >= relearn) {
      refit(t > relearn ? t - relearn : 0, t);
      last_fit = t;
    }

    const std::size_t hb = t > lookback ? t - lookback : 0;
    ForecastRequest req;
    req.history = std::span<const double>(x_hist.data() + hb, t - hb);
    req.horizon = static_cast<Minute>(epoch_len);
    req.future = std::span<const double>(x_hist.data() + t, std::min(epoch_len, tr.length - t));
    EpochPlan ep;
    ep.ts = now;
    ep.x_max = forecast_max(req, cfg.forecast, cfg.forecast_params);
    ep.y_max = have_model ? predict(out.model, ep.x_max) : 0.0;
    ep.r_prime = estimate_capacity(ep.y_max, pol);
    for (const auto& ty : types) {
      double r = 1.0;
      if (mode.normalizes() && ty != standard)
        if (auto f = red.factor(tr.service_id, ty)) r = *f;
      ep.quotas[ty] = quota_for_type(r, pol);
    }
    out.epochs.push_back(std::move(ep));
  }
  return out;
}

}  // namespace detail

/// Service-level X series with NaN at missing minutes.
inline std::vector<double> workload_series(const ServiceTrace& tr) {
  RedTable ones = RedTable::uniform(tr.service_id, tr.type_names());
  TotalsSeries tot;
  append_totals(tot, tr, ones, 0, tr.length);
  std::vector<double> x(tot.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = tot.valid[i] ? tot.x[i] : std::numeric_limits<double>::quiet_NaN();
  return x;
}

/// Replays every service against the plans of `mode`.
inline EpisodeResult run_episode(const SimInputs& in, const SimMode& mode, const SimConfig& cfg,
                                 unsigned threads = 1) {
  if (!in.traces || !in.fleet) throw Error("run_episode: traces and fleet required");
  cfg.latency.validate();
  const auto& traces = *in.traces;
  const auto& fleet = *in.fleet;
  const auto types = fleet.types();
  const std::size_t nt = types.size();
  const std::string& standard = fleet.standard_type();
  const std::size_t ns = traces.size();

  EpisodeResult res;
  res.mode = mode.name();

  auto policy_of = [&](const std::string& sid) -> const ServicePolicy& {
    auto it = in.policies.find(sid);
    if (it == in.policies.end()) throw Error("run_episode: no policy for service " + sid);
    return it->second;
  };
  for (const auto& tr : traces) {
    policy_of(tr.service_id).validate();
    const auto warm = static_cast<std::size_t>(std::llround(cfg.warmup_hours * 60.0)) / static_cast<std::size_t>(tr.sampling_period);
    if (tr.length <= warm) throw Error("run_episode: trace of " + tr.service_id + " does not cover warmup");
  }

  // phase 1: per-service planning inputs
  std::vector<std::vector<double>> x_hist(ns);
  std::vector<detail::ServicePlanning> planning(ns);
  parallel_for(ns, threads, [&](std::size_t k) {
    const auto& tr = traces[k];
    x_hist[k] = workload_series(tr);
    const DriftMap* dm = mode.kind == SimModeKind::kHumas ? in.drifts_normalized
                         : mode.kind == SimModeKind::kNoNormalize ? in.drifts_raw
                                                                  : nullptr;
    const std::vector<ConfirmedDrift>* drifts = nullptr;
    static const std::vector<ConfirmedDrift> kNone;
    if (mode.uses_detector()) {
      if (!dm) throw Error("run_episode: mode " + mode.name() + " needs drift detections");
      auto it = dm->find(tr.service_id);
      drifts = it == dm->end() ? &kNone : &it->second;
    }
    planning[k] = detail::plan_service(tr, fleet, policy_of(tr.service_id), mode, cfg, drifts, x_hist[k]);
  });

  // phase 2: shared cluster, epochs in time order, services in id order
  struct EpochState {
    std::vector<std::int64_t> n_by_type;
    std::vector<double> quotas;
    std::int64_t n_prime = 0;
  };
  std::vector<std::vector<EpochState>> epochs(ns);
  std::vector<std::int64_t> shortfalls(ns, 0);
  ClusterState cluster(fleet);
  std::vector<std::size_t> w0(ns), epoch_len(ns);
  for (std::size_t k = 0; k < ns; ++k) {
    const auto& tr = traces[k];
    const auto& pol = policy_of(tr.service_id);
    const auto per = static_cast<std::size_t>(tr.sampling_period);
    w0[k] = static_cast<std::size_t>(std::llround(cfg.warmup_hours * 60.0)) / per;
    epoch_len[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(pol.h_p_hours * 60.0)) / per);
    // initial deployment: the trace's container count at evaluation start
    std::int64_t n0 = 0;
    for (std::size_t i = w0[k]; i < tr.length && n0 == 0; ++i) {
      std::int64_t n = 0;
      bool ok = true;
      for (const auto& ts : tr.types) {
        if (!ts.has(i)) ok = false;
        else n += ts.containers[i];
      }
      if (ok) n0 = n;
    }
    CapacityPlan init;
    init.service_id = tr.service_id;
    init.epoch_ts = tr.ts_at(w0[k]);
    init.n_prime = n0;
    const auto& first = planning[k].epochs;
    for (const auto& ty : types)
      init.quotas[ty] = mode.kind == SimModeKind::kStatic || first.empty() ? pol.r_std : first.front().quotas.at(ty);
    if (cluster.apply_plan(init).shortfall > 0) ++shortfalls[k];
    if (mode.kind == SimModeKind::kStatic)
      epochs[k].push_back({cluster.containers_by_type(tr.service_id), cluster.quotas(tr.service_id), n0});
  }
  if (mode.kind != SimModeKind::kStatic) {
    std::size_t max_epochs = 0;
    for (const auto& p : planning) max_epochs = std::max(max_epochs, p.epochs.size());
    // epochs of services with different h_p are interleaved by timestamp
    std::vector<std::size_t> next(ns, 0);
    while (true) {
      Minute now = std::numeric_limits<Minute>::max();
      for (std::size_t k = 0; k < ns; ++k)
        if (next[k] < planning[k].epochs.size()) now = std::min(now, planning[k].epochs[next[k]].ts);
      if (now == std::numeric_limits<Minute>::max()) break;
      for (std::size_t k = 0; k < ns; ++k) {
        if (next[k] >= planning[k].epochs.size() || planning[k].epochs[next[k]].ts != now) continue;
        const auto& ep = planning[k].epochs[next[k]++];
        const auto& tr = traces[k];
        const auto& pol = policy_of(tr.service_id);
        CapacityPlan plan;
        plan.service_id = tr.service_id;
        plan.epoch_ts = ep.ts;
        plan.Y_max = ep.y_max;
        plan.R_prime = ep.r_prime;
        std::tie(plan.n_prime, plan.delta_n) = plan_containers(ep.r_prime, cluster.containers(tr.service_id), pol);
        plan.quotas = ep.quotas;
        if (cluster.apply_plan(plan).shortfall > 0) ++shortfalls[k];
        epochs[k].push_back({cluster.containers_by_type(tr.service_id), cluster.quotas(tr.service_id), plan.n_prime});
        res.plans.push_back(std::move(plan));
      }
    }
    (void)max_epochs;
  }

  // phase 3: per-service replay and metrics
  std::vector<ServiceMetrics> metrics(ns);
  std::vector<std::vector<TimeseriesRow>> series(ns);
  std::vector<std::vector<PlotRow>> plots(ns);
  parallel_for(ns, threads, [&](std::size_t k) {
    const auto& tr = traces[k];
    const auto& pol = policy_of(tr.service_id);
    ServiceMetrics& m = metrics[k];
    m.service_id = tr.service_id;
    m.U_star = pol.U_star;
    m.psi = pol.psi;
    m.refits = planning[k].refits;
    m.shortfall_epochs = shortfalls[k];

    std::vector<double> red_true(nt, 1.0);
    if (auto it = in.true_red.find(tr.service_id); it != in.true_red.end())
      for (std::size_t j = 0; j < nt; ++j)
        if (auto jt = it->second.find(types[j]); jt != it->second.end()) red_true[j] = jt->second;
    RedTable truth;
    for (std::size_t j = 0; j < nt; ++j) truth.upsert(RedEntry{tr.service_id, types[j], red_true[j]});

    double mean_rps_container = 0;
    std::int64_t rps_count = 0;
    const double target = pol.U_star / (1.0 + pol.psi);

    struct Minute_ {
      double u;
      std::vector<double> uj;
      std::vector<std::int64_t> nj;
    };
    std::vector<Minute_> rows;
    rows.reserve(tr.length - w0[k]);
    std::int64_t vio = 0;
    double cap_sum = 0, dev_sum = 0;
    std::vector<double> epoch_u_sum(epochs[k].size(), 0.0);
    std::vector<std::int64_t> epoch_u_cnt(epochs[k].size(), 0);
    std::vector<double> epoch_x_max(epochs[k].size(), 0.0);

    // rho_star per service: latency at U* unless given
    for (std::size_t i = w0[k]; i < tr.length; ++i) {
      auto agg = aggregate_at_index(tr, truth, i);
      if (!agg) continue;
      mean_rps_container += agg->mean_rps;
      ++rps_count;
    }
    if (rps_count) mean_rps_container /= static_cast<double>(rps_count);
    if (pol.rho_star) m.rho_star = *pol.rho_star;
    else if (cfg.latency.mode == LatencyModel::Mode::kTable)
      throw Error("simulate: table latency mode needs rho_star in the policy of " + tr.service_id);
    else m.rho_star = cfg.latency.latency(pol.U_star);

    for (std::size_t i = w0[k]; i < tr.length; ++i) {
      const std::size_t e = std::min((i - w0[k]) / epoch_len[k], epochs[k].size() - 1);
      const auto& st = epochs[k][mode.kind == SimModeKind::kStatic ? 0 : e];
      auto agg = aggregate_at_index(tr, truth, i);
      if (!agg) continue;
      const double y_true = agg->mean_norm_usage * static_cast<double>(agg->containers);
      const double x_true = agg->mean_rps * static_cast<double>(agg->containers);
      epoch_x_max[e] = std::max(epoch_x_max[e], x_true);
      auto tu = replay_step(st.n_by_type, st.quotas, red_true, y_true);
      if (std::isnan(tu.service_util)) continue;
      std::int64_t n_sim = 0;
      for (auto c : st.n_by_type) n_sim += c;
      const double u95 = p95_utilization(st.n_by_type, tu.util);
      const double rps_c = x_true / static_cast<double>(n_sim);
      if (cfg.latency.latency(u95, rps_c) > m.rho_star) ++vio;
      cap_sum += tu.capacity_mcore;
      dev_sum += std::abs(tu.service_util - target);
      double gap = 0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t j = 0; j < nt; ++j)
        if (st.n_by_type[j] > 0) lo = std::min(lo, tu.util[j]), hi = std::max(hi, tu.util[j]);
      if (hi >= lo) gap = (hi - lo) * 100.0;
      m.max_type_gap_pp = std::max(m.max_type_gap_pp, gap);
      epoch_u_sum[e] += tu.service_util;
      ++epoch_u_cnt[e];
      const Minute ts = tr.ts_at(i);
      if (cfg.timeseries_stride_min > 0 && (ts - tr.ts_at(w0[k])) % cfg.timeseries_stride_min == 0) {
        for (std::size_t j = 0; j < nt; ++j)
          if (st.n_by_type[j] > 0)
            series[k].push_back({ts, tr.service_id, types[j], tu.util[j] * 100.0,
                                 static_cast<double>(st.n_by_type[j]) * st.quotas[j]});
        series[k].push_back({ts, tr.service_id, "all", tu.service_util * 100.0, tu.capacity_mcore});
      }
      rows.push_back({tu.service_util, tu.util, st.n_by_type});
    }
    m.minutes = static_cast<std::int64_t>(rows.size());
    if (rows.empty()) return;
    const double cnt = static_cast<double>(rows.size());
    double su = 0;
    for (const auto& r : rows) su += r.u;
    m.mean_util = su / cnt;
    double var = 0;
    for (const auto& r : rows) var += (r.u - m.mean_util) * (r.u - m.mean_util);
    m.util_std_total = std::sqrt(var / cnt) * 100.0;
    m.slack_pct = (1.0 - m.mean_util / pol.U_star) * 100.0;
    m.vio_pct = static_cast<double>(vio) / cnt * 100.0;
    m.mean_capacity_cores = cap_sum / cnt / 1000.0;
    m.mean_abs_target_dev = dev_sum / cnt * 100.0;
    double wsum = 0, wstd = 0;
    for (std::size_t j = 0; j < nt; ++j) {
      double s2 = 0, s1 = 0, c = 0, nsum = 0;
      for (const auto& r : rows) {
        if (r.nj[j] == 0) continue;
        s2 += (r.uj[j] - m.mean_util) * (r.uj[j] - m.mean_util);
        s1 += r.uj[j];
        c += 1;
        nsum += static_cast<double>(r.nj[j]);
      }
      if (c == 0) continue;
      const double sd = std::sqrt(s2 / c) * 100.0;
      m.util_std_per_type[types[j]] = sd;
      m.mean_util_per_type[types[j]] = s1 / c * 100.0;
      wstd += sd * nsum;
      wsum += nsum;
    }
    m.util_std_per_type_avg = wsum > 0 ? wstd / wsum : 0.0;

    if (mode.kind != SimModeKind::kStatic) {
      const auto& eps = planning[k].epochs;
      for (std::size_t e = 0; e < eps.size() && e < epochs[k].size(); ++e) {
        std::int64_t n = 0;
        for (auto c : epochs[k][e].n_by_type) n += c;
        plots[k].push_back({eps[e].ts, tr.service_id, eps[e].x_max, epoch_x_max[e], eps[e].y_max, epochs[k][e].n_prime,
                            n, epoch_u_cnt[e] ? epoch_u_sum[e] / static_cast<double>(epoch_u_cnt[e]) * 100.0 : 0.0,
                            pol.U_star * 100.0});
      }
    }
    (void)standard;
  });

  // aggregate, weighted by mean capacity
  double wt = 0;
  std::map<std::string, double> type_w;
  for (const auto& m : metrics) {
    const double w = m.mean_capacity_cores;
    wt += w;
    res.aggregate.slack_pct += w * m.slack_pct;
    res.aggregate.util_std_total += w * m.util_std_total;
    res.aggregate.util_std_per_type_avg += w * m.util_std_per_type_avg;
    res.aggregate.vio_pct += w * m.vio_pct;
    res.aggregate.mean_abs_target_dev += w * m.mean_abs_target_dev;
    res.aggregate.mean_capacity_cores += w;
    for (const auto& [ty, v] : m.util_std_per_type) {
      res.aggregate.util_std_per_type[ty] += w * v;
      type_w[ty] += w;
    }
  }
  if (wt > 0) {
    res.aggregate.slack_pct /= wt;
    res.aggregate.util_std_total /= wt;
    res.aggregate.util_std_per_type_avg /= wt;
    res.aggregate.vio_pct /= wt;
    res.aggregate.mean_abs_target_dev /= wt;
    for (auto& [ty, v] : res.aggregate.util_std_per_type) v /= type_w[ty];
  }
  res.services = std::move(metrics);
  for (auto& s : series) res.timeseries.insert(res.timeseries.end(), s.begin(), s.end());
  for (auto& p : plots) res.plots.insert(res.plots.end(), p.begin(), p.end());
  for (std::size_t k = 0; k < ns; ++k)
    if (!planning[k].epochs.empty()) res.final_models.push_back({traces[k].service_id, planning[k].model});
  return res;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::ordered_json metrics_json(const ServiceMetrics& m) {
  nlohmann::ordered_json j;
  j["slack_pct"] = m.slack_pct;
  j["util_std_total"] = m.util_std_total;
  j["util_std_per_type"] = m.util_std_per_type;
  j["util_std_per_type_avg"] = m.util_std_per_type_avg;
  j["vio_pct"] = m.vio_pct;
  j["mean_capacity_cores"] = m.mean_capacity_cores;
  j["mean_util_pct"] = m.mean_util * 100.0;
  j["mean_util_per_type"] = m.mean_util_per_type;
  j["mean_abs_target_dev_pp"] = m.mean_abs_target_dev;
  j["max_type_gap_pp"] = m.max_type_gap_pp;
  j["U_star"] = m.U_star;
  j["rho_star_ms"] = m.rho_star;
  j["minutes"] = m.minutes;
  j["refits"] = m.refits;
  j["shortfall_epochs"] = m.shortfall_epochs;
  return j;
}

inline nlohmann::ordered_json metrics_json(const EpisodeResult& r) {
  nlohmann::ordered_json j;
  const auto& a = r.aggregate;
  j["aggregate"] = {{"slack_pct", a.slack_pct},
                    {"util_std_total", a.util_std_total},
                    {"util_std_per_type", a.util_std_per_type},
                    {"util_std_per_type_avg", a.util_std_per_type_avg},
                    {"vio_pct", a.vio_pct},
                    {"mean_capacity_cores", a.mean_capacity_cores},
                    {"mean_abs_target_dev_pp", a.mean_abs_target_dev}};
  nlohmann::ordered_json s = nlohmann::ordered_json::object();
  for (const auto& m : r.services) s[m.service_id] = metrics_json(m);
  j["services"] = s;
  return j;
}

inline void write_timeseries(const std::vector<TimeseriesRow>& rows, std::ostream& os) {
  os << "ts,service_id,machine_type,utilization_pct,capacity_mcore\n";
  for (const auto& r : rows)
    os << r.ts << ',' << r.service_id << ',' << r.machine_type << ',' << fmt_g9(r.utilization_pct) << ','
       << fmt_g9(r.capacity_mcore) << '\n';
}

inline void write_plots_header(std::ostream& os) {
  os << "mode,epoch_ts,service_id,x_max_forecast,x_max_true,y_max_mcore,n_prime,containers,mean_util_pct,u_star_pct\n";
}

inline void write_plots(const std::string& mode, const std::vector<PlotRow>& rows, std::ostream& os) {
  for (const auto& r : rows)
    os << mode << ',' << r.epoch_ts << ',' << r.service_id << ',' << fmt_g9(r.x_max_forecast) << ','
       << fmt_g9(r.x_max_true) << ',' << fmt_g9(r.y_max) << ',' << r.n_prime << ',' << r.containers << ','
       << fmt_g9(r.mean_util_pct) << ',' << fmt_g9(r.u_star_pct) << '\n';
}

}  // namespace humas
