#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "humas/common.hpp"
#include "humas/drift.hpp"
#include "humas/forecast.hpp"
#include "humas/lsdd.hpp"
#include "humas/normalizer.hpp"
#include "humas/pattern.hpp"
#include "humas/planner.hpp"
#include "humas/sim.hpp"
#include "humas/synth.hpp"

namespace humas {

struct GenConfig {
  std::string preset = "default";  // default | detection | upgrade_heavy
  int services = 50;
  int days = 60;
  double target_mean_utilization = 0.45;
  std::optional<std::vector<FleetEntry>> fleet;
  std::optional<UpgradeSampling> upgrades;  // overrides the preset's sampling
};

struct RunConfig {
  std::uint64_t global_seed = 0;
  std::string output_dir = "out";
  WindowConfig window;
  LsddConfig lsdd;
  NormalizerConfig normalizer;
  double red_window_hours = 48.0;
  PatternConfig pattern;
  ForecastMethod forecast_method = ForecastMethod::kSeasonalNaiveTrend;
  ServicePolicy policy_default;
  std::map<std::string, ServicePolicy> policies;
  std::optional<std::pair<double, double>> u_star_range;
  std::vector<std::string> modes{"humas", "fixed_relearn:8", "no_normalize", "static"};
  double warmup_hours = 48.0;
  Minute timeseries_stride_min = 60;
  LatencyModel latency;
  GenConfig gen;

  /// Policy of one service: explicit entry, else the default with U* drawn
  /// from u_star_range when configured.
  ServicePolicy policy_for(const std::string& sid) const {
    if (auto it = policies.find(sid); it != policies.end()) return it->second;
    ServicePolicy p = policy_default;
    if (u_star_range) {
      std::mt19937_64 rng(derive_seed(global_seed, "policy.u_star", sid));
      const double v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      p.U_star = u_star_range->first + v * (u_star_range->second - u_star_range->first);
    }
    return p;
  }

  SimConfig sim_config() const {
    SimConfig c;
    c.detect = detect_options(true);
    c.pattern = pattern;
    c.forecast = forecast_method;
    c.latency = latency;
    c.warmup_hours = warmup_hours;
    c.red_window_hours = red_window_hours;
    c.timeseries_stride_min = timeseries_stride_min;
    return c;
  }

  DetectOptions detect_options(bool normalize) const {
    DetectOptions d;
    d.window = window;
    d.lsdd = lsdd;
    d.normalizer = normalizer;
    d.normalize = normalize;
    d.global_seed = global_seed;
    return d;
  }

  void validate() const {
    window.validate();
    lsdd.validate();
    pattern.validate();
    policy_default.validate();
    for (const auto& [sid, p] : policies) p.validate();
    latency.validate();
    if (u_star_range && !(u_star_range->first > 0 && u_star_range->first <= u_star_range->second &&
                          u_star_range->second <= 1))
      throw Error("config: u_star_range must satisfy 0 < lo <= hi <= 1");
    for (const auto& m : modes) SimMode::parse(m);
    if (warmup_hours < window.W_hours) throw Error("config: simulator.warmup_hours must be >= window.W_hours");
    if (timeseries_stride_min < 0) throw Error("config: simulator.timeseries_stride_min must be >= 0");
    if (gen.services < 1 || gen.days < 1) throw Error("config: gen.services and gen.days must be positive");
    if (gen.preset != "default" && gen.preset != "detection" && gen.preset != "upgrade_heavy")
      throw Error("config: gen.preset must be default, detection or upgrade_heavy");
  }
};

namespace detail {

/// Walks an object, rejecting keys without a handler.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config: '" + (path_.empty() ? std::string("<root>") : path_) + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error("config: bad value for '" + name(key) + "'");
    }
  }

  template <typename T>
  void get_opt(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error("config: bad value for '" + name(key) + "'");
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error("config: unknown key '" + name(it.key()) + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline ServicePolicy read_policy(const nlohmann::json& j, const std::string& path, ServicePolicy p) {
  ObjectReader r(j, path);
  r.get("U_star", p.U_star);
  r.get("psi", p.psi);
  r.get("r_std", p.r_std);
  r.get("h_p_hours", p.h_p_hours);
  r.get_opt("rho_star", p.rho_star);
  r.get("n_min", p.n_min);
  r.get_opt("max_step_fraction", p.max_step_fraction);
  r.finish();
  return p;
}

inline UpgradeSampling read_sampling(const nlohmann::json& j, const std::string& path, UpgradeSampling s) {
  ObjectReader r(j, path);
  r.get("interval_min_days", s.interval_min_days);
  r.get("interval_max_days", s.interval_max_days);
  r.get("duration_min_hours", s.duration_min_hours);
  r.get("duration_max_hours", s.duration_max_hours);
  r.get("p_increase", s.p_increase);
  r.get("magnitude_median", s.magnitude_median);
  r.get("magnitude_log_sigma", s.magnitude_log_sigma);
  r.get("min_change", s.min_change);
  r.get("max_change", s.max_change);
  r.get("max_duration_min", s.max_duration_min);
  if (auto* b = r.child("bands")) {
    if (!b->is_array()) throw Error("config: '" + r.name("bands") + "' must be an array");
    s.bands.clear();
    for (std::size_t k = 0; k < b->size(); ++k) {
      ObjectReader br((*b)[k], r.name("bands") + "[" + std::to_string(k) + "]");
      ChangeRateBand band;
      br.get("lo", band.lo);
      br.get("hi", band.hi);
      br.get("weight", band.weight);
      br.finish();
      s.bands.push_back(band);
    }
  }
  r.finish();
  return s;
}

}  // namespace detail

inline UpgradeSampling preset_sampling(const std::string& preset) {
  if (preset == "detection") return detection_sampling();
  if (preset == "upgrade_heavy") return upgrade_heavy_sampling();
  return calibrated_sampling();
}

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  RunConfig c;
  ObjectReader r(j, "");
  r.get("global_seed", c.global_seed);
  r.get("output_dir", c.output_dir);
  if (auto* w = r.child("window")) {
    ObjectReader o(*w, "window");
    o.get("W_hours", c.window.W_hours);
    o.get("S_hours", c.window.S_hours);
    o.get("theta", c.window.theta);
    o.get("mu", c.window.mu);
    o.get("m", c.window.m);
    o.get("max_missing_frac", c.window.max_missing_frac);
    o.get("point_stride_min", c.window.point_stride_min);
    o.finish();
  }
  if (auto* l = r.child("lsdd")) {
    ObjectReader o(*l, "lsdd");
    o.get("max_centers", c.lsdd.max_centers);
    o.get("sigma_scales", c.lsdd.sigma_scales);
    o.get("lambda_grid", c.lsdd.lambda_grid);
    o.get("cv_folds", c.lsdd.cv_folds);
    o.finish();
  }
  if (auto* n = r.child("normalizer")) {
    ObjectReader o(*n, "normalizer");
    o.get("rps_floor", c.normalizer.rps_floor);
    o.get("min_samples", c.normalizer.min_samples);
    o.get("red_min", c.normalizer.red_min);
    o.get("red_max", c.normalizer.red_max);
    o.get("workload_weighted", c.normalizer.workload_weighted);
    o.get("window_hours", c.red_window_hours);
    o.finish();
  }
  if (auto* p = r.child("pattern")) {
    ObjectReader o(*p, "pattern");
    o.get("max_segments", c.pattern.max_segments);
    o.get("min_leaf", c.pattern.min_leaf);
    o.get("improvement_min", c.pattern.improvement_min);
    o.get("quantile_bins", c.pattern.quantile_bins);
    o.finish();
  }
  if (auto* f = r.child("forecaster")) {
    ObjectReader o(*f, "forecaster");
    std::string m = to_string(c.forecast_method);
    o.get("method", m);
    c.forecast_method = parse_forecast_method(m);
    o.finish();
  }
  if (auto* p = r.child("policy_default")) c.policy_default = detail::read_policy(*p, "policy_default", c.policy_default);
  if (auto* u = r.child("u_star_range")) {
    if (!u->is_array() || u->size() != 2) throw Error("config: 'u_star_range' must be [lo, hi]");
    c.u_star_range = std::pair{(*u)[0].get<double>(), (*u)[1].get<double>()};
  }
  if (auto* ps = r.child("policies")) {
    if (!ps->is_object()) throw Error("config: 'policies' must be an object");
    for (auto it = ps->begin(); it != ps->end(); ++it)
      c.policies[it.key()] = detail::read_policy(it.value(), "policies." + it.key(), c.policy_default);
  }
  if (auto* s = r.child("simulator")) {
    ObjectReader o(*s, "simulator");
    o.get("modes", c.modes);
    o.get("warmup_hours", c.warmup_hours);
    o.get("timeseries_stride_min", c.timeseries_stride_min);
    if (auto* l = o.child("latency")) {
      ObjectReader lo(*l, "simulator.latency");
      std::string mode = "synthetic";
      lo.get("mode", mode);
      if (mode == "synthetic") c.latency.mode = LatencyModel::Mode::kSynthetic;
      else if (mode == "table") c.latency.mode = LatencyModel::Mode::kTable;
      else throw Error("config: simulator.latency.mode must be synthetic or table");
      lo.get("rho_0", c.latency.rho_0);
      lo.get("kappa", c.latency.kappa);
      lo.get("rps_edges", c.latency.table.rps_edges);
      lo.get("util_edges", c.latency.table.util_edges);
      lo.get("p95_ms", c.latency.table.p95_ms);
      lo.finish();
    }
    o.finish();
  }
  if (auto* g = r.child("gen")) {
    ObjectReader o(*g, "gen");
    o.get("preset", c.gen.preset);
    o.get("services", c.gen.services);
    o.get("days", c.gen.days);
    o.get("target_mean_utilization", c.gen.target_mean_utilization);
    if (auto* f = o.child("fleet")) {
      if (!f->is_array()) throw Error("config: 'gen.fleet' must be an array");
      std::vector<FleetEntry> es;
      for (std::size_t k = 0; k < f->size(); ++k) {
        ObjectReader fo((*f)[k], "gen.fleet[" + std::to_string(k) + "]");
        FleetEntry e;
        fo.get("machine_type", e.machine_type);
        fo.get("machine_count", e.machine_count);
        fo.get("cores_per_machine", e.cores_per_machine);
        fo.get("is_standard", e.is_standard);
        fo.finish();
        es.push_back(e);
      }
      c.gen.fleet = es;
    }
    if (auto* u = o.child("upgrades")) c.gen.upgrades = detail::read_sampling(*u, "gen.upgrades", preset_sampling(c.gen.preset));
    o.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config " + path + ": " + e.what());
  }
  return parse_config(j);
}

/// Canonical JSON of the effective configuration; its hash goes in manifests.
inline nlohmann::ordered_json config_json(const RunConfig& c) {
  using J = nlohmann::ordered_json;
  auto policy = [](const ServicePolicy& p) {
    J j{{"U_star", p.U_star}, {"psi", p.psi}, {"r_std", p.r_std}, {"h_p_hours", p.h_p_hours}, {"n_min", p.n_min}};
    if (p.rho_star) j["rho_star"] = *p.rho_star;
    if (p.max_step_fraction) j["max_step_fraction"] = *p.max_step_fraction;
    return j;
  };
  J j;
  j["global_seed"] = c.global_seed;
  j["output_dir"] = c.output_dir;
  j["window"] = {{"W_hours", c.window.W_hours}, {"S_hours", c.window.S_hours}, {"theta", c.window.theta},
                 {"mu", c.window.mu},           {"m", c.window.m},             {"max_missing_frac", c.window.max_missing_frac},
                 {"point_stride_min", c.window.point_stride_min}};
  j["lsdd"] = {{"max_centers", c.lsdd.max_centers}, {"sigma_scales", c.lsdd.sigma_scales},
               {"lambda_grid", c.lsdd.lambda_grid}, {"cv_folds", c.lsdd.cv_folds}};
  j["normalizer"] = {{"rps_floor", c.normalizer.rps_floor},   {"min_samples", c.normalizer.min_samples},
                     {"red_min", c.normalizer.red_min},       {"red_max", c.normalizer.red_max},
                     {"workload_weighted", c.normalizer.workload_weighted}, {"window_hours", c.red_window_hours}};
  j["pattern"] = {{"max_segments", c.pattern.max_segments}, {"min_leaf", c.pattern.min_leaf},
                  {"improvement_min", c.pattern.improvement_min}, {"quantile_bins", c.pattern.quantile_bins}};
  j["forecaster"] = {{"method", to_string(c.forecast_method)}};
  j["policy_default"] = policy(c.policy_default);
  if (c.u_star_range) j["u_star_range"] = {c.u_star_range->first, c.u_star_range->second};
  J ps = J::object();
  for (const auto& [sid, p] : c.policies) ps[sid] = policy(p);
  j["policies"] = ps;
  J lat = {{"mode", c.latency.mode == LatencyModel::Mode::kTable ? "table" : "synthetic"},
           {"rho_0", c.latency.rho_0},
           {"kappa", c.latency.kappa}};
  if (c.latency.mode == LatencyModel::Mode::kTable) {
    lat["rps_edges"] = c.latency.table.rps_edges;
    lat["util_edges"] = c.latency.table.util_edges;
    lat["p95_ms"] = c.latency.table.p95_ms;
  }
  j["simulator"] = {{"modes", c.modes},
                    {"warmup_hours", c.warmup_hours},
                    {"timeseries_stride_min", c.timeseries_stride_min},
                    {"latency", lat}};
  J g = {{"preset", c.gen.preset},
         {"services", c.gen.services},
         {"days", c.gen.days},
         {"target_mean_utilization", c.gen.target_mean_utilization}};
  if (c.gen.fleet) {
    J f = J::array();
    for (const auto& e : *c.gen.fleet)
      f.push_back({{"machine_type", e.machine_type},
                   {"machine_count", e.machine_count},
                   {"cores_per_machine", e.cores_per_machine},
                   {"is_standard", e.is_standard}});
    g["fleet"] = f;
  }
  if (c.gen.upgrades) {
    const auto& u = *c.gen.upgrades;
    J b = J::array();
    for (const auto& band : u.bands) b.push_back({{"lo", band.lo}, {"hi", band.hi}, {"weight", band.weight}});
    g["upgrades"] = {{"interval_min_days", u.interval_min_days}, {"interval_max_days", u.interval_max_days},
                     {"duration_min_hours", u.duration_min_hours}, {"duration_max_hours", u.duration_max_hours},
                     {"p_increase", u.p_increase},               {"magnitude_median", u.magnitude_median},
                     {"magnitude_log_sigma", u.magnitude_log_sigma}, {"min_change", u.min_change},
                     {"max_change", u.max_change},               {"max_duration_min", u.max_duration_min},
                     {"bands", b}};
  }
  j["gen"] = g;
  return j;
}

/// Generator spec implied by the gen section and the global seed.
inline GenSpec gen_spec(const RunConfig& c) {
  CorpusOptions opt;
  opt.seed = c.global_seed;
  opt.services = c.gen.services;
  opt.days = c.gen.days;
  opt.sampling = c.gen.upgrades ? *c.gen.upgrades : preset_sampling(c.gen.preset);
  opt.target_mean_utilization = c.gen.target_mean_utilization;
  opt.r_std_mcore = c.policy_default.r_std;
  MachineFleet fleet = c.gen.fleet ? MachineFleet(*c.gen.fleet) : default_fleet();
  return default_corpus(opt, std::move(fleet));
}

}  // namespace humas
