#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "humas/common.hpp"
#include "humas/trace.hpp"

namespace humas {

/// A version upgrade: RUE of every machine type is multiplied by `rue_factor`,
/// ramped linearly over [start_ts, end_ts).
struct UpgradeEvent {
  std::string service_id;
  Minute start_ts = 0;
  Minute end_ts = 0;
  double rue_factor = 1.0;

  double change_rate() const { return rue_factor - 1.0; }
};

/// Uniform band of upgrade change-rate magnitudes |r|.
struct ChangeRateBand {
  double lo = 0.0;
  double hi = 0.0;
  double weight = 1.0;
};

/// How upgrades are drawn when a service has no explicit list.
struct UpgradeSampling {
  double interval_min_days = 2.0;
  double interval_max_days = 20.0;
  double duration_min_hours = 1.0;
  double duration_max_hours = 8.0;
  double p_increase = 0.57;
  // |r| ~ median * exp(log_sigma * z) unless `bands` is non-empty.
  double magnitude_median = 0.08;
  double magnitude_log_sigma = 1.0;
  std::vector<ChangeRateBand> bands;
  double min_change = -0.771;
  double max_change = 1.061;
  Minute max_duration_min = 480;
};

struct ServiceGenSpec {
  std::string service_id;
  double base_total_rps = 1e5;
  double daily_amplitude = 0.4;
  double phase = 0.0;
  double noise_cv = 0.03;
  double base_rue = 4.0;  // mCore * s / request
  std::map<std::string, std::int64_t> containers;
  std::map<std::string, double> true_red;
  std::vector<UpgradeEvent> upgrades;
};

struct GenSpec {
  std::uint64_t seed = 0;
  int days = 60;
  MachineFleet fleet;
  std::vector<ServiceGenSpec> services;
  std::optional<UpgradeSampling> upgrade_sampling;

  void validate() const {
    if (days <= 0) throw Error("gen: days must be positive");
    if (services.empty()) throw Error("gen: no services");
    const auto& std_type = fleet.standard_type();
    const Minute horizon = static_cast<Minute>(days) * kMinutesPerDay;
    const Minute max_dur = upgrade_sampling ? upgrade_sampling->max_duration_min : 480;
    std::set<std::string> ids;
    for (const auto& s : services) {
      const auto where = "gen service " + s.service_id + ": ";
      if (s.service_id.empty() || !ids.insert(s.service_id).second) throw Error("gen: empty or duplicate service_id");
      if (s.base_total_rps < 0) throw Error(where + "base_total_rps must be >= 0");
      if (s.daily_amplitude < 0 || s.daily_amplitude >= 1) throw Error(where + "daily_amplitude must be in [0,1)");
      if (s.noise_cv < 0) throw Error(where + "noise_cv must be >= 0");
      if (s.base_rue <= 0) throw Error(where + "base_rue must be positive");
      std::int64_t total = 0;
      for (const auto& [ty, n] : s.containers) {
        if (!fleet.contains(ty)) throw Error(where + "unknown machine type " + ty);
        if (n < 0) throw Error(where + "negative container count");
        total += n;
      }
      if (total <= 0) throw Error(where + "needs at least one container");
      for (const auto& [ty, r] : s.true_red) {
        if (!fleet.contains(ty)) throw Error(where + "true_red for unknown type " + ty);
        if (!(r > 0)) throw Error(where + "true_red must be positive");
      }
      if (auto it = s.true_red.find(std_type); it != s.true_red.end() && it->second != 1.0)
        throw Error(where + "true_red of the standard type must be 1.0");
      Minute prev_end = -1;
      for (const auto& u : s.upgrades) {
        if (u.start_ts >= u.end_ts) throw Error(where + "upgrade start_ts must precede end_ts");
        if (u.end_ts - u.start_ts > max_dur) throw Error(where + "upgrade longer than the max duration");
        if (!(u.rue_factor > 0)) throw Error(where + "rue_factor must be positive");
        if (u.start_ts < prev_end) throw Error(where + "overlapping or unsorted upgrades");
        if (u.end_ts > horizon) throw Error(where + "upgrade beyond trace end");
        prev_end = u.end_ts;
      }
    }
    if (upgrade_sampling) {
      const auto& us = *upgrade_sampling;
      if (us.interval_min_days <= 0 || us.interval_max_days < us.interval_min_days)
        throw Error("gen: bad upgrade interval range");
      if (us.duration_min_hours <= 0 || us.duration_max_hours < us.duration_min_hours ||
          us.duration_max_hours * 60.0 > static_cast<double>(us.max_duration_min))
        throw Error("gen: bad upgrade duration range");
      if (us.min_change < -0.771 - 1e-12 || us.max_change > 1.061 + 1e-12 || us.min_change >= us.max_change)
        throw Error("gen: change-rate envelope must lie within [-0.771, 1.061]");
      for (const auto& b : us.bands)
        if (b.lo < 0 || b.hi < b.lo || b.weight <= 0) throw Error("gen: bad change-rate band");
    }
  }
};

struct GeneratedCorpus {
  std::vector<ServiceTrace> traces;
  std::vector<UpgradeEvent> upgrades;
  std::map<std::string, std::map<std::string, double>> true_red;
};

namespace detail {

/// Mean-one lognormal factor with the given coefficient of variation, z clipped at +-4.
inline double lognormal_factor(std::mt19937_64& rng, double cv) {
  if (cv <= 0) return 1.0;
  const double sigma = std::sqrt(std::log1p(cv * cv));
  double z = std::normal_distribution<double>(0.0, 1.0)(rng);
  z = std::clamp(z, -4.0, 4.0);
  return std::exp(sigma * z - 0.5 * sigma * sigma);
}

inline double sample_change_rate(std::mt19937_64& rng, const UpgradeSampling& us) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double mag;
  if (!us.bands.empty()) {
    double total = 0;
    for (const auto& b : us.bands) total += b.weight;
    double pick = unit(rng) * total;
    const ChangeRateBand* band = &us.bands.back();
    for (const auto& b : us.bands) {
      if (pick < b.weight) {
        band = &b;
        break;
      }
      pick -= b.weight;
    }
    mag = band->lo + unit(rng) * (band->hi - band->lo);
  } else {
    mag = us.magnitude_median * std::exp(us.magnitude_log_sigma * std::normal_distribution<double>(0.0, 1.0)(rng));
  }
  const bool up = unit(rng) < us.p_increase;
  return std::clamp(up ? mag : -mag, us.min_change, us.max_change);
}

}  // namespace detail

/// Draws the upgrade schedule of one service over `days`.
inline std::vector<UpgradeEvent> sample_upgrades(const std::string& service_id, int days, const UpgradeSampling& us,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Minute horizon = static_cast<Minute>(days) * kMinutesPerDay;
  std::vector<UpgradeEvent> out;
  Minute t = 0;
  while (true) {
    const double interval_days = us.interval_min_days + unit(rng) * (us.interval_max_days - us.interval_min_days);
    const double duration_h = us.duration_min_hours + unit(rng) * (us.duration_max_hours - us.duration_min_hours);
    const double rate = detail::sample_change_rate(rng, us);
    t += static_cast<Minute>(std::llround(interval_days * kMinutesPerDay));
    const Minute dur = std::clamp<Minute>(std::llround(duration_h * 60.0), 1, us.max_duration_min);
    if (t + dur > horizon) break;
    out.push_back(UpgradeEvent{service_id, t, t + dur, 1.0 + rate});
  }
  return out;
}

/// Multiplier on the service's base RUE at minute t given a sorted upgrade list.
inline double rue_multiplier(const std::vector<UpgradeEvent>& upgrades, Minute t) {
  double m = 1.0;
  for (const auto& u : upgrades) {
    if (t >= u.end_ts) {
      m *= u.rue_factor;
    } else if (t >= u.start_ts) {
      const double frac = static_cast<double>(t - u.start_ts) / static_cast<double>(u.end_ts - u.start_ts);
      m *= 1.0 + (u.rue_factor - 1.0) * frac;
    } else {
      break;
    }
  }
  return m;
}

/// Generates per-minute traces with known heterogeneity and upgrades.
/// Identical specs produce identical output.
inline GeneratedCorpus generate(const GenSpec& spec) {
  spec.validate();
  GeneratedCorpus out;
  const std::size_t length = static_cast<std::size_t>(spec.days) * static_cast<std::size_t>(kMinutesPerDay);
  const auto& std_type = spec.fleet.standard_type();

  std::vector<const ServiceGenSpec*> ordered;
  for (const auto& s : spec.services) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->service_id < b->service_id; });

  for (const auto* svc : ordered) {
    std::vector<UpgradeEvent> upgrades = svc->upgrades;
    if (upgrades.empty() && spec.upgrade_sampling)
      upgrades = sample_upgrades(svc->service_id, spec.days, *spec.upgrade_sampling,
                                 derive_seed(spec.seed, "gen.upgrades", svc->service_id));
    std::sort(upgrades.begin(), upgrades.end(), [](const auto& a, const auto& b) { return a.start_ts < b.start_ts; });

    std::mt19937_64 load_rng(derive_seed(spec.seed, "gen.workload", svc->service_id));
    std::mt19937_64 usage_rng(derive_seed(spec.seed, "gen.usage", svc->service_id));

    ServiceTrace st;
    st.service_id = svc->service_id;
    st.start_ts = 0;
    st.sampling_period = 1;
    st.length = length;
    std::vector<double> reds;
    std::int64_t n_total = 0;
    auto& red_out = out.true_red[svc->service_id];
    for (const auto& fe : spec.fleet.entries()) {
      auto it = svc->containers.find(fe.machine_type);
      if (it == svc->containers.end()) continue;
      TypeSeries ts;
      ts.machine_type = fe.machine_type;
      ts.resize(length);
      st.types.push_back(std::move(ts));
      double r = 1.0;
      if (fe.machine_type != std_type) {
        if (auto rt = svc->true_red.find(fe.machine_type); rt != svc->true_red.end()) r = rt->second;
      }
      reds.push_back(r);
      red_out[fe.machine_type] = r;
      n_total += it->second;
    }

    std::size_t next_upgrade = 0;
    double completed = 1.0;
    for (std::size_t i = 0; i < length; ++i) {
      const auto t = static_cast<Minute>(i);
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(kMinutesPerDay) + svc->phase;
      const double x = svc->base_total_rps * (1.0 + svc->daily_amplitude * std::sin(angle)) *
                       detail::lognormal_factor(load_rng, svc->noise_cv);

      while (next_upgrade < upgrades.size() && t >= upgrades[next_upgrade].end_ts)
        completed *= upgrades[next_upgrade++].rue_factor;
      double mult = completed;
      if (next_upgrade < upgrades.size() && t >= upgrades[next_upgrade].start_ts) {
        const auto& u = upgrades[next_upgrade];
        const double frac = static_cast<double>(t - u.start_ts) / static_cast<double>(u.end_ts - u.start_ts);
        mult *= 1.0 + (u.rue_factor - 1.0) * frac;
      }
      const double rue_std = svc->base_rue * mult;
      const double rps = x / static_cast<double>(n_total);

      for (std::size_t k = 0; k < st.types.size(); ++k) {
        auto& ts = st.types[k];
        const auto nj = svc->containers.at(ts.machine_type);
        ts.present[i] = 1;
        ts.containers[i] = nj;
        if (nj == 0) continue;
        ts.rps_per_container[i] = rps;
        ts.usage_per_container[i] = rue_std * reds[k] * rps * detail::lognormal_factor(usage_rng, svc->noise_cv);
      }
    }
    out.traces.push_back(std::move(st));
    out.upgrades.insert(out.upgrades.end(), upgrades.begin(), upgrades.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output files

inline void write_upgrades_csv(const std::vector<UpgradeEvent>& ups, std::ostream& os) {
  os << "service_id,start_ts_minute,end_ts_minute,rue_factor\n";
  for (const auto& u : ups)
    os << u.service_id << ',' << u.start_ts << ',' << u.end_ts << ',' << fmt_g9(u.rue_factor) << '\n';
}

inline std::vector<UpgradeEvent> parse_upgrades_csv(std::istream& is) {
  std::vector<UpgradeEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    if (line_no == 1) {
      if (csv::trim(line) != "service_id,start_ts_minute,end_ts_minute,rue_factor")
        throw Error("upgrades CSV: unexpected header");
      continue;
    }
    auto f = csv::split(line);
    if (f.size() != 4) throw Error("upgrades CSV line " + std::to_string(line_no) + ": expected 4 fields");
    UpgradeEvent u;
    u.service_id = std::string(f[0]);
    u.start_ts = csv::field<std::int64_t>(f[1], "start_ts_minute", line_no);
    u.end_ts = csv::field<std::int64_t>(f[2], "end_ts_minute", line_no);
    u.rue_factor = csv::field<double>(f[3], "rue_factor", line_no);
    if (u.start_ts >= u.end_ts) throw Error("upgrades CSV line " + std::to_string(line_no) + ": start >= end");
    out.push_back(std::move(u));
  }
  return out;
}

inline std::vector<UpgradeEvent> load_upgrades(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open upgrades file " + path);
  return parse_upgrades_csv(is);
}

inline nlohmann::ordered_json true_red_json(const GeneratedCorpus& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [sid, m] : c.true_red) {
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [ty, r] : m) s[ty] = r;
    j[sid] = s;
  }
  return j;
}

inline std::map<std::string, std::map<std::string, double>> load_true_red(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open true-RED file " + path);
  auto j = nlohmann::json::parse(is);
  std::map<std::string, std::map<std::string, double>> out;
  for (auto it = j.begin(); it != j.end(); ++it)
    for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) out[it.key()][jt.key()] = jt.value().get<double>();
  return out;
}

// ---------------------------------------------------------------------------
// Corpus presets

/// Two CPU models: 826X (standard, 96 cores) and 816X (64 cores), 3:1 machine share.
inline MachineFleet default_fleet() {
  return MachineFleet({{"826X", 1500, 96, true}, {"816X", 500, 64, false}});
}

/// Calibrated sampling: intervals U[2,20] days, durations U[1,8] h,
/// 57% increases, |r| lognormal with ~2/3 of upgrades above 5%.
inline UpgradeSampling calibrated_sampling() { return UpgradeSampling{}; }

/// Detection-scoring corpus: 80% of upgrades with |r| in [10%, 50%],
/// 20% with |r| in [0.5%, 2%].
inline UpgradeSampling detection_sampling() {
  UpgradeSampling us;
  us.bands = {{0.10, 0.50, 0.8}, {0.005, 0.02, 0.2}};
  return us;
}

/// More frequent upgrades (every 2-6 days), calibrated magnitudes.
inline UpgradeSampling upgrade_heavy_sampling() {
  UpgradeSampling us;
  us.interval_min_days = 2.0;
  us.interval_max_days = 6.0;
  return us;
}

struct CorpusOptions {
  std::uint64_t seed = 0;
  int services = 50;
  int days = 60;
  UpgradeSampling sampling = calibrated_sampling();
  double target_mean_utilization = 0.45;  // sizes the trace's own deployment
  double r_std_mcore = 4000.0;
};

/// Samples per-service workload, efficiency and heterogeneity parameters.
/// 84% of services get RED(816X) in [1.005, 1.25].
inline GenSpec default_corpus(const CorpusOptions& opt, MachineFleet fleet = default_fleet()) {
  GenSpec spec;
  spec.seed = opt.seed;
  spec.days = opt.days;
  spec.fleet = std::move(fleet);
  spec.upgrade_sampling = opt.sampling;
  const auto& std_type = spec.fleet.standard_type();
  const double total_machines = static_cast<double>(spec.fleet.total_machines());
  for (int k = 0; k < opt.services; ++k) {
    char id[32];
    std::snprintf(id, sizeof(id), "svc-%03d", k);
    std::mt19937_64 rng(derive_seed(opt.seed, "corpus.service", id));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ServiceGenSpec s;
    s.service_id = id;
    s.base_total_rps = std::exp(std::log(2e4) + unit(rng) * (std::log(2e5) - std::log(2e4)));
    s.daily_amplitude = 0.2 + 0.4 * unit(rng);
    s.phase = 2.0 * std::numbers::pi * unit(rng);
    s.noise_cv = 0.02 + 0.03 * unit(rng);
    s.base_rue = 2.0 + 6.0 * unit(rng);
    double mix_red = 0.0;
    for (const auto& fe : spec.fleet.entries()) {
      double r = 1.0;
      if (fe.machine_type != std_type) {
        const double p = unit(rng);
        const double v = unit(rng);
        if (fe.machine_type == "816X") {
          if (p < 0.84) r = 1.005 + v * (1.25 - 1.005);
          else if (p < 0.92) r = 0.9 + v * (1.005 - 0.9);
          else r = 1.25 + v * (1.4 - 1.25);
        } else {
          r = 0.8 + v * 0.5;
        }
      }
      s.true_red[fe.machine_type] = r;
      mix_red += r * static_cast<double>(fe.machine_count) / total_machines;
    }
    const double mean_usage = s.base_total_rps * s.base_rue * mix_red;
    const auto n_total = std::max<std::int64_t>(
        2, static_cast<std::int64_t>(std::ceil(mean_usage / (opt.target_mean_utilization * opt.r_std_mcore))));
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < spec.fleet.entries().size(); ++i) {
      const auto& fe = spec.fleet.entries()[i];
      std::int64_t n;
      if (i + 1 == spec.fleet.entries().size()) {
        n = n_total - assigned;
      } else {
        n = static_cast<std::int64_t>(std::llround(static_cast<double>(n_total) *
                                                   static_cast<double>(fe.machine_count) / total_machines));
      }
      n = std::max<std::int64_t>(n, 1);
      assigned += n;
      s.containers[fe.machine_type] = n;
    }
    spec.services.push_back(std::move(s));
  }
  return spec;
}

}  // namespace humas
