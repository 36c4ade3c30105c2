#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "humas/common.hpp"
#include "humas/red_table.hpp"

namespace humas {

/// One per-minute, per-machine-type observation of a service.
struct MetricSample {
  Minute ts = 0;
  std::string service_id;
  std::string machine_type;
  std::int64_t containers = 0;
  double rps_per_container = 0.0;    // requests/second
  double usage_per_container = 0.0;  // mCore
};

struct FleetEntry {
  std::string machine_type;
  std::int64_t machine_count = 0;
  std::int64_t cores_per_machine = 0;
  bool is_standard = false;
};

/// Machine types of a cluster with exactly one designated standard type.
class MachineFleet {
 public:
  MachineFleet() = default;
  explicit MachineFleet(std::vector<FleetEntry> entries) : entries_(std::move(entries)) { validate(); }

  const std::vector<FleetEntry>& entries() const { return entries_; }

  const FleetEntry& standard() const {
    for (const auto& e : entries_)
      if (e.is_standard) return e;
    throw Error("fleet has no standard machine type");
  }
  const std::string& standard_type() const { return standard().machine_type; }

  const FleetEntry* find(std::string_view type) const {
    for (const auto& e : entries_)
      if (e.machine_type == type) return &e;
    return nullptr;
  }
  bool contains(std::string_view type) const { return find(type) != nullptr; }

  std::optional<std::size_t> index_of(std::string_view type) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].machine_type == type) return i;
    return std::nullopt;
  }

  std::vector<std::string> types() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.machine_type);
    return out;
  }

  std::int64_t total_machines() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.machine_count;
    return n;
  }

 private:
  void validate() const {
    int standards = 0;
    std::set<std::string> seen;
    for (const auto& e : entries_) {
      if (e.machine_type.empty()) throw Error("fleet: empty machine_type");
      if (!seen.insert(e.machine_type).second) throw Error("fleet: duplicate machine_type " + e.machine_type);
      if (e.machine_count <= 0) throw Error("fleet: machine_count must be positive for " + e.machine_type);
      if (e.cores_per_machine <= 0) throw Error("fleet: cores_per_machine must be positive for " + e.machine_type);
      standards += e.is_standard ? 1 : 0;
    }
    if (standards != 1) throw Error("fleet: exactly one standard machine type required, found " + std::to_string(standards));
  }

  std::vector<FleetEntry> entries_;
};

inline MachineFleet parse_fleet(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<FleetEntry> entries;
  while (std::getline(is, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    if (line_no == 1) {
      if (csv::trim(line) != "machine_type,machine_count,cores_per_machine,is_standard")
        throw Error("fleet CSV: unexpected header '" + line + "'");
      continue;
    }
    auto f = csv::split(line);
    if (f.size() != 4) throw Error("fleet CSV line " + std::to_string(line_no) + ": expected 4 fields");
    FleetEntry e;
    e.machine_type = std::string(f[0]);
    e.machine_count = csv::field<std::int64_t>(f[1], "machine_count", line_no);
    e.cores_per_machine = csv::field<std::int64_t>(f[2], "cores_per_machine", line_no);
    if (f[3] != "0" && f[3] != "1")
      throw Error("fleet CSV line " + std::to_string(line_no) + ": is_standard must be 0 or 1");
    e.is_standard = f[3] == "1";
    entries.push_back(std::move(e));
  }
  return MachineFleet(std::move(entries));
}

inline MachineFleet load_fleet(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open fleet file " + path);
  return parse_fleet(is);
}

inline void write_fleet(const MachineFleet& fleet, std::ostream& os) {
  os << "machine_type,machine_count,cores_per_machine,is_standard\n";
  for (const auto& e : fleet.entries())
    os << e.machine_type << ',' << e.machine_count << ',' << e.cores_per_machine << ','
       << (e.is_standard ? 1 : 0) << '\n';
}

/// Samples of one machine type, aligned to the service's ts grid.
/// `present[i] == 0` marks an explicit gap; gaps are never interpolated.
struct TypeSeries {
  std::string machine_type;
  std::vector<std::int64_t> containers;
  std::vector<double> rps_per_container;
  std::vector<double> usage_per_container;
  std::vector<std::uint8_t> present;

  void resize(std::size_t n) {
    containers.assign(n, 0);
    rps_per_container.assign(n, 0.0);
    usage_per_container.assign(n, 0.0);
    present.assign(n, 0);
  }
  bool has(std::size_t i) const { return present[i] != 0; }
};

/// Per-service trace: one aligned TypeSeries per machine type the service ran on.
struct ServiceTrace {
  std::string service_id;
  Minute start_ts = 0;
  Minute sampling_period = 1;
  std::size_t length = 0;
  std::vector<TypeSeries> types;  // fleet order

  Minute ts_at(std::size_t i) const { return start_ts + static_cast<Minute>(i) * sampling_period; }

  std::optional<std::size_t> index_of(Minute ts) const {
    if (ts < start_ts || (ts - start_ts) % sampling_period != 0) return std::nullopt;
    auto i = static_cast<std::size_t>((ts - start_ts) / sampling_period);
    if (i >= length) return std::nullopt;
    return i;
  }

  const TypeSeries* type(std::string_view name) const {
    for (const auto& t : types)
      if (t.machine_type == name) return &t;
    return nullptr;
  }

  std::vector<std::string> type_names() const {
    std::vector<std::string> out;
    for (const auto& t : types) out.push_back(t.machine_type);
    return out;
  }

  /// Samples per day at this trace's sampling period.
  std::size_t samples_per_day() const { return static_cast<std::size_t>(kMinutesPerDay / sampling_period); }
};

/// Contents of the JSON sidecar written next to a trace CSV.
struct TraceHeader {
  std::string origin_iso8601 = "1970-01-01T00:00:00Z";
  Minute sampling_period_min = 1;
};

inline std::string header_path_for(const std::string& trace_path) { return trace_path + ".header.json"; }

inline void write_trace_header(const TraceHeader& h, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  nlohmann::ordered_json j;
  j["origin_iso8601"] = h.origin_iso8601;
  j["sampling_period_min"] = h.sampling_period_min;
  os << j.dump(2) << '\n';
}

inline TraceHeader read_trace_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open trace header " + path);
  auto j = nlohmann::json::parse(is);
  TraceHeader h;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "origin_iso8601") h.origin_iso8601 = it.value().get<std::string>();
    else if (it.key() == "sampling_period_min") h.sampling_period_min = it.value().get<Minute>();
    else throw Error("trace header: unknown key '" + it.key() + "'");
  }
  if (h.sampling_period_min <= 0) throw Error("trace header: sampling_period_min must be positive");
  return h;
}

struct LoadOptions {
  /// Sanity bound on per-container usage: standard quota (4000 mCore) x 10.
  double max_usage_mcore = 40000.0;
  Minute sampling_period = 1;
};

inline constexpr std::string_view kTraceHeader =
    "ts_minute,service_id,machine_type,containers,rps_per_container,cpu_usage_mcore_per_container";

/// Parses the trace CSV. Services come back sorted by id; types follow fleet order.
inline std::vector<ServiceTrace> parse_trace(std::istream& is, const MachineFleet& fleet,
                                             const LoadOptions& opts = {}) {
  struct Raw {
    std::map<std::string, std::vector<MetricSample>> by_type;
  };
  std::map<std::string, Raw> raw;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    if (!header_seen) {
      if (csv::trim(line) != kTraceHeader) throw Error("line " + std::to_string(line_no) + ": unexpected trace header");
      header_seen = true;
      continue;
    }
    auto f = csv::split(line);
    if (f.size() != 6)
      throw Error("line " + std::to_string(line_no) + ": expected 6 fields, got " + std::to_string(f.size()));
    MetricSample s;
    s.ts = csv::field<std::int64_t>(f[0], "ts_minute", line_no);
    s.service_id = std::string(f[1]);
    s.machine_type = std::string(f[2]);
    s.containers = csv::field<std::int64_t>(f[3], "containers", line_no);
    s.rps_per_container = csv::field<double>(f[4], "rps_per_container", line_no);
    s.usage_per_container = csv::field<double>(f[5], "cpu_usage_mcore_per_container", line_no);
    const auto where = "line " + std::to_string(line_no) + ": ";
    if (s.service_id.empty()) throw Error(where + "empty service_id");
    if (!fleet.contains(s.machine_type))
      throw Error(where + "unknown machine_type '" + s.machine_type + "' (not in fleet)");
    if (s.containers < 0) throw Error(where + "negative containers");
    if (s.rps_per_container < 0 || s.usage_per_container < 0) throw Error(where + "negative metric value");
    if (s.containers == 0 && (s.rps_per_container != 0 || s.usage_per_container != 0))
      throw Error(where + "containers = 0 requires zero rps and usage");
    if (s.usage_per_container > opts.max_usage_mcore)
      throw Error(where + "usage " + fmt_g9(s.usage_per_container) + " mCore exceeds sanity bound");
    auto& seq = raw[s.service_id].by_type[s.machine_type];
    if (!seq.empty() && s.ts <= seq.back().ts)
      throw Error(where + "non-monotonic ts " + std::to_string(s.ts) + " for (" + s.service_id + ", " +
                  s.machine_type + ")");
    seq.push_back(std::move(s));
  }
  if (!header_seen) throw Error("trace CSV is empty");

  std::vector<ServiceTrace> out;
  for (auto& [sid, r] : raw) {
    Minute lo = std::numeric_limits<Minute>::max(), hi = std::numeric_limits<Minute>::min();
    for (const auto& [ty, seq] : r.by_type) {
      lo = std::min(lo, seq.front().ts);
      hi = std::max(hi, seq.back().ts);
    }
    ServiceTrace st;
    st.service_id = sid;
    st.start_ts = lo;
    st.sampling_period = opts.sampling_period;
    st.length = static_cast<std::size_t>((hi - lo) / opts.sampling_period) + 1;
    for (const auto& fe : fleet.entries()) {
      auto it = r.by_type.find(fe.machine_type);
      if (it == r.by_type.end()) continue;
      TypeSeries ts;
      ts.machine_type = fe.machine_type;
      ts.resize(st.length);
      for (const auto& s : it->second) {
        if ((s.ts - lo) % opts.sampling_period != 0)
          throw Error("service " + sid + ": ts " + std::to_string(s.ts) + " off the sampling grid");
        auto i = static_cast<std::size_t>((s.ts - lo) / opts.sampling_period);
        ts.containers[i] = s.containers;
        ts.rps_per_container[i] = s.rps_per_container;
        ts.usage_per_container[i] = s.usage_per_container;
        ts.present[i] = 1;
      }
      st.types.push_back(std::move(ts));
    }
    out.push_back(std::move(st));
  }
  return out;
}

/// Loads a trace CSV; reads the sampling period from the header sidecar when present.
inline std::vector<ServiceTrace> load_trace(const std::string& path, const MachineFleet& fleet,
                                            LoadOptions opts = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open trace file " + path);
  if (std::filesystem::exists(header_path_for(path)))
    opts.sampling_period = read_trace_header(header_path_for(path)).sampling_period_min;
  return parse_trace(is, fleet, opts);
}

/// Writes rows ordered by (service, ts, type); gaps are omitted.
inline void write_trace(const std::vector<ServiceTrace>& traces, std::ostream& os) {
  os << kTraceHeader << '\n';
  std::string row;
  for (const auto& st : traces) {
    for (std::size_t i = 0; i < st.length; ++i) {
      for (const auto& ts : st.types) {
        if (!ts.has(i)) continue;
        row.clear();
        row += std::to_string(st.ts_at(i));
        row += ',';
        row += st.service_id;
        row += ',';
        row += ts.machine_type;
        row += ',';
        row += std::to_string(ts.containers[i]);
        row += ',';
        row += fmt_g9(ts.rps_per_container[i]);
        row += ',';
        row += fmt_g9(ts.usage_per_container[i]);
        row += '\n';
        os << row;
      }
    }
  }
}

inline void write_trace(const std::vector<ServiceTrace>& traces, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_trace(traces, os);
}

/// Container-weighted aggregate of one timestamp across machine types.
struct TypeAggregate {
  std::int64_t containers = 0;
  double mean_rps = 0.0;
  double mean_norm_usage = 0.0;
};

/// Aggregates index `i` of `trace` over types with per-type usage divided by RED.
/// Returns nullopt (the missing marker) when any type has a gap at i or n_t = 0.
inline std::optional<TypeAggregate> aggregate_at_index(const ServiceTrace& trace, const RedTable& red,
                                                       std::size_t i) {
  std::int64_t n = 0;
  double rps_sum = 0.0, usage_sum = 0.0;
  for (const auto& ts : trace.types) {
    if (!ts.has(i)) return std::nullopt;
    const auto nj = ts.containers[i];
    if (nj == 0) continue;
    auto f = red.factor(trace.service_id, ts.machine_type);
    if (!f) throw Error("no RED factor for service " + trace.service_id + " on " + ts.machine_type);
    n += nj;
    rps_sum += static_cast<double>(nj) * ts.rps_per_container[i];
    usage_sum += static_cast<double>(nj) * (ts.usage_per_container[i] / *f);
  }
  if (n == 0) return std::nullopt;
  const auto dn = static_cast<double>(n);
  return TypeAggregate{n, rps_sum / dn, usage_sum / dn};
}

inline std::optional<TypeAggregate> aggregate_over_types(const ServiceTrace& trace, const RedTable& red, Minute t) {
  auto i = trace.index_of(t);
  if (!i) throw Error("ts " + std::to_string(t) + " not on the grid of service " + trace.service_id);
  return aggregate_at_index(trace, red, *i);
}

}  // namespace humas
