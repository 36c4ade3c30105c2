#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "humas/common.hpp"
#include "humas/config.hpp"
#include "humas/drift.hpp"
#include "humas/parallel.hpp"
#include "humas/sim.hpp"
#include "humas/trace.hpp"

#ifndef HUMAS_LAB_VERSION
#define HUMAS_LAB_VERSION "0.1.0"
#endif

namespace humas {

/// Runs the detector on every service; results keep the input order.
inline std::vector<ServiceDetections> detect_all(const std::vector<ServiceTrace>& traces, const MachineFleet& fleet,
                                                 const DetectOptions& opt, unsigned threads) {
  std::vector<ServiceDetections> out(traces.size());
  parallel_for(traces.size(), threads,
               [&](std::size_t k) { out[k] = detect_service(traces[k], fleet.standard_type(), opt); });
  return out;
}

inline DriftMap drift_map(const std::vector<ServiceDetections>& dets) {
  DriftMap m;
  for (const auto& d : dets) m[d.service_id] = d.drifts;
  return m;
}

inline nlohmann::ordered_json score_json(const DetectionScore& s) {
  nlohmann::ordered_json j;
  j["TDD"] = s.tdd;
  j["FDD"] = s.fdd;
  j["DD"] = s.dd;
  j["upgrades"] = s.upgrades;
  j["matched_upgrades"] = s.matched_upgrades;
  j["precision"] = s.precision ? nlohmann::ordered_json(*s.precision) : nlohmann::ordered_json("undefined");
  j["recall"] = s.recall ? nlohmann::ordered_json(*s.recall) : nlohmann::ordered_json("undefined");
  return j;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return "missing";
  std::ostringstream ss;
  ss << is.rdbuf();
  return hex64(fnv1a(ss.str()));
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot open " + p.string() + " for writing");
  os << s;
  if (!os) throw Error("write failed for " + p.string());
}

inline void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) { write_text(p, j.dump(2) + "\n"); }

/// Reproducibility manifest: no timestamps, only content hashes.
inline nlohmann::ordered_json manifest(const std::string& command, const RunConfig& cfg,
                                       const std::vector<std::string>& inputs,
                                       const std::vector<std::filesystem::path>& outputs) {
  nlohmann::ordered_json j;
  j["tool"] = "humas-lab";
  j["version"] = HUMAS_LAB_VERSION;
  j["command"] = command;
  const auto cj = config_json(cfg);
  j["config_hash"] = hex64(fnv1a(cj.dump()));
  j["global_seed"] = cfg.global_seed;
  j["seed_derivation"] = "splitmix64(fnv1a(tag, key) ^ splitmix64(global_seed) ^ splitmix64(index + c))";
  nlohmann::ordered_json in = nlohmann::ordered_json::object();
  for (const auto& p : inputs) in[std::filesystem::path(p).filename().string()] = file_digest(p);
  j["inputs"] = in;
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& p : outputs) out[p.filename().string()] = file_digest(p.string());
  j["outputs"] = out;
  j["config"] = cj;
  return j;
}

}  // namespace humas
