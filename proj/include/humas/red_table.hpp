#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "humas/common.hpp"

namespace humas {

/// One resource-efficiency-difference factor for a (service, machine type).
struct RedEntry {
  std::string service_id;
  std::string machine_type;
  double red = 1.0;
  std::int64_t sample_count = 0;
  Minute from_ts = 0;
  Minute to_ts = 0;
  bool low_confidence = false;
};

/// RED factors keyed by (service, machine type). Produced fresh per
/// adjustment epoch and swapped as a whole.
class RedTable {
 public:
  void upsert(RedEntry e) {
    auto key = std::make_pair(e.service_id, e.machine_type);
    entries_[std::move(key)] = std::move(e);
  }

  std::optional<double> factor(const std::string& service, const std::string& type) const {
    auto it = entries_.find({service, type});
    if (it == entries_.end()) return std::nullopt;
    return it->second.red;
  }

  const RedEntry* find(const std::string& service, const std::string& type) const {
    auto it = entries_.find({service, type});
    return it == entries_.end() ? nullptr : &it->second;
  }

  /// Table with red = 1 for every listed type (the no-normalization table).
  static RedTable uniform(const std::string& service, const std::vector<std::string>& types) {
    RedTable t;
    for (const auto& ty : types) t.upsert(RedEntry{service, ty, 1.0, 0, 0, 0, false});
    return t;
  }

  void merge(const RedTable& other) {
    for (const auto& [k, e] : other.entries_) entries_[k] = e;
  }

  std::vector<RedEntry> entries() const {
    std::vector<RedEntry> out;
    out.reserve(entries_.size());
    for (const auto& [k, e] : entries_) out.push_back(e);
    return out;
  }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, RedEntry> entries_;
};

/// RED export CSV: service_id,machine_type,red,sample_count,low_confidence
inline void write_red_csv(const RedTable& table, std::ostream& os) {
  os << "service_id,machine_type,red,sample_count,low_confidence\n";
  for (const auto& e : table.entries()) {
    os << e.service_id << ',' << e.machine_type << ',' << fmt_g9(e.red) << ',' << e.sample_count
       << ',' << (e.low_confidence ? 1 : 0) << '\n';
  }
}

inline void write_red_csv(const RedTable& table, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_red_csv(table, os);
}

}  // namespace humas
