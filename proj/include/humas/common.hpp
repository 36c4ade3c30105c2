#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace humas {

/// Integer minute index since the trace origin.
using Minute = std::int64_t;

inline constexpr Minute kMinutesPerHour = 60;
inline constexpr Minute kMinutesPerDay = 1440;

/// Base error for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

struct Sink {
  Level threshold = Level::kWarn;
  std::function<void(Level, std::string_view)> write;
};

inline Sink& sink() {
  static Sink s{Level::kWarn, [](Level lvl, std::string_view msg) {
                  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
                  std::cerr << "[humas:" << kNames[static_cast<int>(lvl)] << "] " << msg << '\n';
                }};
  return s;
}

inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

inline void set_level(Level lvl) { sink().threshold = lvl; }

inline void emit(Level lvl, std::string_view msg) {
  auto& s = sink();
  if (lvl < s.threshold || !s.write) return;
  std::lock_guard lock(sink_mutex());
  s.write(lvl, msg);
}

inline void debug(std::string_view msg) { emit(Level::kDebug, msg); }
inline void info(std::string_view msg) { emit(Level::kInfo, msg); }
inline void warn(std::string_view msg) { emit(Level::kWarn, msg); }

}  // namespace log

// Stable hashing for seed derivation. std::hash is not stable across
// standard libraries, so the per-component seeds use FNV-1a + splitmix64.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for one component instance: hash(tag, key, index, global seed).
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view tag,
                                 std::string_view key = {}, std::uint64_t index = 0) {
  std::uint64_t h = fnv1a(tag);
  h = fnv1a(key, h ^ 0x5bd1e995ULL);
  return splitmix64(h ^ splitmix64(global_seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Fixed 9-significant-digit formatting used by every CSV writer.
inline std::string fmt_g9(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[40];
  int n = std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

namespace csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Splits one unquoted comma-separated line.
inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline bool parse(std::string_view s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size() && std::isfinite(out);
}

inline bool parse(std::string_view s, std::int64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

/// Throws an Error naming `what` and the line when `s` is not a number.
template <typename T>
T field(std::string_view s, std::string_view what, std::size_t line_no) {
  T v{};
  if (!parse(s, v)) {
    throw Error("line " + std::to_string(line_no) + ": invalid " + std::string(what) + " '" +
                std::string(s) + "'");
  }
  return v;
}

}  // namespace csv

inline bool approx_rel(double a, double b, double rel = 1e-9) {
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace humas
