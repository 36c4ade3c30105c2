#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "humas/common.hpp"
#include "humas/red_table.hpp"

namespace humas {

struct ServicePolicy {
  double U_star = 0.5;
  double psi = 0.08;
  double r_std = 4000.0;  // mCore
  double h_p_hours = 1.0;
  std::optional<double> rho_star;  // ms; defaults to latency(U_star)
  std::int64_t n_min = 1;
  std::optional<double> max_step_fraction;

  void validate() const {
    if (!(U_star > 0 && U_star <= 1)) throw Error("policy: U_star must be in (0, 1]");
    if (!(psi >= 0)) throw Error("policy: psi must be >= 0");
    if (!(r_std > 0)) throw Error("policy: r_std must be positive");
    if (!(h_p_hours > 0)) throw Error("policy: h_p_hours must be positive");
    if (n_min < 0) throw Error("policy: n_min must be >= 0");
    if (max_step_fraction && !(*max_step_fraction > 0)) throw Error("policy: max_step_fraction must be positive");
    if (rho_star && !(*rho_star > 0)) throw Error("policy: rho_star must be positive");
  }
};

/// R' = Y_max / U* * (1 + psi)
inline double estimate_capacity(double y_max, const ServicePolicy& p) {
  if (y_max < 0) throw Error("estimate_capacity: Y_max must be >= 0");
  return y_max / p.U_star * (1.0 + p.psi);
}

/// (n', delta_n) with n' = ceil(R' / r_std), floored at n_min.
inline std::pair<std::int64_t, std::int64_t> plan_containers(double r_prime, std::int64_t current_n,
                                                             const ServicePolicy& p) {
  if (current_n < 0) throw Error("plan_containers: current_n must be >= 0");
  auto n_prime = static_cast<std::int64_t>(std::ceil(r_prime / p.r_std));
  n_prime = std::max(n_prime, p.n_min);
  if (p.max_step_fraction) {
    const auto step = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(*p.max_step_fraction * static_cast<double>(current_n))));
    n_prime = std::clamp(n_prime, current_n - step, current_n + step);
    n_prime = std::max<std::int64_t>(n_prime, 0);
  }
  return {n_prime, n_prime - current_n};
}

inline double quota_for_type(double red_j, const ServicePolicy& p) {
  if (!(red_j > 0)) throw Error("quota_for_type: red must be positive");
  return red_j * p.r_std;
}

struct CapacityPlan {
  std::string service_id;
  Minute epoch_ts = 0;
  double Y_max = 0.0;
  double R_prime = 0.0;
  std::int64_t n_prime = 0;
  std::int64_t delta_n = 0;
  std::map<std::string, double> quotas;  // mCore per machine type
};

/// Full plan for one service and epoch. Types missing from `red` get factor 1.
inline CapacityPlan make_plan(const std::string& service_id, Minute epoch_ts, double y_max, std::int64_t current_n,
                              const RedTable& red, const std::vector<std::string>& types,
                              const std::string& standard, const ServicePolicy& p) {
  CapacityPlan plan;
  plan.service_id = service_id;
  plan.epoch_ts = epoch_ts;
  plan.Y_max = y_max;
  plan.R_prime = estimate_capacity(y_max, p);
  std::tie(plan.n_prime, plan.delta_n) = plan_containers(plan.R_prime, current_n, p);
  for (const auto& ty : types) {
    double r = 1.0;
    if (ty != standard)
      if (auto f = red.factor(service_id, ty)) r = *f;
    plan.quotas[ty] = quota_for_type(r, p);
  }
  return plan;
}

inline void write_plan_header(std::ostream& os) { os << "epoch_ts,service_id,Y_max,R_prime_mcore,n_prime,delta_n\n"; }

inline void write_plan_row(const CapacityPlan& p, std::ostream& os) {
  os << p.epoch_ts << ',' << p.service_id << ',' << fmt_g9(p.Y_max) << ',' << fmt_g9(p.R_prime) << ','
     << p.n_prime << ',' << p.delta_n << '\n';
}

inline void write_quota_header(std::ostream& os) { os << "epoch_ts,service_id,machine_type,quota_mcore\n"; }

inline void write_quota_rows(const CapacityPlan& p, std::ostream& os) {
  for (const auto& [ty, q] : p.quotas)
    os << p.epoch_ts << ',' << p.service_id << ',' << ty << ',' << fmt_g9(q) << '\n';
}

}  // namespace humas
