#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "humas/planner.hpp"

using namespace humas;

TEST(EstimateCapacity, Examples) {
  ServicePolicy p;
  EXPECT_EQ(estimate_capacity(1'000'000, p), 2'160'000);
  p.psi = 0;
  p.U_star = 1;
  EXPECT_EQ(estimate_capacity(12345.5, p), 12345.5);
  EXPECT_EQ(estimate_capacity(0, ServicePolicy{}), 0);
  EXPECT_THROW(estimate_capacity(-1, ServicePolicy{}), Error);
}

TEST(EstimateCapacity, PlannedUtilizationIdentity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    ServicePolicy p;
    p.U_star = 0.4 + 0.3 * u(rng);
    p.psi = 0.2 * u(rng);
    const double y = 1e7 * u(rng) + 1;
    EXPECT_NEAR(y / estimate_capacity(y, p), p.U_star / (1 + p.psi), 1e-12);
  }
}

TEST(EstimateCapacity, Monotone) {
  ServicePolicy a, b;
  b.psi = 0.1;
  EXPECT_LE(estimate_capacity(100, a), estimate_capacity(100, b));
  EXPECT_LE(estimate_capacity(100, a), estimate_capacity(101, a));
  b = a;
  b.U_star = 0.6;
  EXPECT_GE(estimate_capacity(100, a), estimate_capacity(100, b));
}

TEST(PlanContainers, Examples) {
  ServicePolicy p;
  using P = std::pair<std::int64_t, std::int64_t>;
  EXPECT_EQ(plan_containers(2'160'000, 500, p), P(540, 40));
  EXPECT_EQ(plan_containers(2'000'000, 500, p), P(500, 0));
  EXPECT_EQ(plan_containers(2'160'000, 600, p), P(540, -60));
  EXPECT_EQ(plan_containers(0, 3, p).first, 1);  // n_min floor
  p.n_min = 0;
  EXPECT_EQ(plan_containers(0, 3, p).first, 0);
  EXPECT_THROW(plan_containers(1, -1, p), Error);
}

TEST(PlanContainers, QuantizedUtilizationBound) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    ServicePolicy p;
    p.U_star = 0.4 + 0.3 * u(rng);
    const double y = 1e6 * u(rng) + 10;
    const auto [n, d] = plan_containers(estimate_capacity(y, p), 0, p);
    EXPECT_LE(y / (static_cast<double>(n) * p.r_std), p.U_star / (1 + p.psi) * (1 + 1e-12));
  }
}

TEST(PlanContainers, StepCap) {
  ServicePolicy p;
  p.max_step_fraction = 0.1;
  EXPECT_EQ(plan_containers(2'160'000, 400, p).first, 440);
  EXPECT_EQ(plan_containers(4000, 400, p).first, 360);
}

TEST(QuotaForType, Examples) {
  ServicePolicy p;
  EXPECT_EQ(quota_for_type(1.2, p), 4800);
  EXPECT_EQ(quota_for_type(1.0, p), 4000);
  EXPECT_EQ(quota_for_type(0.9, p), 3600);
  EXPECT_THROW(quota_for_type(0, p), Error);
}

TEST(Policy, Validation) {
  ServicePolicy p;
  p.U_star = 0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.psi = -0.1;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.r_std = 0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(MakePlan, QuotasAndCsv) {
  RedTable red;
  red.upsert({"s", "826X", 1.0});
  red.upsert({"s", "816X", 1.2});
  auto plan = make_plan("s", 120, 1'000'000, 500, red, {"826X", "816X"}, "826X", ServicePolicy{});
  EXPECT_EQ(plan.n_prime, 540);
  EXPECT_EQ(plan.delta_n, 40);
  EXPECT_EQ(plan.quotas.at("826X"), 4000);
  EXPECT_EQ(plan.quotas.at("816X"), 4800);
  std::ostringstream os;
  write_plan_header(os);
  write_plan_row(plan, os);
  write_quota_header(os);
  write_quota_rows(plan, os);
  EXPECT_EQ(os.str(),
            "epoch_ts,service_id,Y_max,R_prime_mcore,n_prime,delta_n\n"
            "120,s,1000000,2160000,540,40\n"
            "epoch_ts,service_id,machine_type,quota_mcore\n"
            "120,s,816X,4800\n120,s,826X,4000\n");
}
