#include <gtest/gtest.h>

#include <random>

#include "humas/normalizer.hpp"
#include "humas/synth.hpp"

using namespace humas;

namespace {

ServiceTrace two_type_trace(std::size_t len, const std::function<double(std::size_t)>& rps, double rue_std,
                            double red, std::int64_t n_std = 6, std::int64_t n_other = 4) {
  ServiceTrace st;
  st.service_id = "s";
  st.length = len;
  for (auto [name, n, r] : {std::tuple{"826X", n_std, 1.0}, std::tuple{"816X", n_other, red}}) {
    TypeSeries ts;
    ts.machine_type = name;
    ts.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      ts.present[i] = 1;
      ts.containers[i] = n;
      ts.rps_per_container[i] = rps(i);
      ts.usage_per_container[i] = rue_std * r * rps(i);
    }
    st.types.push_back(std::move(ts));
  }
  return st;
}

GeneratedCorpus noisy_corpus(double red, double cv, std::uint64_t seed) {
  GenSpec spec;
  spec.seed = seed;
  spec.days = 2;
  spec.fleet = default_fleet();
  ServiceGenSpec s;
  s.service_id = "s";
  s.base_total_rps = 40000;
  s.daily_amplitude = 0.4;
  s.noise_cv = cv;
  s.base_rue = 4.0;
  s.containers = {{"826X", 30}, {"816X", 10}};
  s.true_red = {{"826X", 1.0}, {"816X", red}};
  spec.services.push_back(s);
  return generate(spec);
}

}  // namespace

TEST(ComputeRue, Examples) {
  EXPECT_EQ(compute_rue(1200, 300), 4.0);
  EXPECT_EQ(compute_rue(0, 300), 0.0);
  EXPECT_FALSE(compute_rue(1200, 0.5));
  EXPECT_FALSE(compute_rue(1200, 1.0));
}

TEST(NormalizeUsage, Examples) {
  EXPECT_DOUBLE_EQ(normalize_usage(4800, 1.2), 4000);
  EXPECT_EQ(normalize_usage(4000, 1.0), 4000);
  EXPECT_THROW(normalize_usage(1, 0), Error);
}

TEST(EstimateRed, ConstantRatio) {
  auto st = two_type_trace(120, [](std::size_t) { return 300.0; }, 4.0, 1.2);
  auto t = estimate_red(st, "826X", 0, 120);
  EXPECT_NEAR(*t.factor("s", "816X"), 1.2, 1e-12);
  EXPECT_EQ(*t.factor("s", "826X"), 1.0);
  EXPECT_FALSE(t.find("s", "816X")->low_confidence);
  EXPECT_EQ(t.find("s", "816X")->sample_count, 120);
}

TEST(EstimateRed, TooFewSamplesIsLowConfidence) {
  auto st = two_type_trace(59, [](std::size_t) { return 300.0; }, 4.0, 1.2);
  auto t = estimate_red(st, "826X", 0, 59);
  EXPECT_TRUE(t.find("s", "816X")->low_confidence);
  EXPECT_EQ(*t.factor("s", "816X"), 1.0);
}

TEST(EstimateRed, LowLoadExcluded) {
  auto st = two_type_trace(200, [](std::size_t i) { return i % 2 ? 0.5 : 300.0; }, 4.0, 1.2);
  auto t = estimate_red(st, "826X", 0, 200);
  EXPECT_EQ(t.find("s", "816X")->sample_count, 100);
}

TEST(EstimateRed, ClampedToBounds) {
  auto st = two_type_trace(100, [](std::size_t) { return 300.0; }, 4.0, 9.0);
  EXPECT_EQ(*estimate_red(st, "826X", 0, 100).factor("s", "816X"), 4.0);
}

TEST(EstimateRed, WorkloadIntensityIndependence) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(5, 5000);
  std::vector<double> rps(500);
  for (auto& r : rps) r = u(rng);
  auto st = two_type_trace(500, [&](std::size_t i) { return rps[i]; }, 3.0, 1.37);
  for (Minute from : {0, 100, 250}) {
    auto t = estimate_red(st, "826X", from, from + 200);
    EXPECT_TRUE(approx_rel(*t.factor("s", "816X"), 1.37));
  }
}

TEST(EstimateRed, GeneratorRecovery) {
  auto c = noisy_corpus(1.15, 0.02, 11);
  auto t = estimate_red(c.traces[0], "826X", 0, 2 * kMinutesPerDay);
  EXPECT_NEAR(*t.factor("s", "816X"), 1.15, 0.01);
}

TEST(EstimateRed, ScaleEquivariance) {
  auto c = noisy_corpus(1.1, 0.03, 12);
  auto st = c.traces[0];
  auto base = estimate_red(st, "826X", 0, 2880);
  for (auto& s : st.types)
    for (auto& v : s.usage_per_container) v *= 3.5;
  auto scaled = estimate_red(st, "826X", 0, 2880);
  EXPECT_TRUE(approx_rel(*scaled.factor("s", "816X"), *base.factor("s", "816X")));
}

TEST(EstimateRed, NeutralAfterDividingByTruth) {
  auto c = noisy_corpus(1.25, 0.03, 13);
  auto st = c.traces[0];
  for (auto& s : st.types)
    for (auto& v : s.usage_per_container) v /= c.true_red["s"][s.machine_type];
  auto t = estimate_red(st, "826X", 0, 2880);
  EXPECT_NEAR(*t.factor("s", "816X"), 1.0, 0.01);
}

TEST(EstimateRed, NoiseFreeNormalizedUsageEqualAcrossTypes) {
  auto c = noisy_corpus(1.2, 0.0, 14);
  const auto& st = c.traces[0];
  auto t = estimate_red(st, "826X", 0, 2880);
  for (std::size_t i = 0; i < st.length; i += 37) {
    const double a = normalize_usage(st.types[0].usage_per_container[i], *t.factor("s", "826X"));
    const double b = normalize_usage(st.types[1].usage_per_container[i], *t.factor("s", "816X"));
    EXPECT_TRUE(approx_rel(a, b));
  }
}

TEST(EstimateRed, WorkloadWeightedModeAgreesOnConstantRatio) {
  auto st = two_type_trace(300, [](std::size_t i) { return 10.0 + static_cast<double>(i); }, 4.0, 0.9);
  NormalizerConfig cfg;
  cfg.workload_weighted = true;
  EXPECT_TRUE(approx_rel(*estimate_red(st, "826X", 0, 300, cfg).factor("s", "816X"), 0.9));
}

TEST(BuildTotals, ArithmeticExample) {
  ServiceTrace st;
  st.service_id = "s";
  st.length = 1;
  TypeSeries ts;
  ts.machine_type = "826X";
  ts.resize(1);
  ts.present[0] = 1;
  ts.containers[0] = 877;
  ts.rps_per_container[0] = 300;
  ts.usage_per_container[0] = 1000;
  st.types.push_back(ts);
  auto tot = build_totals(st, RedTable::uniform("s", {"826X"}));
  EXPECT_DOUBLE_EQ(tot.x[0], 263100.0);
  EXPECT_DOUBLE_EQ(tot.y[0], 877000.0);
  EXPECT_EQ(tot.valid[0], 1);
}

TEST(BuildTotals, ZeroContainersMissing) {
  ServiceTrace st;
  st.service_id = "s";
  st.length = 1;
  TypeSeries ts;
  ts.machine_type = "826X";
  ts.resize(1);
  ts.present[0] = 1;
  st.types.push_back(ts);
  auto tot = build_totals(st, RedTable::uniform("s", {"826X"}));
  EXPECT_EQ(tot.valid[0], 0);
  EXPECT_EQ(tot.y[0], 0.0);
}

TEST(BuildTotals, MatchesDirectSum) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  ServiceTrace st;
  st.service_id = "s";
  st.length = 50;
  const std::vector<std::string> names{"826X", "816X", "7xx"};
  RedTable red;
  std::vector<double> reds{1.0, u(rng), u(rng)};
  for (int j = 0; j < 3; ++j) {
    TypeSeries ts;
    ts.machine_type = names[j];
    ts.resize(50);
    for (std::size_t i = 0; i < 50; ++i) {
      ts.present[i] = 1;
      ts.containers[i] = static_cast<std::int64_t>(1 + rng() % 20);
      ts.rps_per_container[i] = 100 * u(rng);
      ts.usage_per_container[i] = 1000 * u(rng);
    }
    st.types.push_back(ts);
    red.upsert({"s", names[j], reds[j]});
  }
  auto tot = build_totals(st, red);
  for (std::size_t i = 0; i < 50; ++i) {
    double x = 0, y = 0;
    for (int j = 0; j < 3; ++j) {
      const auto& ts = st.types[j];
      x += static_cast<double>(ts.containers[i]) * ts.rps_per_container[i];
      y += static_cast<double>(ts.containers[i]) * ts.usage_per_container[i] / reds[j];
    }
    EXPECT_TRUE(approx_rel(tot.x[i], x));
    EXPECT_TRUE(approx_rel(tot.y[i], y));
  }
}
