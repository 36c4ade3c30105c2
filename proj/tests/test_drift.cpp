#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "humas/drift.hpp"
#include "humas/synth.hpp"

using namespace humas;

namespace {

GenSpec one_service(int days, std::uint64_t seed, std::vector<UpgradeEvent> ups = {}) {
  GenSpec spec;
  spec.seed = seed;
  spec.days = days;
  spec.fleet = default_fleet();
  ServiceGenSpec s;
  s.service_id = "s";
  s.base_total_rps = 80000;
  s.daily_amplitude = 0.4;
  s.noise_cv = 0.03;
  s.base_rue = 4.0;
  s.containers = {{"826X", 60}, {"816X", 20}};
  s.true_red = {{"826X", 1.0}, {"816X", 1.15}};
  s.upgrades = std::move(ups);
  spec.services.push_back(s);
  return spec;
}

std::vector<Point2> blob(std::size_t n, double mx, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 1);
  std::vector<Point2> out(n);
  for (auto& p : out) p = {mx + z(rng), z(rng)};
  return out;
}

}  // namespace

TEST(WindowConfig, Validation) {
  WindowConfig wc;
  EXPECT_NO_THROW(wc.validate());
  EXPECT_EQ(wc.window_min(), 2880);
  EXPECT_EQ(wc.step_min(), 480);
  EXPECT_EQ(wc.windows_per_span(), 6);
  wc.S_hours = 60;
  EXPECT_THROW(wc.validate(), Error);
  wc = {};
  wc.m = 10;
  EXPECT_THROW(wc.validate(), Error);
  wc = {};
  wc.mu = 0.5;
  EXPECT_THROW(wc.validate(), Error);
  wc = {};
  wc.theta = 0;
  EXPECT_THROW(wc.validate(), Error);
}

TEST(WindowPoints, GridAndMissingData) {
  auto c = generate(one_service(3, 1));
  WindowConfig wc;
  EXPECT_EQ(window_count(c.traces[0].length, wc), 4);
  auto z = window_points(c.traces[0], "826X", 0, wc, true);
  ASSERT_TRUE(z);
  EXPECT_EQ(z->size(), 360u);

  auto st = c.traces[0];
  for (std::size_t i = 0; i < 800; ++i) st.types[1].present[i] = 0;  // 800/2880 > 25%
  EXPECT_FALSE(window_points(st, "826X", 0, wc, true));
  EXPECT_TRUE(window_points(st, "826X", 2, wc, true));
}

TEST(DetectStep, CounterResetsOnAcceptance) {
  WindowConfig wc;
  DriftState st;
  const auto ref = blob(120, 0, 1);
  const auto far = blob(120, 3, 2);
  LsddConfig lc;
  std::vector<int> counters;
  auto d0 = detect_step(st, 0, 0, ref, wc, lc, 1, 1);
  EXPECT_EQ(d0.kind, DecisionKind::kAwaitingReference);
  for (std::int64_t i = 1; i <= 3; ++i) {
    const auto& z = (i == 2) ? ref : far;
    counters.push_back(detect_step(st, i, 0, z, wc, lc, 10 + i, 20 + i).counter);
  }
  EXPECT_EQ(counters, (std::vector<int>{1, 0, 1}));
  for (const auto& r : st.history) EXPECT_FALSE(r.confirmed_drift);
  EXPECT_EQ(st.counter, static_cast<int>(st.candidates.size()));
}

TEST(DetectStep, ConfirmsAtThetaWithEarliestCandidate) {
  WindowConfig wc;
  DriftState st;
  LsddConfig lc;
  const auto ref = blob(120, 0, 1);
  detect_step(st, 0, 0, ref, wc, lc, 1, 1);
  detect_step(st, 1, 0, ref, wc, lc, 2, 2);
  auto a = detect_step(st, 2, 0, blob(120, 3, 3), wc, lc, 3, 3);
  auto skipped = detect_step(st, 3, 0, std::nullopt, wc, lc, 4, 4);
  EXPECT_EQ(skipped.kind, DecisionKind::kSkipped);
  EXPECT_EQ(skipped.counter, 1);
  auto b = detect_step(st, 4, 0, blob(120, 3, 5), wc, lc, 5, 5);
  auto c = detect_step(st, 5, 0, blob(120, 3, 6), wc, lc, 6, 6);
  EXPECT_EQ(a.kind, DecisionKind::kPending);
  EXPECT_EQ(b.counter, 2);
  ASSERT_EQ(c.kind, DecisionKind::kDrift);
  EXPECT_EQ(c.i_d, 2);
  EXPECT_EQ(st.counter, 0);
  EXPECT_TRUE(st.candidates.empty());
  // windows before i_d + ceil(W/S) wait; that window becomes the new reference
  ASSERT_TRUE(st.next_reference);
  EXPECT_EQ(*st.next_reference, 8);
  EXPECT_EQ(detect_step(st, 6, 0, blob(120, 3, 7), wc, lc, 7, 7).kind, DecisionKind::kAwaitingReference);
  EXPECT_EQ(detect_step(st, 8, 0, blob(120, 3, 8), wc, lc, 8, 8).kind, DecisionKind::kAwaitingReference);
  EXPECT_EQ(st.reference_index, 8);
  EXPECT_FALSE(st.next_reference);
}

TEST(DetectService, StationaryStreamNeverDrifts) {
  // 30 tested windows after the reference
  auto c = generate(one_service(12, 3));
  DetectOptions opt;
  opt.global_seed = 5;
  auto d = detect_service(c.traces[0], "826X", opt);
  ASSERT_GE(d.records.size(), 31u);
  EXPECT_TRUE(d.drifts.empty());
  int tested = 0, rejected = 0;
  for (const auto& r : d.records) {
    tested += r.tested;
    rejected += r.rejected;
  }
  EXPECT_GE(tested, 30);
  EXPECT_LE(rejected, 6);  // expectation 1.5 at mu = 0.05
}

TEST(DetectService, UpgradeDetectedAtWindowKOrNext) {
  WindowConfig wc;
  const std::int64_t k = 10;
  // upgrade lands in the last S-slice of window k
  const Minute start = k * wc.step_min() + wc.window_min() - wc.step_min() + 60;
  auto c = generate(one_service(9, 4, {{"s", start, start + 120, 1.2}}));
  DetectOptions opt;
  opt.global_seed = 6;
  auto d = detect_service(c.traces[0], "826X", opt);
  ASSERT_EQ(d.drifts.size(), 1u);
  EXPECT_GE(d.drifts[0].i_d, k);
  EXPECT_LE(d.drifts[0].i_d, k + 1);
  EXPECT_EQ(d.drifts[0].confirmed_at, d.drifts[0].i_d + wc.theta - 1);
  auto sc = score_detections({d}, c.upgrades, wc);
  EXPECT_EQ(sc.tdd, 1);
  EXPECT_EQ(*sc.precision, 1.0);
  EXPECT_EQ(*sc.recall, 1.0);
}

TEST(DetectService, DeterministicAndCsv) {
  auto c = generate(one_service(4, 7, {{"s", 3000, 3100, 1.3}}));
  DetectOptions opt;
  opt.global_seed = 9;
  auto run = [&] {
    std::ostringstream os;
    write_detections_header(os);
    write_detections(detect_service(c.traces[0], "826X", opt), os);
    return os.str();
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.substr(0, a.find('\n')), "service_id,window_index,window_end_ts,d2,threshold,rejected,confirmed_drift,i_d");
  EXPECT_NE(a.find("\ns,0,2880,,,0,0,\n"), std::string::npos);
}

TEST(Score, NoUpgradesLeavesRecallUndefined) {
  ServiceDetections sd;
  sd.service_id = "s";
  sd.drifts.push_back(ConfirmedDrift{"s", 5, 7, 0, 0, 0});
  auto sc = score_detections({sd}, {}, WindowConfig{});
  EXPECT_EQ(sc.dd, 1);
  EXPECT_EQ(sc.fdd, 1);
  EXPECT_FALSE(sc.recall);
  EXPECT_EQ(*sc.precision, 0.0);
}

TEST(Score, WindowOverlapRule) {
  WindowConfig wc;  // S = 480, W = 2880
  ServiceDetections sd;
  sd.service_id = "s";
  sd.drifts.push_back(ConfirmedDrift{"s", 10, 12, 0, 0, 0});
  // union of windows 9 and 10 is [4320, 7680)
  auto hit = score_detections({sd}, {{"s", 4300, 4330, 1.2}}, wc);
  EXPECT_EQ(hit.tdd, 1);
  auto edge = score_detections({sd}, {{"s", 7680, 7700, 1.2}}, wc);
  EXPECT_EQ(edge.tdd, 0);
  auto other = score_detections({sd}, {{"t", 5000, 5100, 1.2}}, wc);
  EXPECT_EQ(other.tdd, 0);
  EXPECT_EQ(*other.recall, 0.0);
}

TEST(Score, OneToOneMatching) {
  WindowConfig wc;
  ServiceDetections sd;
  sd.service_id = "s";
  sd.drifts.push_back(ConfirmedDrift{"s", 10, 12, 0, 0, 0});
  sd.drifts.push_back(ConfirmedDrift{"s", 11, 13, 0, 0, 0});
  auto sc = score_detections({sd}, {{"s", 5000, 5100, 1.2}}, wc);
  EXPECT_EQ(sc.tdd, 1);
  EXPECT_EQ(sc.fdd, 1);
  EXPECT_EQ(*sc.recall, 1.0);
  EXPECT_EQ(*sc.precision, 0.5);
}
