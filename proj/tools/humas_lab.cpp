// humas-lab: generate traces, detect drifts, replay the autoscaler, summarize.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "humas/humas.hpp"

namespace fs = std::filesystem;
using humas::Error;
using json = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

humas::RunConfig load(const Common& c) {
  humas::RunConfig cfg = c.config.empty() ? humas::RunConfig{} : humas::load_config(c.config);
  if (c.seed) cfg.global_seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  return cfg;
}

std::string sibling(const std::string& trace, const std::string& name) {
  return (fs::path(trace).parent_path() / name).string();
}

std::string mode_tag(std::string m) {
  for (auto& ch : m)
    if (ch == ':') ch = '_';
  return m;
}

int cmd_gen(const Common& c) {
  auto cfg = load(c);
  const fs::path out = cfg.output_dir;
  auto spec = humas::gen_spec(cfg);
  auto corpus = humas::generate(spec);
  humas::write_trace(corpus.traces, (out / "trace.csv").string());
  humas::write_trace_header(humas::TraceHeader{}, humas::header_path_for((out / "trace.csv").string()));
  {
    std::ostringstream ss;
    humas::write_fleet(spec.fleet, ss);
    humas::write_text(out / "fleet.csv", ss.str());
  }
  {
    std::ostringstream ss;
    humas::write_upgrades_csv(corpus.upgrades, ss);
    humas::write_text(out / "upgrades.csv", ss.str());
  }
  humas::write_json(out / "true_red.json", humas::true_red_json(corpus));
  std::vector<fs::path> outs{out / "trace.csv", out / "trace.csv.header.json", out / "fleet.csv",
                             out / "upgrades.csv", out / "true_red.json"};
  humas::write_json(out / "manifest_gen.json", humas::manifest("gen-trace", cfg, {}, outs));
  std::cout << "wrote " << corpus.traces.size() << " services, " << corpus.upgrades.size() << " upgrades to "
            << out.string() << "\n";
  return 0;
}

int cmd_detect(const Common& c, const std::string& trace, std::string fleet_path, const std::string& upgrades,
               bool raw) {
  auto cfg = load(c);
  const fs::path out = cfg.output_dir;
  if (fleet_path.empty()) fleet_path = sibling(trace, "fleet.csv");
  auto fleet = humas::load_fleet(fleet_path);
  auto traces = humas::load_trace(trace, fleet);
  const auto threads = humas::thread_count();
  auto dets = humas::detect_all(traces, fleet, cfg.detect_options(!raw), threads);

  std::vector<fs::path> outs;
  {
    std::ostringstream ss;
    humas::write_detections_header(ss);
    for (const auto& d : dets) humas::write_detections(d, ss);
    humas::write_text(out / "detections.csv", ss.str());
    outs.push_back(out / "detections.csv");
  }
  {
    humas::RedTable all;
    for (const auto& t : traces)
      all.merge(humas::estimate_red_indices(t, fleet.standard_type(), 0, t.length, cfg.normalizer));
    std::ostringstream ss;
    humas::write_red_csv(all, ss);
    humas::write_text(out / "red.csv", ss.str());
    outs.push_back(out / "red.csv");
  }
  std::vector<std::string> inputs{trace, fleet_path};
  std::int64_t drifts = 0;
  for (const auto& d : dets) drifts += static_cast<std::int64_t>(d.drifts.size());
  if (!upgrades.empty()) {
    auto ups = humas::load_upgrades(upgrades);
    auto sc = humas::score_detections(dets, ups, cfg.window);
    humas::write_json(out / "score.json", humas::score_json(sc));
    outs.push_back(out / "score.json");
    inputs.push_back(upgrades);
    std::cout << "DD=" << sc.dd << " TDD=" << sc.tdd << " FDD=" << sc.fdd;
    if (sc.precision) std::cout << " precision=" << humas::fmt_g9(*sc.precision);
    if (sc.recall) std::cout << " recall=" << humas::fmt_g9(*sc.recall);
    std::cout << "\n";
  } else {
    std::cout << drifts << " confirmed drifts\n";
  }
  humas::write_json(out / "manifest_detect.json", humas::manifest("detect", cfg, inputs, outs));
  return 0;
}

int cmd_simulate(const Common& c, const std::string& trace, std::string fleet_path, std::string true_red_path,
                 const std::vector<std::string>& modes_flag) {
  auto cfg = load(c);
  const fs::path out = cfg.output_dir;
  if (fleet_path.empty()) fleet_path = sibling(trace, "fleet.csv");
  if (true_red_path.empty() && fs::exists(sibling(trace, "true_red.json"))) true_red_path = sibling(trace, "true_red.json");
  auto fleet = humas::load_fleet(fleet_path);
  auto traces = humas::load_trace(trace, fleet);
  const auto threads = humas::thread_count();

  std::vector<std::string> modes = cfg.modes;
  if (!modes_flag.empty()) {
    modes.clear();
    for (const auto& m : modes_flag) {
      std::stringstream ss(m);
      std::string part;
      while (std::getline(ss, part, ','))
        if (!part.empty()) modes.push_back(part);
    }
  }
  std::vector<humas::SimMode> parsed;
  for (const auto& m : modes) parsed.push_back(humas::SimMode::parse(m));

  humas::SimInputs in;
  in.traces = &traces;
  in.fleet = &fleet;
  std::vector<std::string> inputs{trace, fleet_path};
  if (!true_red_path.empty()) {
    in.true_red = humas::load_true_red(true_red_path);
    inputs.push_back(true_red_path);
  } else {
    humas::log::warn("no true-RED file; using RED estimated over the whole trace as ground truth");
    for (const auto& t : traces)
      for (const auto& e : humas::estimate_red_indices(t, fleet.standard_type(), 0, t.length, cfg.normalizer).entries())
        in.true_red[t.service_id][e.machine_type] = e.red;
  }
  for (const auto& t : traces) in.policies[t.service_id] = cfg.policy_for(t.service_id);

  humas::DriftMap norm, raw;
  bool need_norm = false, need_raw = false;
  for (const auto& m : parsed) {
    need_norm |= m.kind == humas::SimModeKind::kHumas;
    need_raw |= m.kind == humas::SimModeKind::kNoNormalize;
  }
  if (need_norm) norm = humas::drift_map(humas::detect_all(traces, fleet, cfg.detect_options(true), threads));
  if (need_raw) raw = humas::drift_map(humas::detect_all(traces, fleet, cfg.detect_options(false), threads));
  in.drifts_normalized = &norm;
  in.drifts_raw = &raw;

  const auto sc = cfg.sim_config();
  json metrics = json::object();
  std::vector<fs::path> outs;
  std::ostringstream plots;
  humas::write_plots_header(plots);
  std::map<std::string, humas::EpisodeResult> results;
  for (const auto& m : parsed) {
    auto r = humas::run_episode(in, m, sc, threads);
    const auto tag = mode_tag(r.mode);
    metrics[r.mode] = humas::metrics_json(r);
    {
      std::ostringstream ss;
      humas::write_timeseries(r.timeseries, ss);
      humas::write_text(out / ("timeseries_" + tag + ".csv"), ss.str());
      outs.push_back(out / ("timeseries_" + tag + ".csv"));
    }
    if (!r.plans.empty()) {
      std::ostringstream ps, qs;
      humas::write_plan_header(ps);
      humas::write_quota_header(qs);
      for (const auto& p : r.plans) {
        humas::write_plan_row(p, ps);
        humas::write_quota_rows(p, qs);
      }
      humas::write_text(out / ("plan_" + tag + ".csv"), ps.str());
      humas::write_text(out / ("quota_" + tag + ".csv"), qs.str());
      outs.push_back(out / ("plan_" + tag + ".csv"));
      outs.push_back(out / ("quota_" + tag + ".csv"));
      json models = json::array();
      for (const auto& [sid, model] : r.final_models) models.push_back(humas::pattern_json(sid, model));
      humas::write_json(out / ("models_" + tag + ".json"), models);
      outs.push_back(out / ("models_" + tag + ".json"));
    }
    humas::write_plots(r.mode, r.plots, plots);
    std::cout << r.mode << ": slack=" << humas::fmt_g9(r.aggregate.slack_pct)
              << "% vio=" << humas::fmt_g9(r.aggregate.vio_pct)
              << "% util_std=" << humas::fmt_g9(r.aggregate.util_std_total)
              << " per_type_std=" << humas::fmt_g9(r.aggregate.util_std_per_type_avg) << "\n";
    r.timeseries.clear();
    r.plans.clear();
    results.emplace(r.mode, std::move(r));
  }
  // paired per-service comparison of humas against each fixed-interval mode
  if (auto h = results.find("humas"); h != results.end()) {
    json cmp = json::object();
    for (const auto& [name, r] : results) {
      if (name.rfind("fixed_relearn:", 0) != 0) continue;
      std::int64_t lower_slack = 0, lower_dev = 0;
      for (std::size_t k = 0; k < r.services.size(); ++k) {
        lower_slack += h->second.services[k].slack_pct < r.services[k].slack_pct ? 1 : 0;
        lower_dev += h->second.services[k].mean_abs_target_dev < r.services[k].mean_abs_target_dev ? 1 : 0;
      }
      cmp["humas_vs_" + name] = {{"services", r.services.size()},
                                 {"humas_lower_slack", lower_slack},
                                 {"humas_lower_target_dev", lower_dev},
                                 {"slack_pct", {h->second.aggregate.slack_pct, r.aggregate.slack_pct}},
                                 {"mean_abs_target_dev_pp",
                                  {h->second.aggregate.mean_abs_target_dev, r.aggregate.mean_abs_target_dev}}};
    }
    if (!cmp.empty()) metrics["comparison"] = cmp;
  }
  humas::write_json(out / "metrics.json", metrics);
  humas::write_text(out / "plots.csv", plots.str());
  outs.push_back(out / "metrics.json");
  outs.push_back(out / "plots.csv");
  humas::write_json(out / "manifest_simulate.json", humas::manifest("simulate", cfg, inputs, outs));
  return 0;
}

json read_json_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot open " + p.string());
  return json::parse(is);
}

int cmd_report(const Common& c) {
  auto cfg = load(c);
  const fs::path out = cfg.output_dir;
  json summary = json::object();
  std::ostringstream md;
  md << "# humas-lab report\n\n";
  bool any = false;
  if (fs::exists(out / "score.json")) {
    auto s = read_json_file(out / "score.json");
    summary["detection"] = s;
    md << "## Drift detection\n\n| DD | TDD | FDD | precision | recall |\n|---|---|---|---|---|\n";
    auto num = [](const json& v) { return v.is_number() ? humas::fmt_g9(v.get<double>()) : v.get<std::string>(); };
    md << "| " << s["DD"] << " | " << s["TDD"] << " | " << s["FDD"] << " | " << num(s["precision"]) << " | "
       << num(s["recall"]) << " |\n\n";
    any = true;
  }
  if (fs::exists(out / "metrics.json")) {
    auto m = read_json_file(out / "metrics.json");
    json agg = json::object();
    md << "## Simulation (capacity-weighted)\n\n"
       << "| mode | slack % | util Std | per-type Std | Vio % | capacity (cores) |\n|---|---|---|---|---|---|\n";
    for (auto it = m.begin(); it != m.end(); ++it) {
      if (it.key() == "comparison") continue;
      const auto& a = it.value()["aggregate"];
      agg[it.key()] = a;
      md << "| " << it.key() << " | " << humas::fmt_g9(a["slack_pct"].get<double>()) << " | "
         << humas::fmt_g9(a["util_std_total"].get<double>()) << " | "
         << humas::fmt_g9(a["util_std_per_type_avg"].get<double>()) << " | "
         << humas::fmt_g9(a["vio_pct"].get<double>()) << " | "
         << humas::fmt_g9(a["mean_capacity_cores"].get<double>()) << " |\n";
    }
    summary["simulation"] = agg;
    if (m.contains("comparison")) summary["comparison"] = m["comparison"];
    any = true;
  }
  if (!any) throw Error("report: no score.json or metrics.json in " + out.string());
  humas::write_json(out / "summary.json", summary);
  humas::write_text(out / "summary.md", md.str());
  std::cout << md.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"humas-lab: heterogeneity-aware autoscaling laboratory"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--out", common.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", common.seed, "global seed (overrides global_seed)");
    sub->add_flag("-v,--verbose", common.verbose, "info-level logging");
  };

  auto* gen = app.add_subcommand("gen-trace", "generate a synthetic corpus");
  add_common(gen);

  std::string trace, fleet, upgrades, true_red;
  bool raw = false;
  auto* det = app.add_subcommand("detect", "run drift detection on a trace");
  add_common(det);
  det->add_option("--trace", trace, "trace CSV")->required();
  det->add_option("--fleet", fleet, "fleet CSV (default: fleet.csv next to the trace)");
  det->add_option("--upgrades", upgrades, "ground-truth upgrades CSV for scoring");
  det->add_flag("--raw", raw, "detect on raw (unnormalized) usage totals");

  std::vector<std::string> modes;
  auto* sim = app.add_subcommand("simulate", "replay the autoscaler on a trace");
  add_common(sim);
  sim->add_option("--trace", trace, "trace CSV")->required();
  sim->add_option("--fleet", fleet, "fleet CSV (default: fleet.csv next to the trace)");
  sim->add_option("--true-red", true_red, "ground-truth RED JSON (default: true_red.json next to the trace)");
  sim->add_option("--mode", modes, "mode(s): humas, fixed_relearn:<days>, no_normalize, static");

  auto* rep = app.add_subcommand("report", "summarize score.json and metrics.json");
  add_common(rep);

  CLI11_PARSE(app, argc, argv);
  if (common.verbose) humas::log::set_level(humas::log::Level::kInfo);
  try {
    if (gen->parsed()) return cmd_gen(common);
    if (det->parsed()) return cmd_detect(common, trace, fleet, upgrades, raw);
    if (sim->parsed()) return cmd_simulate(common, trace, fleet, true_red, modes);
    if (rep->parsed()) return cmd_report(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
