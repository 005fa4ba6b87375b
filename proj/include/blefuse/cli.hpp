#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "blefuse/error.hpp"
#include "blefuse/evaluation.hpp"
#include "blefuse/ingestion.hpp"
#include "blefuse/pipeline.hpp"
#include "blefuse/simulator.hpp"

namespace blefuse::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kInternal = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything a run needs; unset overrides keep the library defaults.
struct RunConfig {
  std::string subcommand;
  std::optional<fs::path> scenario;
  bool benchmark = false;
  std::optional<fs::path> in;
  std::optional<fs::path> out;
  std::optional<fs::path> samples;
  std::optional<fs::path> registry;
  std::optional<fs::path> plan;
  std::optional<fs::path> truth;

  std::optional<double> window;
  std::optional<double> stride;
  bool tumbling = false;
  std::optional<double> step_length;
  bool weinberg = false;
  std::optional<double> beta;
  std::optional<double> sigma;
  std::optional<double> dropout;
  std::optional<std::uint64_t> seed;

  double probe_spacing = 3.0;
  double grid_spacing = 1.0;
  double dwell = 30.0;
  double match_tolerance = kDefaultMatchTolerance;
};

inline LocalizeOptions localize_options(const RunConfig& rc) {
  LocalizeOptions o;
  if (rc.tumbling) o.window = WindowOptions::tumbling();
  if (rc.window) o.window.duration = *rc.window;
  if (rc.stride) o.window.stride = *rc.stride;
  if (rc.tumbling && rc.window && !rc.stride) o.window.stride = *rc.window;
  if (rc.beta) o.pdr.beta = *rc.beta;
  if (rc.step_length) o.pdr.step_length = *rc.step_length;
  if (rc.weinberg) o.pdr.step_model = StepLengthModel::Weinberg;
  return o;
}

inline SimulationConfig simulation_config(const RunConfig& rc) {
  SimulationConfig c = rc.scenario ? load_scenario(*rc.scenario) : benchmark_config();
  if (rc.seed) c.seed = *rc.seed;
  if (rc.sigma) c.rssi_noise_sigma = *rc.sigma;
  if (rc.dropout) c.dropout_prob = *rc.dropout;
  if (rc.step_length) c.step_length = *rc.step_length;
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& rc) {
  const auto lo = localize_options(rc);
  nlohmann::json j;
  j["subcommand"] = rc.subcommand;
  j["window"] = {{"duration_s", lo.window.duration},
                 {"stride_s", lo.window.stride},
                 {"rssi_floor_db", lo.window.rssi_floor ? nlohmann::json(*lo.window.rssi_floor) : nlohmann::json(nullptr)}};
  j["baseline"] = {{"max_iterations", lo.baseline.max_iterations},
                   {"step_tolerance_m", lo.baseline.step_tolerance},
                   {"scan_period_s", lo.baseline.scan_period}};
  j["pdr"] = {{"rate_hz", lo.pdr.rate_hz},
              {"lowpass_cutoff_hz", lo.pdr.lowpass_cutoff_hz},
              {"beta", lo.pdr.beta},
              {"burn_in_beta", lo.pdr.burn_in_beta},
              {"burn_in_s", lo.pdr.burn_in_s},
              {"step_length_m", lo.pdr.step_length},
              {"step_model", lo.pdr.step_model == StepLengthModel::Weinberg ? "weinberg" : "constant"}};
  j["evaluation"] = {{"match_tolerance_s", rc.match_tolerance}, {"tick_s", lo.window.stride}};
  j["coverage"] = {{"probe_spacing_m", rc.probe_spacing}, {"grid_spacing_m", rc.grid_spacing}, {"dwell_s", rc.dwell}};
  if (!rc.scenario || fs::exists(*rc.scenario)) {
    const auto sim = simulation_config(rc);
    auto s = scenario_to_json(sim);
    s.erase("plan");
    s.erase("devices");
    s.erase("subjects");
    s.erase("device_bias");
    j["simulation"] = s;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands

inline fs::path need(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw UsageError(fmt::format("{} is required", flag));
  return *p;
}

inline void cmd_simulate(const RunConfig& rc, std::ostream& out) {
  if (!rc.scenario && !rc.benchmark) throw UsageError("simulate needs --scenario or --benchmark");
  const auto dir = need(rc.out, "--out");
  const auto cfg = simulation_config(rc);
  const auto truth = make_ground_truth(cfg);
  const auto hits = simulate_ble(cfg, truth);
  const auto imu = simulate_imu(cfg, truth);

  BundlePaths manifest;
  manifest.hit_files = {"hits.csv"};
  for (const auto& s : cfg.subjects) {
    manifest.imu_files[s.subject_id] = "imu_" + s.subject_id + ".csv";
    manifest.bindings[s.subject_id] = s.beacon_id;
  }
  manifest.registry = "registry.json";
  manifest.plan = "plan.json";
  manifest.truth = "truth.csv";

  write_text_atomic(dir / "scenario.json", scenario_to_json(cfg).dump(2) + "\n");
  write_text_atomic(dir / "plan.json", plan_to_json(cfg.plan).dump(2) + "\n");
  write_text_atomic(dir / "registry.json", registry_to_json(cfg.devices).dump(2) + "\n");
  write_text_atomic(dir / "hits.csv", hits_to_csv(hits));
  for (const auto& [subject, samples] : imu) write_text_atomic(dir / manifest.imu_files.at(subject), imu_to_csv(samples));
  write_text_atomic(dir / "truth.csv", truth_to_csv(truth.records));
  write_text_atomic(dir / kManifestName, manifest_to_json(manifest).dump(2) + "\n");
  out << fmt::format("simulated {} s, {} subjects, {} hits -> {}\n", cfg.duration, cfg.subjects.size(), hits.size(),
                     dir.string());
}

inline void cmd_calibrate(const RunConfig& rc, std::ostream& out) {
  const auto samples_path = need(rc.samples, "--samples");
  auto registry = load_registry(need(rc.registry, "--registry"));
  const auto dest = need(rc.out, "--out");
  ParseStats stats;
  const auto samples = calibration_from_csv(read_text(samples_path), stats, samples_path.string());
  if (samples.empty()) throw Error(ErrorKind::EmptyInput, "no calibration samples in '" + samples_path.string() + "'");
  out << fmt::format("{:<12} {:>8} {:>8} {:>8}\n", "device", "samples", "n", "raw_n");
  for (const auto& [id, s] : samples) {
    auto& dev = registry.mutable_at(id);
    const auto r = calibrate_n(dev.params.m_rssi, s);
    dev.params.n_factor = r.n_factor;
    out << fmt::format("{:<12} {:>8} {:>8.3f} {:>8.3f}{}\n", id, s.size(), r.n_factor, r.raw_n_factor,
                       r.clamped ? " clamped" : "");
  }
  if (stats.malformed) out << fmt::format("skipped {} malformed lines\n", stats.malformed);
  write_text_atomic(dest, registry_to_json(registry).dump(2) + "\n");
}

struct LoadedSession {
  BundlePaths paths;
  SessionBundle bundle;
  DeviceRegistry registry;
};

inline LoadedSession load_session(const RunConfig& rc) {
  const auto dir = need(rc.in, "--in");
  LoadedSession s;
  s.paths = load_manifest(dir);
  s.bundle = load_bundle(s.paths);
  const auto reg = rc.registry ? rc.registry : s.paths.registry;
  if (!reg) throw Error(ErrorKind::SchemaError, "no registry: pass --registry or list one in the manifest");
  s.registry = load_registry(*reg);
  return s;
}

inline void warn_diagnostics(const BundleDiagnostics& d, std::ostream& err) {
  if (d.malformed) err << fmt::format("warning: skipped {} malformed records\n", d.malformed);
  if (d.reordered) err << fmt::format("warning: {} records arrived out of order and were sorted\n", d.reordered);
}

inline void cmd_localize(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto session = load_session(rc);
  warn_diagnostics(session.bundle.diagnostics, err);
  const auto dir = rc.out ? *rc.out : *rc.in;
  const auto results = localize(session.bundle, session.registry, localize_options(rc));
  std::vector<FusedTrack> baseline, ble, fused;
  for (const auto& [beacon, r] : results) {
    baseline.push_back(r.baseline_track);
    ble.push_back(r.ble_track);
    fused.push_back(r.fused);
  }
  write_text_atomic(dir / "track_baseline.csv", track_to_csv(baseline));
  write_text_atomic(dir / "track_ble_only.csv", track_to_csv(ble));
  write_text_atomic(dir / "track_ble_imu.csv", track_to_csv(fused));
  for (const auto& [beacon, r] : results) {
    out << fmt::format("{}: {} baseline, {} ble, {} fused fixes\n", beacon, r.baseline.size(), r.ble.size(),
                       r.fused.fixes.size());
  }
}

inline void cmd_evaluate(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto session = load_session(rc);
  warn_diagnostics(session.bundle.diagnostics, err);
  const auto plan_path = rc.plan ? rc.plan : session.paths.plan;
  const auto truth_path = rc.truth ? rc.truth : session.paths.truth;
  if (!plan_path) throw Error(ErrorKind::SchemaError, "no floor plan: pass --plan or list one in the manifest");
  if (!truth_path) throw Error(ErrorKind::SchemaError, "no ground truth: pass --truth or list one in the manifest");
  const auto plan = load_plan(*plan_path);
  ParseStats stats;
  const auto truth = truth_from_csv(read_text(*truth_path), stats, truth_path->string());

  EvaluationOptions opts;
  opts.localize = localize_options(rc);
  opts.match_tolerance = rc.match_tolerance;
  opts.tick = opts.localize.window.stride;
  const auto report = compare_methods(session.bundle, session.registry, plan, truth, opts);
  const auto dest = rc.out ? *rc.out : *rc.in / "report.json";
  write_text_atomic(dest, report_to_json(report).dump(2) + "\n");
  out << format_report(report);
}

inline void cmd_coverage(const RunConfig& rc, std::ostream& out) {
  if (!rc.scenario && !rc.benchmark) throw UsageError("coverage needs --scenario or --benchmark");
  const auto dir = need(rc.out, "--out");
  const auto cfg = simulation_config(rc);
  const auto probes = simulate_coverage_probe(cfg, probe_grid(cfg.plan, rc.probe_spacing), rc.dwell);
  const auto grid = coverage_heatmap(probes, cfg.plan, rc.grid_spacing);
  write_text_atomic(dir / "probes.csv", probes_to_csv(probes));
  write_text_atomic(dir / "coverage.csv", coverage_to_csv(grid));
  write_text_atomic(dir / "coverage_hits.pgm", coverage_to_pgm(grid, CoverageMetric::HitCount));
  write_text_atomic(dir / "coverage_devices.pgm", coverage_to_pgm(grid, CoverageMetric::UniqueDevices));
  write_text_atomic(dir / "coverage_rssi.pgm", coverage_to_pgm(grid, CoverageMetric::MeanRssi));

  out << fmt::format("{:<16} {:>7} {:>10} {:>10} {:>10}\n", "region", "probes", "hits", "devices", "rssi_db");
  for (const auto& room : cfg.plan.rooms()) {
    double hits = 0, devices = 0, rssi = 0;
    std::size_t n = 0, n_rssi = 0;
    for (const auto& p : probes) {
      if (point_in_room(cfg.plan, p.position) != room.name()) continue;
      ++n;
      hits += p.hit_count;
      devices += p.unique_devices;
      if (p.mean_rssi) {
        rssi += *p.mean_rssi;
        ++n_rssi;
      }
    }
    if (n == 0) continue;
    out << fmt::format("{:<16} {:>7} {:>10.1f} {:>10.2f} {:>10}\n", room.name(), n, hits / n, devices / n,
                       n_rssi ? fmt::format("{:.1f}", rssi / n_rssi) : std::string("-"));
  }
}

// ---------------------------------------------------------------------------

inline void add_localize_flags(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--window", rc.window, "RHSI window duration, seconds (default 10)")->check(CLI::PositiveNumber);
  sub->add_option("--stride", rc.stride, "window stride and tracker tick, seconds (default 1)")->check(CLI::PositiveNumber);
  sub->add_flag("--tumbling", rc.tumbling, "non-overlapping windows (stride = window)");
  sub->add_option("--step-length", rc.step_length, "constant step length, meters (default 0.7)")->check(CLI::PositiveNumber);
  sub->add_flag("--weinberg", rc.weinberg, "step length from vertical acceleration range instead of a constant");
  sub->add_option("--beta", rc.beta, "Madgwick gain after burn-in (default 0.1)")->check(CLI::NonNegativeNumber);
}

inline void add_sim_flags(CLI::App* sub, RunConfig& rc) {
  auto* scenario = sub->add_option("--scenario", rc.scenario, "scenario file (JSON)")->check(CLI::ExistingFile);
  sub->add_flag("--benchmark", rc.benchmark, "use the built-in 39-device benchmark")->excludes(scenario);
  sub->add_option("--seed", rc.seed, "override the scenario seed");
  sub->add_option("--sigma", rc.sigma, "RSSI noise sigma, dB")->check(CLI::NonNegativeNumber);
  sub->add_option("--dropout", rc.dropout, "detection dropout probability")->check(CLI::Range(0.0, 1.0));
}

/// Entry point; returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig rc;
  bool show_config = false;
  CLI::App app{"BLE RSSI trilateration with IMU dead reckoning", "blefuse"};
  app.add_flag("--show-config", show_config, "print the effective configuration as JSON and exit");
  app.require_subcommand(0, 1);

  auto* simulate = app.add_subcommand("simulate", "generate hits, IMU and truth files from a scenario");
  add_sim_flags(simulate, rc);
  simulate->add_option("--out", rc.out, "output directory");
  simulate->add_option("--step-length", rc.step_length, "simulated step length, meters")->check(CLI::PositiveNumber);

  auto* calibrate = app.add_subcommand("calibrate", "fit per-device path-loss exponents from known-distance samples");
  calibrate->add_option("--samples", rc.samples, "CSV: device_id,distance_m,rssi_db")->check(CLI::ExistingFile);
  calibrate->add_option("--registry", rc.registry, "device registry (JSON)")->check(CLI::ExistingFile);
  calibrate->add_option("--out", rc.out, "updated registry path");

  auto* localize_cmd = app.add_subcommand("localize", "baseline, BLE-only and fused tracks for a session");
  localize_cmd->add_option("--in", rc.in, "session directory containing bundle.json")->check(CLI::ExistingDirectory);
  localize_cmd->add_option("--registry", rc.registry, "registry override")->check(CLI::ExistingFile);
  localize_cmd->add_option("--out", rc.out, "output directory (default: --in)");
  add_localize_flags(localize_cmd, rc);

  auto* evaluate = app.add_subcommand("evaluate", "score all three methods against ground truth");
  evaluate->add_option("--in", rc.in, "session directory containing bundle.json")->check(CLI::ExistingDirectory);
  evaluate->add_option("--registry", rc.registry, "registry override")->check(CLI::ExistingFile);
  evaluate->add_option("--plan", rc.plan, "floor plan override")->check(CLI::ExistingFile);
  evaluate->add_option("--truth", rc.truth, "ground truth override")->check(CLI::ExistingFile);
  evaluate->add_option("--out", rc.out, "report path (default: <in>/report.json)");
  evaluate->add_option("--match-tolerance", rc.match_tolerance, "truth matching tolerance, seconds")
      ->check(CLI::PositiveNumber);
  add_localize_flags(evaluate, rc);

  auto* coverage = app.add_subcommand("coverage", "probe-grid coverage study and heatmaps");
  add_sim_flags(coverage, rc);
  coverage->add_option("--out", rc.out, "output directory");
  coverage->add_option("--probe-spacing", rc.probe_spacing, "probe grid spacing, meters")->check(CLI::PositiveNumber);
  coverage->add_option("--grid-spacing", rc.grid_spacing, "heatmap cell size, meters")->check(CLI::PositiveNumber);
  coverage->add_option("--dwell", rc.dwell, "seconds spent at each probe")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    for (auto* sub : app.get_subcommands()) rc.subcommand = sub->get_name();
    if (show_config) {
      out << config_to_json(rc).dump(2) << "\n";
      return kOk;
    }
    if (rc.subcommand == "simulate") {
      cmd_simulate(rc, out);
    } else if (rc.subcommand == "calibrate") {
      cmd_calibrate(rc, out);
    } else if (rc.subcommand == "localize") {
      cmd_localize(rc, out, err);
    } else if (rc.subcommand == "evaluate") {
      cmd_evaluate(rc, out, err);
    } else if (rc.subcommand == "coverage") {
      cmd_coverage(rc, out);
    } else {
      throw UsageError("a subcommand is required");
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
    return kData;
  } catch (const InvariantViolation& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}

}  // namespace blefuse::cli
