// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "blefuse/blefuse.hpp"
#include "blefuse/cli.hpp"

using namespace blefuse;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void criterion(int id, const std::string& title, double budget_s, const std::function<Verdict()>& body) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  const double took = seconds_since(t0);
  if (budget_s > 0 && took >= budget_s) {
    v.pass = false;
    v.detail += fmt::format("; over the {:.0f} s budget", budget_s);
  }
  if (!v.pass) ++failures;
  std::cout << fmt::format("{} {} {} ({:.3f} s): {}\n", v.pass ? "PASS" : "FAIL", id, title, took, v.detail) << std::flush;
}

DeviceRegistry registry_of(const std::vector<Position2D>& positions, PathLossParams params) {
  DeviceRegistry reg;
  for (std::size_t i = 0; i < positions.size(); ++i) reg.add("d" + std::to_string(i), {positions[i], params});
  return reg;
}

std::size_t steps_in(const std::vector<double>& magnitude, double rate) {
  const auto filtered = lowpass(magnitude, kDefaultLowpassCutoff, rate);
  return detect_steps(remove_rolling_mean(filtered, rate), rate).size();
}

std::vector<double> gait(double freq, double amplitude, double seconds, double rate) {
  std::vector<double> out;
  for (int i = 0; i < static_cast<int>(seconds * rate); ++i) out.push_back(kGravity + amplitude * std::sin(2 * kPi * freq * i / rate));
  return out;
}

Verdict round_trip() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> dist(0.1, 50.0), m(-90, -40), n(kMinPathLossExponent, kMaxPathLossExponent);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    double d = dist(rng);
    if (d <= 0.1) d = 50.0;
    const PathLossParams p{m(rng), n(rng)};
    worst = std::max(worst, std::abs(rssi_to_distance(p, distance_to_rssi(p, d)) - d) / d);
  }
  return {worst <= 1e-9, fmt::format("10000 cases, worst relative error {:.2e}", worst)};
}

Verdict centroid_collapse() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> coord(0, 60);
  std::uniform_int_distribution<int> count(1, 20), n_dev(2, 39);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = n_dev(rng);
    std::vector<Position2D> p;
    std::vector<int> h;
    HitWindow w{"b", 10.0, 10.0, {}};
    for (int i = 0; i < n; ++i) {
      p.push_back({coord(rng), coord(rng)});
      h.push_back(count(rng));
      w.per_device["d" + std::to_string(i)] = {h.back(), -80.0};
    }
    // Brute force: every unordered pair contributes its hit-weighted midpoint with weight h_i + h_j.
    double sx = 0, sy = 0, sw = 0, cx = 0, cy = 0, ch = 0;
    for (int i = 0; i < n; ++i) {
      cx += h[i] * p[i].x;
      cy += h[i] * p[i].y;
      ch += h[i];
      for (int j = i + 1; j < n; ++j) {
        const double hij = h[i] + h[j];
        sx += hij * (h[i] * p[i].x + h[j] * p[j].x) / hij;
        sy += hij * (h[i] * p[i].y + h[j] * p[j].y) / hij;
        sw += hij;
      }
    }
    const auto fix = adaptive_trilaterate(w, registry_of(p, {-70, 2.0}));
    worst = std::max({worst, std::abs(fix.position.x - sx / sw), std::abs(fix.position.y - sy / sw),
                      std::abs(fix.position.x - cx / ch), std::abs(fix.position.y - cy / ch)});
  }
  return {worst <= 1e-9, fmt::format("1000 windows, n in [2,39], worst deviation {:.2e} m", worst)};
}

Verdict baseline_exactness() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> coord(0, 50), n_dist(1.8, 4.0);
  double worst = 0;
  int tested = 0, missing = 0;
  while (tested < 1000) {
    std::vector<Position2D> anchors{{coord(rng), coord(rng)}, {coord(rng), coord(rng)}, {coord(rng), coord(rng)}};
    const auto u = anchors[1] - anchors[0], v = anchors[2] - anchors[0];
    if (std::abs(u.x * v.y - u.y * v.x) < 50.0) continue;  // twice the triangle area, in m^2
    const PathLossParams params{-70, n_dist(rng)};
    const auto reg = registry_of(anchors, params);
    const Position2D truth{coord(rng), coord(rng)};
    std::vector<RssiHit> hits;
    for (const auto& [id, d] : reg) hits.push_back({0, id, "b", distance_to_rssi(params, euclidean_distance(truth, d.position))});
    const auto fix = baseline_trilaterate(hits, reg);
    if (!fix) {
      ++missing;
    } else {
      worst = std::max(worst, euclidean_distance(fix->fix.position, truth));
    }
    ++tested;
  }
  return {missing == 0 && worst <= 1e-4, fmt::format("1000 instances, {} without a fix, worst error {:.2e} m", missing, worst)};
}

Verdict step_detection() {
  std::string detail;
  bool ok = true;
  for (double f : {1.2, 1.6, 2.0, 2.5}) {
    const auto n = steps_in(gait(f, 2.5, 30, kDefaultImuRate), kDefaultImuRate);
    ok = ok && std::abs(static_cast<double>(n) - f * 30) <= 1.0;
    detail += fmt::format("{} Hz -> {} (want {:.0f}); ", f, n, f * 30);
  }
  const auto still = steps_in(std::vector<double>(30 * 42, kGravity), kDefaultImuRate);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0, 0.02);
  auto jitter = gait(4.0, 0.1, 30, kDefaultImuRate);
  for (auto& x : jitter) x += noise(rng);
  const auto jittered = steps_in(jitter, kDefaultImuRate);
  ok = ok && still == 0 && jittered == 0;
  detail += fmt::format("stationary {}, jitter {}", still, jittered);
  return {ok, detail};
}

Verdict madgwick() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> dt(0.001, 0.1), beta(0, 1);
  Quaternion q = Quaternion::identity();
  double worst_norm = 0;
  for (int i = 0; i < 1000000; ++i) {
    const ImuSample s{0, {n(rng) * 5, n(rng) * 5, n(rng) * 5 + kGravity}, {n(rng), n(rng), n(rng)}, {n(rng), n(rng), n(rng)}};
    q = madgwick_update(q, s, dt(rng), beta(rng));
    worst_norm = std::max(worst_norm, std::abs(q.norm() - 1.0));
  }

  const Vec3 north{std::cos(60 * kDeg), 0, -std::sin(60 * kDeg)};
  const ImuSample level{0, {0, 0, kGravity}, {}, north};
  Quaternion tilt = quat_from_euler(30 * kDeg, 0, 0);
  for (int i = 0; i < 5 * 42; ++i) tilt = madgwick_update(tilt, level, 1 / 42.0);
  const double tilt_err = std::hypot(roll_of(tilt), pitch_of(tilt)) / kDeg;

  Quaternion yaw = Quaternion::identity();
  ImuSample spin = level;
  spin.gyro = {0, 0, kPi / 2};
  for (int i = 0; i < 42; ++i) yaw = madgwick_update(yaw, spin, 1 / 42.0, 0.0);
  const double yaw_err = std::abs(wrap_angle(heading_of(yaw).radians - kPi / 2)) / kDeg;

  return {worst_norm <= 1e-9 && tilt_err < 2.0 && yaw_err < 1.0,
          fmt::format("1e6 updates max |norm-1| {:.1e}; 30 deg tilt residual {:.3f} deg after 5 s; gyro yaw error {:.4f} deg",
                      worst_norm, tilt_err, yaw_err)};
}

Verdict fusion_ratio() {
  const Position2D target{10, 10};
  std::vector<BleFix> fixes;
  for (int k = 0; k <= 20; ++k) fixes.push_back({"b", double(k), target, 3, 10});
  const auto track = run_tracker(fixes, Trajectory{}, 0.0, {0, 0});
  double worst = 0;
  for (std::size_t k = 1; k < track.fixes.size(); ++k) {
    const double err = euclidean_distance(track.fixes[k].position, target);
    const double prev = euclidean_distance(track.fixes[k - 1].position, target);
    worst = std::max({worst, std::abs(err - 0.5 * prev), std::abs(err - std::sqrt(200.0) * std::pow(0.5, double(k)))});
  }
  return {track.fixes.size() == 21 && worst <= 1e-9, fmt::format("20 ticks, worst deviation from ratio 1/2: {:.1e}", worst)};
}

Verdict benchmark() {
  const auto c = benchmark_config();
  const auto truth = make_ground_truth(c);
  std::map<std::string, std::string> bindings;
  for (const auto& s : c.subjects) bindings[s.subject_id] = s.beacon_id;
  const auto bundle = make_bundle(simulate_ble(c, truth), simulate_imu(c, truth), bindings);
  const auto report = compare_methods(bundle, c.devices, c.plan, truth.records);
  const auto& base = report.method("baseline");
  const auto& ble = report.method("ble_only");
  const auto& fused = report.method("ble_imu");
  if (!base.mean_error || !ble.mean_error || !fused.mean_error || !fused.room_accuracy) return {false, "a method produced no matched fixes"};
  const bool a = *ble.mean_error < *base.mean_error;
  const bool b = *fused.mean_error <= *ble.mean_error;
  const bool rc = *fused.room_accuracy >= 80.0;
  const bool d = base.availability < ble.availability;
  return {a && b && rc && d,
          fmt::format("(a) ble_only {:.2f} m < baseline {:.2f} m {}; (b) fused {:.2f} m <= ble_only {}; (c) fused room accuracy "
                      "{:.1f}% >= 80 {}; (d) availability baseline {:.1f}% < adaptive {:.1f}% {}",
                      *ble.mean_error, *base.mean_error, a ? "ok" : "NO", *fused.mean_error, b ? "ok" : "NO",
                      *fused.room_accuracy, rc ? "ok" : "NO", base.availability, ble.availability, d ? "ok" : "NO")};
}

Verdict coverage() {
  const auto c = benchmark_config();
  const auto probes = simulate_coverage_probe(c, probe_grid(c.plan, 3.0), 30.0);

  // Dense regions carry more devices per square metre than the site as a whole.
  const double site_density = static_cast<double>(c.devices.size()) / (c.plan.site_width() * c.plan.site_height());
  double dense_hits = 0, sparse_hits = 0, dense_rssi = 0, sparse_rssi = 0;
  int dense_n = 0, sparse_n = 0, dense_rn = 0, sparse_rn = 0;
  std::vector<std::string> dense, sparse;
  for (const auto& room : c.plan.rooms()) {
    int devices = 0;
    for (const auto& [id, d] : c.devices) devices += room.contains(d.position) ? 1 : 0;
    const bool is_dense = devices / std::abs(room.area()) > site_density;
    (is_dense ? dense : sparse).push_back(room.name());
    for (const auto& p : probes) {
      if (point_in_room(c.plan, p.position) != room.name()) continue;
      (is_dense ? dense_hits : sparse_hits) += p.hit_count;
      ++(is_dense ? dense_n : sparse_n);
      if (p.mean_rssi) {
        (is_dense ? dense_rssi : sparse_rssi) += *p.mean_rssi;
        ++(is_dense ? dense_rn : sparse_rn);
      }
    }
  }
  if (!dense_n || !sparse_n || !dense_rn || !sparse_rn) return {false, "a region group has no probes"};
  dense_hits /= dense_n;
  sparse_hits /= sparse_n;
  dense_rssi /= dense_rn;
  sparse_rssi /= sparse_rn;

  double lo_h = 1e300, hi_h = -1e300, lo_r = 1e300, hi_r = -1e300;
  for (const auto& p : probes) {
    lo_h = std::min<double>(lo_h, p.hit_count);
    hi_h = std::max<double>(hi_h, p.hit_count);
    if (p.mean_rssi) {
      lo_r = std::min(lo_r, *p.mean_rssi);
      hi_r = std::max(hi_r, *p.mean_rssi);
    }
  }
  std::size_t out_of_bounds = 0;
  for (const auto& cell : coverage_heatmap(probes, c.plan, 1.0).cells) {
    if (cell.hit_count && (*cell.hit_count < lo_h - 1e-9 || *cell.hit_count > hi_h + 1e-9)) ++out_of_bounds;
    if (cell.mean_rssi && (*cell.mean_rssi < lo_r - 1e-9 || *cell.mean_rssi > hi_r + 1e-9)) ++out_of_bounds;
  }
  auto names = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& n : v) s += (s.empty() ? "" : ", ") + n;
    return s;
  };
  return {dense_hits > sparse_hits && dense_rssi > sparse_rssi && out_of_bounds == 0,
          fmt::format("dense [{}] hits {:.1f} rssi {:.2f} dB vs sparse [{}] hits {:.1f} rssi {:.2f} dB; {} heatmap values "
                      "outside probe range",
                      names(dense), dense_hits, dense_rssi, names(sparse), sparse_hits, sparse_rssi, out_of_bounds)};
}

int cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "blefuse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) throw std::runtime_error(fmt::format("blefuse {} exited {}: {}", args[1], code, err.str()));
  return code;
}

Verdict determinism() {
  const auto root = fs::temp_directory_path() / ("blefuse_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<fs::path> runs{root / "a", root / "b"};
  for (const auto& dir : runs) {
    cli_run({"simulate", "--benchmark", "--out", dir.string()});
    cli_run({"localize", "--in", dir.string()});
    cli_run({"evaluate", "--in", dir.string()});
  }
  std::vector<std::string> files{"hits.csv", "track_baseline.csv", "track_ble_only.csv", "track_ble_imu.csv", "report.json"};
  for (const auto& entry : fs::directory_iterator(runs[0])) {
    const auto name = entry.path().filename().string();
    if (name.rfind("imu_", 0) == 0) files.push_back(name);
  }
  std::string differing;
  std::size_t bytes = 0;
  for (const auto& f : files) {
    const auto a = read_text(runs[0] / f);
    bytes += a.size();
    if (a.empty() || a != read_text(runs[1] / f)) differing += " " + f;
  }
  fs::remove_all(root);
  return {differing.empty(), differing.empty() ? fmt::format("{} files ({} bytes) identical across two runs", files.size(), bytes)
                                               : "differing:" + differing};
}

}  // namespace

int main() {
  criterion(1, "path-loss round trip", 1.0, round_trip);
  criterion(2, "adaptive centroid collapse", 5.0, centroid_collapse);
  criterion(3, "baseline exactness", 5.0, baseline_exactness);
  criterion(4, "step detection", 0, step_detection);
  criterion(5, "Madgwick filter", 0, madgwick);
  criterion(6, "fusion recursion", 0, fusion_ratio);
  criterion(7, "benchmark scenario", 60.0, benchmark);
  criterion(8, "coverage study", 0, coverage);
  criterion(9, "determinism", 0, determinism);
  std::cout << (failures == 0 ? "all criteria passed\n" : fmt::format("{} criteria failed\n", failures));
  return failures == 0 ? 0 : 1;
}
