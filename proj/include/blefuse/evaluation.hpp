#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "blefuse/error.hpp"
#include "blefuse/fusion.hpp"
#include "blefuse/geometry.hpp"
#include "blefuse/pipeline.hpp"
#include "blefuse/simulator.hpp"

namespace blefuse {

inline constexpr double kDefaultMatchTolerance = 1.0;

struct MatchedFix {
  TrackFix fix;
  TruthRecord truth;
  double error = 0.0;
};

struct PositioningError {
  std::vector<MatchedFix> matched;
  std::size_t unmatched = 0;
  double mean = 0.0;
};

namespace detail {

/// Nearest truth record in time, if within tolerance. `truth` must be time-sorted.
inline const TruthRecord* nearest_truth(std::span<const TruthRecord> truth, double t, double tolerance) {
  auto it = std::lower_bound(truth.begin(), truth.end(), t,
                             [](const TruthRecord& r, double v) { return r.timestamp < v; });
  const TruthRecord* best = nullptr;
  double gap = std::numeric_limits<double>::infinity();
  if (it != truth.end()) {
    best = &*it;
    gap = it->timestamp - t;
  }
  if (it != truth.begin()) {
    const auto& prev = *std::prev(it);
    if (t - prev.timestamp <= gap) {
      best = &prev;
      gap = t - prev.timestamp;
    }
  }
  return best && gap <= tolerance ? best : nullptr;
}

}  // namespace detail

/// Euclidean error of each fix against the nearest-in-time truth sample of the same subject.
inline PositioningError positioning_error(const FusedTrack& track, std::span<const TruthRecord> truth,
                                          double match_tolerance = kDefaultMatchTolerance) {
  PositioningError result;
  double sum = 0.0;
  for (const auto& f : track.fixes) {
    const auto* r = detail::nearest_truth(truth, f.timestamp, match_tolerance);
    if (!r) {
      ++result.unmatched;
      continue;
    }
    const double e = euclidean_distance(f.position, r->position);
    result.matched.push_back({f, *r, e});
    sum += e;
  }
  if (result.matched.empty()) throw Error(ErrorKind::NoOverlap, "no track fix matches a truth sample");
  result.mean = sum / static_cast<double>(result.matched.size());
  return result;
}

struct RoomAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double percent() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total); }
};

/// Share of matched fixes (truth inside a named region) whose estimate falls in that same region.
inline RoomAccuracy room_accuracy_counts(const FusedTrack& track, std::span<const TruthRecord> truth, const FloorPlan& plan,
                                         double match_tolerance = kDefaultMatchTolerance) {
  RoomAccuracy acc;
  for (const auto& f : track.fixes) {
    const auto* r = detail::nearest_truth(truth, f.timestamp, match_tolerance);
    if (!r) continue;
    const auto truth_room = point_in_room(plan, r->position);
    if (!truth_room) continue;
    ++acc.total;
    if (point_in_room(plan, f.position) == truth_room) ++acc.correct;
  }
  return acc;
}

inline double room_accuracy(const FusedTrack& track, std::span<const TruthRecord> truth, const FloorPlan& plan,
                            double match_tolerance = kDefaultMatchTolerance) {
  const auto acc = room_accuracy_counts(track, truth, plan, match_tolerance);
  if (acc.total == 0) throw Error(ErrorKind::NoRegionSamples, "truth never enters a named region");
  return acc.percent();
}

// ---------------------------------------------------------------------------
// Coverage grids

struct CoverageCell {
  Position2D position;
  std::optional<double> hit_count;
  std::optional<double> unique_devices;
  std::optional<double> mean_rssi;
};

struct CoverageGrid {
  double spacing = 1.0;
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<CoverageCell> cells;  ///< Row-major from the southwest node, x fastest.

  const CoverageCell& at(std::size_t ix, std::size_t iy) const { return cells[iy * nx + ix]; }
};

enum class CoverageMetric { HitCount, UniqueDevices, MeanRssi };

inline std::optional<double> metric_of(const CoverageCell& c, CoverageMetric m) {
  switch (m) {
    case CoverageMetric::HitCount: return c.hit_count;
    case CoverageMetric::UniqueDevices: return c.unique_devices;
    case CoverageMetric::MeanRssi: return c.mean_rssi;
  }
  return std::nullopt;
}

/// Median nearest-neighbour distance between probes; infinity for fewer than two.
inline double median_probe_spacing(std::span<const ProbeResult> probes) {
  if (probes.size() < 2) return std::numeric_limits<double>::infinity();
  std::vector<double> nn;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < probes.size(); ++j) {
      if (i != j) best = std::min(best, euclidean_distance(probes[i].position, probes[j].position));
    }
    nn.push_back(best);
  }
  std::sort(nn.begin(), nn.end());
  const auto mid = nn.size() / 2;
  return nn.size() % 2 ? nn[mid] : 0.5 * (nn[mid - 1] + nn[mid]);
}

namespace detail {

/// Inverse-distance weighting, power 2. Coincident probes are averaged exactly.
template <typename Value>
std::optional<double> idw(const Position2D& at, std::span<const ProbeResult> probes, Value value) {
  double wsum = 0.0, vsum = 0.0;
  double exact_sum = 0.0;
  int exact_n = 0;
  for (const auto& p : probes) {
    const auto v = value(p);
    if (!v) continue;
    const double d = euclidean_distance(at, p.position);
    if (d < 1e-12) {
      exact_sum += *v;
      ++exact_n;
      continue;
    }
    const double w = 1.0 / (d * d);
    wsum += w;
    vsum += w * *v;
  }
  if (exact_n > 0) return exact_sum / exact_n;
  if (wsum == 0.0) return std::nullopt;
  return vsum / wsum;
}

}  // namespace detail

/// Interpolates probe metrics onto grid nodes (i * spacing, j * spacing) covering the site.
/// Nodes farther than twice the median probe spacing from every probe stay absent.
inline CoverageGrid coverage_heatmap(std::span<const ProbeResult> probes, const FloorPlan& plan, double spacing) {
  if (probes.empty()) throw Error(ErrorKind::EmptyInput, "coverage needs at least one probe");
  if (!(spacing > 0)) throw Error(ErrorKind::InvalidParams, "grid spacing must be positive");
  CoverageGrid grid;
  grid.spacing = spacing;
  grid.nx = static_cast<std::size_t>(std::ceil(plan.site_width() / spacing - 1e-9)) + 1;
  grid.ny = static_cast<std::size_t>(std::ceil(plan.site_height() / spacing - 1e-9)) + 1;
  const double cutoff = 2.0 * median_probe_spacing(probes);
  for (std::size_t iy = 0; iy < grid.ny; ++iy) {
    for (std::size_t ix = 0; ix < grid.nx; ++ix) {
      CoverageCell cell;
      cell.position = {static_cast<double>(ix) * spacing, static_cast<double>(iy) * spacing};
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& p : probes) nearest = std::min(nearest, euclidean_distance(cell.position, p.position));
      if (nearest <= cutoff) {
        cell.hit_count = detail::idw(cell.position, probes, [](const ProbeResult& p) { return std::optional<double>(p.hit_count); });
        cell.unique_devices =
            detail::idw(cell.position, probes, [](const ProbeResult& p) { return std::optional<double>(p.unique_devices); });
        cell.mean_rssi = detail::idw(cell.position, probes, [](const ProbeResult& p) { return p.mean_rssi; });
      }
      grid.cells.push_back(cell);
    }
  }
  return grid;
}

inline std::string coverage_to_csv(const CoverageGrid& grid) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
  std::string out = "x,y,hit_count,unique_devices,mean_rssi\n";
  for (const auto& c : grid.cells) {
    out += fmt::format("{},{},{},{},{}\n", c.position.x, c.position.y, opt(c.hit_count), opt(c.unique_devices), opt(c.mean_rssi));
  }
  return out;
}

inline std::string probes_to_csv(std::span<const ProbeResult> probes) {
  std::string out = "x,y,hit_count,unique_devices,mean_rssi\n";
  for (const auto& p : probes) {
    out += fmt::format("{},{},{},{},{}\n", p.position.x, p.position.y, p.hit_count, p.unique_devices,
                       p.mean_rssi ? fmt::format("{}", *p.mean_rssi) : std::string());
  }
  return out;
}

/// Binary PGM (P5), north up. Absent cells are 0; present values scale linearly onto 1..255.
inline std::string coverage_to_pgm(const CoverageGrid& grid, CoverageMetric metric) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : grid.cells) {
    if (auto v = metric_of(c, metric)) {
      lo = std::min(lo, *v);
      hi = std::max(hi, *v);
    }
  }
  std::string out = fmt::format("P5\n{} {}\n255\n", grid.nx, grid.ny);
  for (std::size_t row = 0; row < grid.ny; ++row) {
    const std::size_t iy = grid.ny - 1 - row;
    for (std::size_t ix = 0; ix < grid.nx; ++ix) {
      const auto v = metric_of(grid.at(ix, iy), metric);
      unsigned char px = 0;
      if (v) px = static_cast<unsigned char>(hi > lo ? 1.0 + std::round(254.0 * (*v - lo) / (hi - lo)) : 255.0);
      out.push_back(static_cast<char>(px));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Method comparison

struct MethodReport {
  std::string method;
  std::optional<double> mean_error;
  std::map<std::string, std::optional<double>> region_error;
  std::optional<double> room_accuracy;
  double availability = 0.0;
  std::size_t fixes = 0;
  std::size_t matched = 0;
};

struct EvaluationReport {
  std::vector<MethodReport> methods;  ///< baseline, ble_only, ble_imu

  const MethodReport& method(const std::string& name) const {
    for (const auto& m : methods) {
      if (m.method == name) return m;
    }
    throw InvariantViolation("no method '" + name + "' in report");
  }
};

struct EvaluationOptions {
  LocalizeOptions localize;
  double match_tolerance = kDefaultMatchTolerance;
  double tick = 1.0;  ///< Availability tick; a fix counts for [t - tick/2, t + tick/2).
};

namespace detail {

struct MethodAccumulator {
  double error_sum = 0.0;
  std::size_t matched = 0;
  std::size_t fixes = 0;
  std::map<std::string, std::pair<double, std::size_t>> region;
  RoomAccuracy rooms;
  std::size_t ticks = 0;
  std::size_t covered_ticks = 0;

  void add(const FusedTrack& track, std::span<const TruthRecord> truth, const FloorPlan& plan, const EvaluationOptions& opt) {
    fixes += track.fixes.size();
    for (const auto& f : track.fixes) {
      const auto* r = nearest_truth(truth, f.timestamp, opt.match_tolerance);
      if (!r) continue;
      const double e = euclidean_distance(f.position, r->position);
      error_sum += e;
      ++matched;
      if (const auto room = point_in_room(plan, r->position)) {
        auto& acc = region[*room];
        acc.first += e;
        ++acc.second;
        ++rooms.total;
        if (point_in_room(plan, f.position) == room) ++rooms.correct;
      }
    }
    const double half = 0.5 * opt.tick;
    for (const auto& r : truth) {
      ++ticks;
      auto it = std::lower_bound(track.fixes.begin(), track.fixes.end(), r.timestamp - half,
                                 [](const TrackFix& f, double v) { return f.timestamp < v; });
      if (it != track.fixes.end() && it->timestamp < r.timestamp + half) ++covered_ticks;
    }
  }

  MethodReport finish(const std::string& name, const FloorPlan& plan) const {
    MethodReport m;
    m.method = name;
    m.fixes = fixes;
    m.matched = matched;
    if (matched > 0) m.mean_error = error_sum / static_cast<double>(matched);
    for (const auto& room : plan.rooms()) {
      auto it = region.find(room.name());
      m.region_error[room.name()] =
          it == region.end() ? std::nullopt : std::optional<double>(it->second.first / static_cast<double>(it->second.second));
    }
    if (rooms.total > 0) m.room_accuracy = rooms.percent();
    m.availability = ticks == 0 ? 0.0 : 100.0 * static_cast<double>(covered_ticks) / static_cast<double>(ticks);
    return m;
  }
};

}  // namespace detail

inline EvaluationReport report_from_results(const std::map<std::string, BeaconResult>& results,
                                            const std::map<std::string, std::string>& bindings,
                                            std::span<const TruthRecord> truth, const FloorPlan& plan,
                                            const EvaluationOptions& options = {}) {
  detail::MethodAccumulator baseline, ble, fused;
  for (const auto& [subject, beacon] : bindings) {
    std::vector<TruthRecord> subject_truth;
    for (const auto& r : truth) {
      if (r.subject_id == subject) subject_truth.push_back(r);
    }
    std::stable_sort(subject_truth.begin(), subject_truth.end(),
                     [](const TruthRecord& a, const TruthRecord& b) { return a.timestamp < b.timestamp; });
    auto it = results.find(beacon);
    const FusedTrack empty{beacon, {}};
    baseline.add(it == results.end() ? empty : it->second.baseline_track, subject_truth, plan, options);
    ble.add(it == results.end() ? empty : it->second.ble_track, subject_truth, plan, options);
    fused.add(it == results.end() ? empty : it->second.fused, subject_truth, plan, options);
  }
  EvaluationReport report;
  report.methods = {baseline.finish("baseline", plan), ble.finish("ble_only", plan), fused.finish("ble_imu", plan)};
  if (!report.methods[0].matched && !report.methods[1].matched && !report.methods[2].matched) {
    throw Error(ErrorKind::NoOverlap, "no estimate overlaps the ground truth");
  }
  return report;
}

/// Runs all three pipelines on the same inputs and scores them against the truth.
inline EvaluationReport compare_methods(const SessionBundle& bundle, const DeviceRegistry& registry, const FloorPlan& plan,
                                        std::span<const TruthRecord> truth, const EvaluationOptions& options = {}) {
  const auto results = localize(bundle, registry, options.localize);
  return report_from_results(results, bundle.bindings, truth, plan, options);
}

inline nlohmann::json report_to_json(const EvaluationReport& report) {
  nlohmann::json methods = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& m : report.methods) {
    nlohmann::json regions = nlohmann::json::object();
    for (const auto& [name, e] : m.region_error) regions[name] = opt(e);
    methods.push_back({{"method", m.method},
                       {"mean_error_m", opt(m.mean_error)},
                       {"region_error_m", regions},
                       {"room_accuracy_pct", opt(m.room_accuracy)},
                       {"availability_pct", m.availability},
                       {"fixes", m.fixes},
                       {"matched", m.matched}});
  }
  return {{"methods", methods}};
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
  EvaluationReport report;
  auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()); };
  for (const auto& m : j.at("methods")) {
    MethodReport r;
    r.method = m.at("method").get<std::string>();
    r.mean_error = opt(m.at("mean_error_m"));
    for (const auto& [name, v] : m.at("region_error_m").items()) r.region_error[name] = opt(v);
    r.room_accuracy = opt(m.at("room_accuracy_pct"));
    r.availability = m.at("availability_pct").get<double>();
    r.fixes = m.at("fixes").get<std::size_t>();
    r.matched = m.at("matched").get<std::size_t>();
    report.methods.push_back(std::move(r));
  }
  return report;
}

/// Aligned text table, one row per method, regions as trailing columns.
inline std::string format_report(const EvaluationReport& report) {
  auto cell = [](const std::optional<double>& v, const char* suffix = "") {
    return v ? fmt::format("{:.2f}{}", *v, suffix) : std::string("-");
  };
  std::vector<std::string> regions;
  if (!report.methods.empty()) {
    for (const auto& [name, e] : report.methods.front().region_error) regions.push_back(name);
  }
  std::string out = fmt::format("{:<10} {:>10} {:>10} {:>10}", "method", "error_m", "room_%", "avail_%");
  for (const auto& r : regions) out += fmt::format(" {:>15}", r);
  out += '\n';
  for (const auto& m : report.methods) {
    out += fmt::format("{:<10} {:>10} {:>10} {:>10.2f}", m.method, cell(m.mean_error), cell(m.room_accuracy), m.availability);
    for (const auto& r : regions) out += fmt::format(" {:>15}", cell(m.region_error.at(r)));
    out += '\n';
  }
  return out;
}

}  // namespace blefuse
