#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blefuse/error.hpp"
#include "blefuse/geometry.hpp"
#include "blefuse/pathloss.hpp"
#include "blefuse/registry.hpp"

namespace blefuse {

inline constexpr double kDefaultWindowDuration = 10.0;
inline constexpr double kDefaultWindowStride = 1.0;
inline constexpr double kDefaultRssiFloor = -95.0;
inline constexpr double kReorderTolerance = 0.1;

struct DeviceHits {
  int hit_count = 0;
  double mean_rssi = 0.0;

  friend bool operator==(const DeviceHits&, const DeviceHits&) = default;
};

/// Per-device hit counts for one beacon over [window_end - duration, window_end).
struct HitWindow {
  std::string beacon_id;
  double window_end = 0.0;
  double duration = kDefaultWindowDuration;
  std::map<std::string, DeviceHits> per_device;

  int total_hits() const {
    int total = 0;
    for (const auto& [id, h] : per_device) total += h.hit_count;
    return total;
  }

  friend bool operator==(const HitWindow&, const HitWindow&) = default;
};

struct BleFix {
  std::string beacon_id;
  double timestamp = 0.0;
  Position2D position;
  int device_count = 0;
  int total_hits = 0;

  friend bool operator==(const BleFix&, const BleFix&) = default;
};

struct WindowOptions {
  double duration = kDefaultWindowDuration;
  double stride = kDefaultWindowStride;
  /// Hits weaker than this are dropped before counting; nullopt keeps all hits.
  std::optional<double> rssi_floor = kDefaultRssiFloor;

  static WindowOptions tumbling(double duration = kDefaultWindowDuration) {
    return WindowOptions{duration, duration, kDefaultRssiFloor};
  }
};

namespace detail {

/// Verifies ordering within the reorder tolerance and returns a stably sorted copy.
inline std::vector<RssiHit> sorted_hits(std::span<const RssiHit> hits) {
  double latest = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i].timestamp < latest - kReorderTolerance) {
      throw Error(ErrorKind::UnsortedInput, "hit " + std::to_string(i) + " regresses by more than 100 ms");
    }
    latest = std::max(latest, hits[i].timestamp);
  }
  std::vector<RssiHit> out(hits.begin(), hits.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const RssiHit& a, const RssiHit& b) { return a.timestamp < b.timestamp; });
  return out;
}

}  // namespace detail

/// Slides a window of `duration` seconds by `stride` over the hit stream. Window k covers
/// [t0 + (k+1)*stride - duration, t0 + (k+1)*stride) where t0 is the first hit's timestamp,
/// so all beacons share one grid. Windows with no surviving hits are omitted.
inline std::vector<HitWindow> build_windows(std::span<const RssiHit> hits, const WindowOptions& options = {}) {
  if (!(options.duration > 0) || !(options.stride > 0)) {
    throw Error(ErrorKind::InvalidParams, "window duration and stride must be positive");
  }
  std::vector<HitWindow> windows;
  if (hits.empty()) return windows;

  const auto sorted = detail::sorted_hits(hits);
  const double t0 = sorted.front().timestamp;
  const double t_last = sorted.back().timestamp;

  std::map<std::string, std::vector<const RssiHit*>> by_beacon;
  for (const auto& h : sorted) {
    if (options.rssi_floor && h.rssi < *options.rssi_floor) continue;
    by_beacon[h.beacon_id].push_back(&h);
  }

  const auto last_k = static_cast<long long>(std::floor((t_last - t0 + options.duration) / options.stride));
  for (const auto& [beacon, beacon_hits] : by_beacon) {
    std::size_t lo = 0;
    for (long long k = 0; k <= last_k; ++k) {
      const double offset = static_cast<double>(k + 1) * options.stride;
      const double end = t0 + offset;
      const double start = t0 + (offset - options.duration);
      while (lo < beacon_hits.size() && beacon_hits[lo]->timestamp < start) ++lo;
      HitWindow window{beacon, end, options.duration, {}};
      std::map<std::string, double> rssi_sum;
      for (std::size_t i = lo; i < beacon_hits.size() && beacon_hits[i]->timestamp < end; ++i) {
        auto& entry = window.per_device[beacon_hits[i]->device_id];
        ++entry.hit_count;
        rssi_sum[beacon_hits[i]->device_id] += beacon_hits[i]->rssi;
      }
      if (window.per_device.empty()) continue;
      for (auto& [id, entry] : window.per_device) entry.mean_rssi = rssi_sum[id] / entry.hit_count;
      windows.push_back(std::move(window));
    }
  }
  std::stable_sort(windows.begin(), windows.end(),
                   [](const HitWindow& a, const HitWindow& b) { return a.window_end < b.window_end; });
  return windows;
}

/// Hit-weighted pairwise midpoints combined by the pair weight h_i + h_j.
/// A lone device yields its own position.
inline BleFix adaptive_trilaterate(const HitWindow& window, const DeviceRegistry& registry) {
  if (window.per_device.empty()) {
    throw Error(ErrorKind::EmptyWindow, "window for beacon '" + window.beacon_id + "' has no devices");
  }
  struct Entry {
    Position2D p;
    double h;
  };
  std::vector<Entry> entries;
  entries.reserve(window.per_device.size());
  for (const auto& [id, hits] : window.per_device) {
    if (hits.hit_count < 1) throw InvariantViolation("window entry with no hits");
    entries.push_back({registry.at(id).position, static_cast<double>(hits.hit_count)});
  }

  BleFix fix{window.beacon_id, window.window_end, entries.front().p, static_cast<int>(entries.size()),
             window.total_hits()};
  if (entries.size() == 1) return fix;

  Position2D weighted_sum;
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      const double w = entries[i].h + entries[j].h;
      const Position2D midpoint = (1.0 / w) * (entries[i].h * entries[i].p + entries[j].h * entries[j].p);
      weighted_sum += w * midpoint;
      weight_sum += w;
    }
  }
  fix.position = (1.0 / weight_sum) * weighted_sum;
  return fix;
}

inline std::vector<BleFix> adaptive_fixes(std::span<const HitWindow> windows, const DeviceRegistry& registry) {
  std::vector<BleFix> fixes;
  fixes.reserve(windows.size());
  for (const auto& w : windows) fixes.push_back(adaptive_trilaterate(w, registry));
  return fixes;
}

struct BaselineOptions {
  int max_iterations = 50;
  double step_tolerance = 1e-6;  // meters
  double scan_period = 0.5;      // seconds; one 2 Hz scan slot
  /// The standard method uses every concurrent hit; set a floor to discard weak ones.
  std::optional<double> rssi_floor;
};

struct BaselineFix {
  BleFix fix;
  bool converged = false;
  bool ill_conditioned = false;
  int iterations = 0;
};

namespace detail {

struct SolveResult {
  Position2D position;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  bool ill_conditioned = false;
};

inline double range_cost(std::span<const Position2D> anchors, std::span<const double> ranges, const Position2D& p) {
  double c = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double r = euclidean_distance(p, anchors[i]) - ranges[i];
    c += r * r;
  }
  return c;
}

/// Damped Gauss-Newton with step halving on sum (|p - a_i| - r_i)^2.
inline SolveResult gauss_newton(std::span<const Position2D> anchors, std::span<const double> ranges, Position2D p,
                                const BaselineOptions& options) {
  SolveResult result;
  double current = range_cost(anchors, ranges, p);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    double a11 = 0.0, a12 = 0.0, a22 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const auto d = p - anchors[i];
      const double dist = std::hypot(d.x, d.y);
      if (dist < 1e-12) continue;
      const double jx = d.x / dist, jy = d.y / dist;
      const double r = dist - ranges[i];
      a11 += jx * jx;
      a12 += jx * jy;
      a22 += jy * jy;
      g1 += jx * r;
      g2 += jy * r;
    }
    const double trace = a11 + a22;
    double det = a11 * a22 - a12 * a12;
    if (!(trace > 0)) break;
    if (det <= 1e-12 * trace * trace) {
      result.ill_conditioned = true;
      const double damping = 1e-6 * trace;
      a11 += damping;
      a22 += damping;
      det = a11 * a22 - a12 * a12;
    }
    Position2D step{-(a22 * g1 - a12 * g2) / det, -(a11 * g2 - a12 * g1) / det};
    Position2D candidate = p + step;
    double candidate_cost = range_cost(anchors, ranges, candidate);
    for (int halvings = 0; halvings < 30 && candidate_cost > current; ++halvings) {
      step = 0.5 * step;
      candidate = p + step;
      candidate_cost = range_cost(anchors, ranges, candidate);
    }
    const double step_norm = std::hypot(step.x, step.y);
    if (candidate_cost <= current) {
      p = candidate;
      current = candidate_cost;
    }
    if (step_norm < options.step_tolerance) {
      result.converged = true;
      break;
    }
  }
  result.position = p;
  result.cost = current;
  return result;
}

/// Linear least squares from differencing the range equations against the first anchor.
inline std::optional<Position2D> linearized_position(std::span<const Position2D> anchors, std::span<const double> ranges) {
  double m11 = 0.0, m12 = 0.0, m22 = 0.0, v1 = 0.0, v2 = 0.0;
  const auto& a0 = anchors[0];
  const double k0 = a0.x * a0.x + a0.y * a0.y - ranges[0] * ranges[0];
  for (std::size_t i = 1; i < anchors.size(); ++i) {
    const double ax = 2.0 * (anchors[i].x - a0.x);
    const double ay = 2.0 * (anchors[i].y - a0.y);
    const double b = anchors[i].x * anchors[i].x + anchors[i].y * anchors[i].y - ranges[i] * ranges[i] - k0;
    m11 += ax * ax;
    m12 += ax * ay;
    m22 += ay * ay;
    v1 += ax * b;
    v2 += ay * b;
  }
  const double det = m11 * m22 - m12 * m12;
  if (!(std::abs(det) > 1e-9 * std::max(1.0, (m11 + m22) * (m11 + m22)))) return std::nullopt;
  const Position2D p{(m22 * v1 - m12 * v2) / det, (m11 * v2 - m12 * v1) / det};
  if (!p.finite()) return std::nullopt;
  return p;
}

}  // namespace detail

/// Range-based trilateration over the hits of one scan instant. Distances come from the
/// path-loss model; the position minimizing sum (|p - p_i| - d_i)^2 is found by damped
/// Gauss-Newton from the hit-weighted device centroid. Fewer than three devices gives no fix.
inline std::optional<BaselineFix> baseline_trilaterate(std::span<const RssiHit> concurrent_hits,
                                                       const DeviceRegistry& registry,
                                                       const BaselineOptions& options = {}) {
  if (concurrent_hits.empty()) return std::nullopt;
  const auto& beacon = concurrent_hits.front().beacon_id;
  double t_min = concurrent_hits.front().timestamp, t_max = t_min;
  std::map<std::string, std::pair<double, int>> rssi_by_device;
  for (const auto& h : concurrent_hits) {
    if (h.beacon_id != beacon) throw Error(ErrorKind::InvalidParams, "concurrent hits must share one beacon");
    t_min = std::min(t_min, h.timestamp);
    t_max = std::max(t_max, h.timestamp);
    auto& acc = rssi_by_device[h.device_id];
    acc.first += h.rssi;
    ++acc.second;
  }
  if (t_max - t_min > options.scan_period + 1e-9) {
    throw Error(ErrorKind::InvalidParams, "concurrent hits span more than one scan slot");
  }
  if (rssi_by_device.size() < 3) return std::nullopt;

  std::vector<Position2D> anchors;
  std::vector<double> ranges;
  Position2D start;
  for (const auto& [id, acc] : rssi_by_device) {
    const auto& dev = registry.at(id);
    anchors.push_back(dev.position);
    ranges.push_back(rssi_to_distance(dev.params, acc.first / acc.second));
    start += static_cast<double>(acc.second) * dev.position;
  }
  start = (1.0 / static_cast<double>(concurrent_hits.size())) * start;

  // Anchor spread: a near-zero minor axis means the devices are (nearly) collinear.
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& a : anchors) {
    const auto d = a - start;
    sxx += d.x * d.x;
    syy += d.y * d.y;
    sxy += d.x * d.y;
  }
  const double tr = sxx + syy;
  const double disc = std::sqrt(std::max(0.0, 0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy));
  const double minor = 0.5 * tr - disc;

  // The centroid start can sit in the basin of a spurious minimum when the beacon is outside
  // the anchor hull; the linearized solution is exact for consistent ranges, so try both.
  auto best = detail::gauss_newton(anchors, ranges, start, options);
  if (const auto linear = detail::linearized_position(anchors, ranges)) {
    auto alt = detail::gauss_newton(anchors, ranges, *linear, options);
    if (alt.cost < best.cost) best = alt;
  }
  BaselineFix result;
  result.converged = best.converged;
  result.iterations = best.iterations;
  result.ill_conditioned = best.ill_conditioned || minor <= 1e-8 * std::max(tr, 1e-12);
  const Position2D p = best.position;
  result.fix = BleFix{beacon, t_min, p, static_cast<int>(anchors.size()), static_cast<int>(concurrent_hits.size())};
  return result;
}

/// Groups hits into scan slots (period `scan_period`, aligned to the first hit) per beacon and
/// runs the baseline on each slot.
inline std::vector<BaselineFix> baseline_fixes(std::span<const RssiHit> hits, const DeviceRegistry& registry,
                                               const BaselineOptions& options = {}) {
  std::vector<BaselineFix> out;
  if (hits.empty()) return out;
  const auto sorted = detail::sorted_hits(hits);
  const double t0 = sorted.front().timestamp;
  std::map<std::string, std::map<long long, std::vector<RssiHit>>> slots;
  for (const auto& h : sorted) {
    if (options.rssi_floor && h.rssi < *options.rssi_floor) continue;
    const auto slot = std::llround((h.timestamp - t0) / options.scan_period);
    slots[h.beacon_id][slot].push_back(h);
  }
  for (auto& [beacon, by_slot] : slots) {
    for (auto& [slot, slot_hits] : by_slot) {
      auto fix = baseline_trilaterate(slot_hits, registry, options);
      if (!fix) continue;
      fix->fix.timestamp = t0 + static_cast<double>(slot) * options.scan_period;
      out.push_back(std::move(*fix));
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const BaselineFix& a, const BaselineFix& b) { return a.fix.timestamp < b.fix.timestamp; });
  return out;
}

}  // namespace blefuse
