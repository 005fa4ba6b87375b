#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "blefuse/deadreckoning.hpp"
#include "blefuse/error.hpp"
#include "blefuse/geometry.hpp"
#include "blefuse/trilateration.hpp"

namespace blefuse {

enum class FixSource { BleOnly, ImuPropagated, Fused };

constexpr std::string_view to_string(FixSource s) {
  switch (s) {
    case FixSource::BleOnly: return "ble_only";
    case FixSource::ImuPropagated: return "imu_propagated";
    case FixSource::Fused: return "fused";
  }
  return "unknown";
}

inline std::optional<FixSource> parse_fix_source(std::string_view s) {
  if (s == "ble_only") return FixSource::BleOnly;
  if (s == "imu_propagated") return FixSource::ImuPropagated;
  if (s == "fused") return FixSource::Fused;
  return std::nullopt;
}

struct TrackFix {
  double timestamp = 0.0;
  Position2D position;
  FixSource source = FixSource::BleOnly;

  friend bool operator==(const TrackFix&, const TrackFix&) = default;
};

struct FusedTrack {
  std::string beacon_id;
  std::vector<TrackFix> fixes;

  friend bool operator==(const FusedTrack&, const FusedTrack&) = default;
};

struct FusedPosition {
  Position2D position;
  FixSource source = FixSource::ImuPropagated;
};

/// Propagates the previous fused position by the IMU displacement, then averages with the
/// BLE fix when one is available.
inline FusedPosition fuse_step(const Position2D& prev_fused, const ImuDelta& imu_delta,
                               const std::optional<Position2D>& ble_fix) {
  const Position2D imu_pos = prev_fused + imu_delta.displacement;
  if (!ble_fix) return {imu_pos, FixSource::ImuPropagated};
  return {Position2D{0.5 * (imu_pos.x + ble_fix->x), 0.5 * (imu_pos.y + ble_fix->y)}, FixSource::Fused};
}

struct TrackerOptions {
  double tick = kDefaultWindowStride;  // seconds
  /// Last tick time; defaults to the later of the last BLE fix and the IMU coverage.
  std::optional<double> t_end;
};

/// Runs the equal-weight tracker from the seed (t0, p0), emitting one fix per tick.
/// A BLE fix is used at a tick when its timestamp lies within half a tick of it.
inline FusedTrack run_tracker(std::span<const BleFix> ble_fixes, const Trajectory& imu, double t0,
                              const Position2D& p0, const TrackerOptions& options = {}) {
  if (ble_fixes.empty() && imu.steps().empty() && !imu.has_coverage()) {
    throw Error(ErrorKind::EmptyInput, "tracker needs BLE fixes or IMU data");
  }
  if (!(options.tick > 0)) throw Error(ErrorKind::InvalidParams, "tracker tick must be positive");
  for (std::size_t i = 1; i < ble_fixes.size(); ++i) {
    if (ble_fixes[i].timestamp < ble_fixes[i - 1].timestamp) {
      throw Error(ErrorKind::UnsortedInput, "BLE fixes must be time-ordered");
    }
  }

  double t_end = t0;
  if (options.t_end) {
    t_end = *options.t_end;
  } else {
    if (!ble_fixes.empty()) t_end = std::max(t_end, ble_fixes.back().timestamp);
    if (imu.has_coverage()) t_end = std::max(t_end, imu.covered_until());
  }

  const double half = 0.5 * options.tick;
  std::size_t cursor = 0;
  auto ble_at = [&](double t) -> std::optional<Position2D> {
    while (cursor < ble_fixes.size() && ble_fixes[cursor].timestamp < t - half) ++cursor;
    std::optional<Position2D> best;
    double best_gap = half;
    for (std::size_t i = cursor; i < ble_fixes.size() && ble_fixes[i].timestamp < t + half; ++i) {
      const double gap = std::abs(ble_fixes[i].timestamp - t);
      if (!best || gap < best_gap) {
        best = ble_fixes[i].position;
        best_gap = gap;
      }
    }
    return best;
  };

  FusedTrack track;
  if (!ble_fixes.empty()) track.beacon_id = ble_fixes.front().beacon_id;
  const auto seed_ble = ble_at(t0);
  track.fixes.push_back(
      {t0, p0, seed_ble && *seed_ble == p0 ? FixSource::BleOnly : FixSource::ImuPropagated});

  Position2D current = p0;
  double prev_t = t0;
  for (long long k = 1;; ++k) {
    const double t = t0 + static_cast<double>(k) * options.tick;
    if (t > t_end + 1e-9) break;
    const auto step = fuse_step(current, imu.delta(prev_t, t), ble_at(t));
    current = step.position;
    track.fixes.push_back({t, current, step.source});
    prev_t = t;
  }
  return track;
}

/// Seeds the tracker at the first BLE fix; IMU motion before it is discarded.
inline FusedTrack track_from_first_fix(std::span<const BleFix> ble_fixes, const Trajectory& imu,
                                       const TrackerOptions& options = {}) {
  if (ble_fixes.empty()) {
    throw Error(ErrorKind::EmptyInput, "no BLE fix available to seed the track");
  }
  return run_tracker(ble_fixes, imu, ble_fixes.front().timestamp, ble_fixes.front().position, options);
}

}  // namespace blefuse
