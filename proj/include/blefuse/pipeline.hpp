#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blefuse/deadreckoning.hpp"
#include "blefuse/fusion.hpp"
#include "blefuse/ingestion.hpp"
#include "blefuse/registry.hpp"
#include "blefuse/trilateration.hpp"

namespace blefuse {

struct LocalizeOptions {
  WindowOptions window;
  BaselineOptions baseline;
  PdrOptions pdr;
};

/// All three estimates for one beacon.
struct BeaconResult {
  std::string beacon_id;
  std::optional<std::string> subject_id;
  std::vector<BaselineFix> baseline;
  std::vector<BleFix> ble;
  FusedTrack baseline_track;
  FusedTrack ble_track;
  FusedTrack fused;
};

inline FusedTrack as_track(const std::string& beacon, std::span<const BleFix> fixes) {
  FusedTrack t{beacon, {}};
  for (const auto& f : fixes) t.fixes.push_back({f.timestamp, f.position, FixSource::BleOnly});
  return t;
}

inline FusedTrack as_track(const std::string& beacon, std::span<const BaselineFix> fixes) {
  FusedTrack t{beacon, {}};
  for (const auto& f : fixes) t.fixes.push_back({f.fix.timestamp, f.fix.position, FixSource::BleOnly});
  return t;
}

/// Runs baseline, adaptive BLE-only, and BLE+IMU localization for every beacon in the bundle.
inline std::map<std::string, BeaconResult> localize(const SessionBundle& bundle, const DeviceRegistry& registry,
                                                    const LocalizeOptions& options = {}) {
  std::map<std::string, BeaconResult> out;
  // One window grid for all beacons, anchored at the session's first hit.
  const auto all_hits = bundle.all_hits();
  const auto windows = build_windows(all_hits, options.window);
  std::map<std::string, std::vector<HitWindow>> windows_by_beacon;
  for (const auto& w : windows) windows_by_beacon[w.beacon_id].push_back(w);

  for (const auto& [beacon, hits] : bundle.hits) {
    BeaconResult r;
    r.beacon_id = beacon;
    r.subject_id = bundle.subject_for(beacon);
    r.baseline = baseline_fixes(hits, registry, options.baseline);
    r.ble = adaptive_fixes(windows_by_beacon[beacon], registry);
    r.baseline_track = as_track(beacon, r.baseline);
    r.ble_track = as_track(beacon, r.ble);

    Trajectory trajectory;
    if (r.subject_id && bundle.imu.count(*r.subject_id)) {
      trajectory = run_pdr(bundle.imu.at(*r.subject_id), options.pdr).trajectory;
    }
    if (!r.ble.empty()) {
      TrackerOptions tracker;
      tracker.tick = options.window.stride;
      r.fused = track_from_first_fix(r.ble, trajectory, tracker);
      r.fused.beacon_id = beacon;
    } else {
      r.fused.beacon_id = beacon;
    }
    out.emplace(beacon, std::move(r));
  }
  return out;
}

}  // namespace blefuse
