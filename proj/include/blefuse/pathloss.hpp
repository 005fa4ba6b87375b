#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "blefuse/error.hpp"

namespace blefuse {

inline constexpr double kDefaultOneMeterRssi = -70.0;
inline constexpr double kMinPathLossExponent = 1.5;
inline constexpr double kMaxPathLossExponent = 6.0;

/// Log-distance path-loss parameters for one receiver.
struct PathLossParams {
  double m_rssi = kDefaultOneMeterRssi;  ///< RSSI (dB) measured at 1 m.
  double n_factor = 2.0;                 ///< Environmental exponent.

  friend bool operator==(const PathLossParams&, const PathLossParams&) = default;
};

/// One detection of a beacon broadcast by one receiver.
struct RssiHit {
  double timestamp = 0.0;  // seconds
  std::string device_id;
  std::string beacon_id;
  double rssi = 0.0;  // dB

  friend bool operator==(const RssiHit&, const RssiHit&) = default;
};

inline void validate(const PathLossParams& params) {
  if (!(params.n_factor > 0) || !std::isfinite(params.n_factor) || !std::isfinite(params.m_rssi)) {
    throw Error(ErrorKind::InvalidParams, "path-loss exponent must be positive and finite");
  }
}

/// d = 10^((M - I) / (10 N))
inline double rssi_to_distance(const PathLossParams& params, double i_rssi) {
  validate(params);
  return std::pow(10.0, (params.m_rssi - i_rssi) / (10.0 * params.n_factor));
}

inline double distance_to_rssi(const PathLossParams& params, double distance) {
  validate(params);
  if (!(distance > 0) || !std::isfinite(distance)) {
    throw Error(ErrorKind::InvalidDistance, "distance must be positive");
  }
  return params.m_rssi - 10.0 * params.n_factor * std::log10(distance);
}

struct CalibrationSample {
  double distance = 1.0;  // meters
  double rssi = 0.0;      // dB
};

struct CalibrationResult {
  double n_factor = 2.0;  ///< Clamped to [kMinPathLossExponent, kMaxPathLossExponent].
  double raw_n_factor = 2.0;
  bool clamped = false;
};

/// Closed-form least-squares fit of the exponent with the 1 m RSSI held fixed:
/// N = sum(a*b) / sum(a*a), a = -10 log10(d), b = rssi - m_rssi.
inline CalibrationResult calibrate_n(double m_rssi, std::span<const CalibrationSample> samples) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& s : samples) {
    if (!(s.distance > 0) || !std::isfinite(s.distance) || !std::isfinite(s.rssi)) {
      throw Error(ErrorKind::InvalidDistance, "calibration distances must be positive and finite");
    }
    const double a = -10.0 * std::log10(s.distance);
    num += a * (s.rssi - m_rssi);
    den += a * a;
  }
  if (den == 0.0) {
    throw Error(ErrorKind::DegenerateSamples, "need at least one sample away from 1 m");
  }
  CalibrationResult result;
  result.raw_n_factor = num / den;
  result.n_factor = std::clamp(result.raw_n_factor, kMinPathLossExponent, kMaxPathLossExponent);
  result.clamped = result.n_factor != result.raw_n_factor;
  return result;
}

}  // namespace blefuse
