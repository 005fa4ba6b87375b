#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "blefuse/error.hpp"
#include "blefuse/geometry.hpp"

namespace blefuse {

inline constexpr double kGravity = 9.81;
inline constexpr double kDefaultImuRate = 42.0;
inline constexpr double kDefaultLowpassCutoff = 3.0;
inline constexpr double kDefaultStepLength = 0.7;
inline constexpr double kDefaultWeinbergK = 0.45;
inline constexpr double kDefaultMadgwickBeta = 0.1;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

struct ImuSample {
  double timestamp = 0.0;  // seconds
  Vec3 accel;              // m/s^2, specific force (reads +g upward at rest)
  Vec3 gyro;               // rad/s
  Vec3 mag;                // field direction, any scale

  friend bool operator==(const ImuSample&, const ImuSample&) = default;
};

/// Body-to-earth rotation. The earth frame is z-up with x along horizontal magnetic north.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quaternion normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }

  Quaternion conjugate() const { return {w, -x, -y, -z}; }

  friend Quaternion operator*(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z, a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x, a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  }

  /// Rotates a body-frame vector into the earth frame.
  Vec3 rotate(const Vec3& v) const {
    const Quaternion r = (*this) * Quaternion{0.0, v.x, v.y, v.z} * conjugate();
    return {r.x, r.y, r.z};
  }

  /// Rotates an earth-frame vector into the body frame.
  Vec3 rotate_inverse(const Vec3& v) const { return conjugate().rotate(v); }

  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

inline Quaternion quat_from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  const double s = std::sin(0.5 * angle) / n;
  return {std::cos(0.5 * angle), axis.x * s, axis.y * s, axis.z * s};
}

inline Quaternion quat_from_yaw(double yaw) { return quat_from_axis_angle({0, 0, 1}, yaw); }

/// Z-Y-X (yaw, pitch, roll) composition.
inline Quaternion quat_from_euler(double roll, double pitch, double yaw) {
  return quat_from_axis_angle({0, 0, 1}, yaw) * quat_from_axis_angle({0, 1, 0}, pitch) *
         quat_from_axis_angle({1, 0, 0}, roll);
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r < 0) r += two_pi;
  r -= std::numbers::pi;
  return r >= std::numbers::pi ? -std::numbers::pi : r;
}

inline double roll_of(const Quaternion& q) {
  return std::atan2(2.0 * (q.w * q.x + q.y * q.z), 1.0 - 2.0 * (q.x * q.x + q.y * q.y));
}

inline double pitch_of(const Quaternion& q) {
  return std::asin(std::clamp(2.0 * (q.w * q.y - q.z * q.x), -1.0, 1.0));
}

struct Heading {
  double radians = 0.0;  ///< Yaw in [-pi, pi).
  bool reliable = true;  ///< False when |pitch| > 85 degrees.
};

inline Heading heading_of(const Quaternion& q) {
  const double yaw = std::atan2(2.0 * (q.w * q.z + q.x * q.y), 1.0 - 2.0 * (q.y * q.y + q.z * q.z));
  constexpr double limit = 85.0 * std::numbers::pi / 180.0;
  return {wrap_angle(yaw), std::abs(pitch_of(q)) <= limit};
}

/// Magnetic yaw (0 = north) to floor heading (0 = +x east, counterclockwise).
inline double floor_heading(double magnetic_yaw, double declination = 0.0) {
  return wrap_angle(magnetic_yaw + 0.5 * std::numbers::pi + declination);
}

inline double magnetic_yaw_from_floor(double floor_heading_rad, double declination = 0.0) {
  return wrap_angle(floor_heading_rad - 0.5 * std::numbers::pi - declination);
}

inline bool is_degenerate(const ImuSample& s) { return s.accel.norm() < 1e-6 || s.mag.norm() < 1e-6; }

/// One step of Madgwick's MARG orientation filter: gyro rate integration corrected by the
/// beta-scaled normalized gradient of the accelerometer and magnetometer alignment error.
/// Degenerate accel or mag readings fall back to gyro-only integration.
inline Quaternion madgwick_update(const Quaternion& quat, const ImuSample& sample, double dt,
                                  double beta = kDefaultMadgwickBeta) {
  if (!(dt > 0)) throw Error(ErrorKind::InvalidParams, "madgwick dt must be positive");
  const double q0 = quat.w, q1 = quat.x, q2 = quat.y, q3 = quat.z;
  const double gx = sample.gyro.x, gy = sample.gyro.y, gz = sample.gyro.z;

  double qd0 = 0.5 * (-q1 * gx - q2 * gy - q3 * gz);
  double qd1 = 0.5 * (q0 * gx + q2 * gz - q3 * gy);
  double qd2 = 0.5 * (q0 * gy - q1 * gz + q3 * gx);
  double qd3 = 0.5 * (q0 * gz + q1 * gy - q2 * gx);

  if (!is_degenerate(sample)) {
    const double an = sample.accel.norm();
    const double ax = sample.accel.x / an, ay = sample.accel.y / an, az = sample.accel.z / an;
    const double mn = sample.mag.norm();
    const double mx = sample.mag.x / mn, my = sample.mag.y / mn, mz = sample.mag.z / mn;

    const double _2q0mx = 2.0 * q0 * mx, _2q0my = 2.0 * q0 * my, _2q0mz = 2.0 * q0 * mz, _2q1mx = 2.0 * q1 * mx;
    const double _2q0 = 2.0 * q0, _2q1 = 2.0 * q1, _2q2 = 2.0 * q2, _2q3 = 2.0 * q3;
    const double _2q0q2 = 2.0 * q0 * q2, _2q2q3 = 2.0 * q2 * q3;
    const double q0q0 = q0 * q0, q0q1 = q0 * q1, q0q2 = q0 * q2, q0q3 = q0 * q3;
    const double q1q1 = q1 * q1, q1q2 = q1 * q2, q1q3 = q1 * q3;
    const double q2q2 = q2 * q2, q2q3 = q2 * q3, q3q3 = q3 * q3;

    // Earth-frame field direction, collapsed onto the x-z plane.
    const double hx = mx * q0q0 - _2q0my * q3 + _2q0mz * q2 + mx * q1q1 + _2q1 * my * q2 + _2q1 * mz * q3 -
                      mx * q2q2 - mx * q3q3;
    const double hy = _2q0mx * q3 + my * q0q0 - _2q0mz * q1 + _2q1mx * q2 - my * q1q1 + my * q2q2 +
                      _2q2 * mz * q3 - my * q3q3;
    const double _2bx = std::sqrt(hx * hx + hy * hy);
    const double _2bz = -_2q0mx * q2 + _2q0my * q1 + mz * q0q0 + _2q1mx * q3 - mz * q1q1 + _2q2 * my * q3 -
                        mz * q2q2 + mz * q3q3;
    const double _4bx = 2.0 * _2bx, _4bz = 2.0 * _2bz;

    const double fg_x = 2.0 * q1q3 - _2q0q2 - ax;
    const double fg_y = 2.0 * q0q1 + _2q2q3 - ay;
    const double fg_z = 1.0 - 2.0 * q1q1 - 2.0 * q2q2 - az;
    const double fb_x = _2bx * (0.5 - q2q2 - q3q3) + _2bz * (q1q3 - q0q2) - mx;
    const double fb_y = _2bx * (q1q2 - q0q3) + _2bz * (q0q1 + q2q3) - my;
    const double fb_z = _2bx * (q0q2 + q1q3) + _2bz * (0.5 - q1q1 - q2q2) - mz;

    double s0 = -_2q2 * fg_x + _2q1 * fg_y - _2bz * q2 * fb_x + (-_2bx * q3 + _2bz * q1) * fb_y + _2bx * q2 * fb_z;
    double s1 = _2q3 * fg_x + _2q0 * fg_y - 2.0 * _2q1 * fg_z + _2bz * q3 * fb_x + (_2bx * q2 + _2bz * q0) * fb_y +
                (_2bx * q3 - _4bz * q1) * fb_z;
    double s2 = -_2q0 * fg_x + _2q3 * fg_y - 2.0 * _2q2 * fg_z + (-_4bx * q2 - _2bz * q0) * fb_x +
                (_2bx * q1 + _2bz * q3) * fb_y + (_2bx * q0 - _4bz * q2) * fb_z;
    double s3 = _2q1 * fg_x + _2q2 * fg_y + (-_4bx * q3 + _2bz * q1) * fb_x + (-_2bx * q0 + _2bz * q2) * fb_y +
                _2bx * q1 * fb_z;
    const double sn = std::sqrt(s0 * s0 + s1 * s1 + s2 * s2 + s3 * s3);
    if (sn > 0) {
      qd0 -= beta * s0 / sn;
      qd1 -= beta * s1 / sn;
      qd2 -= beta * s2 / sn;
      qd3 -= beta * s3 / sn;
    }
  }

  return Quaternion{q0 + qd0 * dt, q1 + qd1 * dt, q2 + qd2 * dt, q3 + qd3 * dt}.normalized();
}

/// Second-order Butterworth low-pass (bilinear transform with prewarping), direct form I.
/// The state is primed with the first input so a constant signal passes through unchanged.
class LowPassFilter {
 public:
  LowPassFilter(double cutoff_hz, double rate_hz) {
    if (!(cutoff_hz > 0) || !(rate_hz > 2.0 * cutoff_hz)) {
      throw Error(ErrorKind::InvalidCutoff, "low-pass needs 0 < cutoff < rate / 2");
    }
    const double k = std::tan(std::numbers::pi * cutoff_hz / rate_hz);
    const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k * k);
    b0_ = k * k * norm;
    b1_ = 2.0 * b0_;
    b2_ = b0_;
    a1_ = 2.0 * (k * k - 1.0) * norm;
    a2_ = (1.0 - std::numbers::sqrt2 * k + k * k) * norm;
  }

  double operator()(double x) {
    if (!primed_) {
      x1_ = x2_ = y1_ = y2_ = x;
      primed_ = true;
    }
    const double y = b0_ * x + b1_ * x1_ + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

  /// |H(e^{j 2 pi f / rate})| of the designed filter.
  double magnitude_at(double freq_hz, double rate_hz) const {
    const double w = 2.0 * std::numbers::pi * freq_hz / rate_hz;
    const double cr = std::cos(w), sr = std::sin(w), c2 = std::cos(2 * w), s2 = std::sin(2 * w);
    const double nr = b0_ + b1_ * cr + b2_ * c2, ni = -(b1_ * sr + b2_ * s2);
    const double dr = 1.0 + a1_ * cr + a2_ * c2, di = -(a1_ * sr + a2_ * s2);
    return std::hypot(nr, ni) / std::hypot(dr, di);
  }

 private:
  double b0_ = 0, b1_ = 0, b2_ = 0, a1_ = 0, a2_ = 0;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
  bool primed_ = false;
};

inline std::vector<double> lowpass(std::span<const double> samples, double cutoff_hz, double rate_hz) {
  if (samples.empty()) throw Error(ErrorKind::InvalidParams, "low-pass input is empty");
  LowPassFilter filter(cutoff_hz, rate_hz);
  std::vector<double> out;
  out.reserve(samples.size());
  for (double s : samples) out.push_back(filter(s));
  return out;
}

/// Subtracts the trailing mean over `window_s` seconds (partial windows at the start).
inline std::vector<double> remove_rolling_mean(std::span<const double> samples, double rate_hz,
                                               double window_s = 2.0) {
  const auto window = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(window_s * rate_hz)));
  std::vector<double> out(samples.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    sum += samples[i];
    if (i >= window) sum -= samples[i - window];
    const auto count = std::min(i + 1, window);
    out[i] = samples[i] - sum / static_cast<double>(count);
  }
  return out;
}

struct StepDetectorOptions {
  double refractory_s = 0.25;
  double variance_threshold = 0.05;  // (m/s^2)^2
  double variance_window_s = 2.0;
};

/// Sample indices of positive-going zero crossings that pass the refractory period and the
/// trailing-variance gate.
inline std::vector<std::size_t> detect_step_indices(std::span<const double> centered, double rate_hz,
                                                    const StepDetectorOptions& options = {}) {
  std::vector<std::size_t> steps;
  if (centered.size() < 2) return steps;
  const auto window =
      std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(options.variance_window_s * rate_hz)));
  double sum = 0.0, sum_sq = 0.0;
  double last_step_t = -1e300;
  for (std::size_t i = 0; i < centered.size(); ++i) {
    sum += centered[i];
    sum_sq += centered[i] * centered[i];
    if (i >= window) {
      sum -= centered[i - window];
      sum_sq -= centered[i - window] * centered[i - window];
    }
    if (i == 0) continue;
    if (!(centered[i - 1] < 0.0 && centered[i] >= 0.0)) continue;
    const double n = static_cast<double>(std::min(i + 1, window));
    const double mean = sum / n;
    const double variance = std::max(0.0, sum_sq / n - mean * mean);
    if (variance < options.variance_threshold) continue;
    const double t = static_cast<double>(i) / rate_hz;
    if (t - last_step_t < options.refractory_s) continue;
    steps.push_back(i);
    last_step_t = t;
  }
  return steps;
}

inline std::vector<double> detect_steps(std::span<const double> centered, double rate_hz, double t0 = 0.0,
                                        const StepDetectorOptions& options = {}) {
  std::vector<double> times;
  for (auto i : detect_step_indices(centered, rate_hz, options)) times.push_back(t0 + static_cast<double>(i) / rate_hz);
  return times;
}

struct StepEvent {
  double timestamp = 0.0;
  double length = kDefaultStepLength;  // meters
  double heading = 0.0;                // floor frame, 0 = +x east, counterclockwise

  friend bool operator==(const StepEvent&, const StepEvent&) = default;
};

struct ImuDelta {
  double t_start = 0.0;
  double t_end = 0.0;
  Position2D displacement;
};

/// Step-sum trajectory answering displacement queries over (t_start, t_end].
class Trajectory {
 public:
  Trajectory() { prefix_.push_back({}); }

  explicit Trajectory(std::vector<StepEvent> steps, double covered_until = -1e300) : steps_(std::move(steps)) {
    prefix_.reserve(steps_.size() + 1);
    prefix_.push_back({});
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      if (i > 0 && steps_[i].timestamp < steps_[i - 1].timestamp) {
        throw Error(ErrorKind::UnsortedInput, "step events must be time-ordered");
      }
      const auto& s = steps_[i];
      prefix_.push_back(prefix_.back() + Position2D{s.length * std::cos(s.heading), s.length * std::sin(s.heading)});
    }
    covered_until_ = std::max(covered_until, steps_.empty() ? covered_until : steps_.back().timestamp);
  }

  ImuDelta delta(double t_start, double t_end) const {
    if (t_end < t_start) throw Error(ErrorKind::ReversedInterval, "trajectory interval is reversed");
    return {t_start, t_end, cumulative(t_end) - cumulative(t_start)};
  }

  /// Sum of all step displacements with timestamp <= t.
  Position2D cumulative(double t) const {
    const auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                                     [](double v, const StepEvent& s) { return v < s.timestamp; });
    return prefix_[static_cast<std::size_t>(it - steps_.begin())];
  }

  const std::vector<StepEvent>& steps() const { return steps_; }
  bool has_coverage() const { return covered_until_ > -1e299; }
  double covered_until() const { return covered_until_; }

 private:
  std::vector<StepEvent> steps_;
  std::vector<Position2D> prefix_;
  double covered_until_ = -1e300;
};

inline Trajectory integrate_trajectory(std::vector<StepEvent> steps) { return Trajectory(std::move(steps)); }

enum class StepLengthModel { Constant, Weinberg };

struct PdrOptions {
  double rate_hz = kDefaultImuRate;
  double lowpass_cutoff_hz = kDefaultLowpassCutoff;
  double beta = kDefaultMadgwickBeta;
  /// Gain used during the burn-in so the identity start converges onto the measured attitude.
  double burn_in_beta = 2.5;
  double burn_in_s = 2.0;
  double declination = 0.0;
  StepLengthModel step_model = StepLengthModel::Constant;
  double step_length = kDefaultStepLength;
  double weinberg_k = kDefaultWeinbergK;
  double mean_window_s = 2.0;
  StepDetectorOptions detector;
};

struct PdrResult {
  std::vector<StepEvent> steps;
  std::vector<double> headings;  // floor heading per sample
  Trajectory trajectory;
};

/// Full dead-reckoning pipeline over one subject's IMU stream.
inline PdrResult run_pdr(std::span<const ImuSample> samples, const PdrOptions& options = {}) {
  PdrResult result;
  if (samples.empty()) return result;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].timestamp > samples[i - 1].timestamp)) {
      throw Error(ErrorKind::UnsortedInput, "IMU timestamps must be strictly increasing");
    }
  }

  const double t_first = samples.front().timestamp;
  Quaternion q = Quaternion::identity();
  std::vector<double> magnitude(samples.size());
  result.headings.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double dt = i == 0 ? 1.0 / options.rate_hz : samples[i].timestamp - samples[i - 1].timestamp;
    const bool burning_in = samples[i].timestamp - t_first < options.burn_in_s;
    q = madgwick_update(q, samples[i], dt, burning_in ? options.burn_in_beta : options.beta);
    result.headings[i] = floor_heading(heading_of(q).radians, options.declination);
    magnitude[i] = samples[i].accel.norm();
  }

  const auto filtered = lowpass(magnitude, options.lowpass_cutoff_hz, options.rate_hz);
  const auto centered = remove_rolling_mean(filtered, options.rate_hz, options.mean_window_s);
  const auto indices = detect_step_indices(centered, options.rate_hz, options.detector);

  std::size_t prev = 0;
  for (auto idx : indices) {
    double length = options.step_length;
    if (options.step_model == StepLengthModel::Weinberg) {
      const auto [lo, hi] = std::minmax_element(filtered.begin() + static_cast<std::ptrdiff_t>(prev),
                                                filtered.begin() + static_cast<std::ptrdiff_t>(idx) + 1);
      length = options.weinberg_k * std::pow(std::max(0.0, *hi - *lo), 0.25);
    }
    prev = idx;
    if (samples[idx].timestamp - t_first < options.burn_in_s || !(length > 0)) continue;
    result.steps.push_back({samples[idx].timestamp, length, result.headings[idx]});
  }
  result.trajectory = Trajectory(result.steps, samples.back().timestamp);
  return result;
}

}  // namespace blefuse
