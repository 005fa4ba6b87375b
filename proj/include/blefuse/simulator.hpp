#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "blefuse/deadreckoning.hpp"
#include "blefuse/error.hpp"
#include "blefuse/geometry.hpp"
#include "blefuse/pathloss.hpp"
#include "blefuse/registry.hpp"
#include "blefuse/rng.hpp"

namespace blefuse {

struct Waypoint {
  Position2D position;
  double dwell = 0.0;  ///< Seconds spent standing at the waypoint on arrival.
};

/// A subject wearing one beacon, walking its waypoints in order and looping back to the first.
struct SubjectPath {
  std::string subject_id;
  std::string beacon_id;
  double speed = 1.2;  // m/s
  std::vector<Waypoint> waypoints;
};

struct ImuNoise {
  double accel_sigma = 0.05;  // m/s^2
  double gyro_sigma = 0.005;  // rad/s
  double mag_sigma = 0.01;    // unit field
};

struct SimulationConfig {
  std::uint64_t seed = 1;
  FloorPlan plan{1.0, 1.0, {}};
  DeviceRegistry devices;
  std::vector<SubjectPath> subjects;
  double duration = 600.0;  // seconds
  double ble_rate = 2.0;    // Hz
  double imu_rate = kDefaultImuRate;
  double rssi_noise_sigma = 4.0;  // dB
  double dropout_prob = 0.3;
  double detection_range = 15.0;  // meters
  /// Constant offset (dB) added to every hit a device reports.
  std::map<std::string, double> device_bias;
  double turn_rate = std::numbers::pi / 4.0;  // rad/s, in-place turns at waypoints
  double step_length = kDefaultStepLength;
  double gait_amplitude = 2.5;     // m/s^2, vertical accel swing
  double magnetic_dip = 1.0472;    // rad (60 degrees)
  double declination = 0.0;
  ImuNoise imu_noise;

  void validate() const {
    if (!(ble_rate > 0) || !(imu_rate > 0)) throw Error(ErrorKind::InvalidConfig, "rates must be positive");
    if (!(dropout_prob >= 0 && dropout_prob <= 1)) throw Error(ErrorKind::InvalidConfig, "dropout_prob must lie in [0,1]");
    if (!(rssi_noise_sigma >= 0)) throw Error(ErrorKind::InvalidConfig, "rssi_noise_sigma must be >= 0");
    if (!(duration > 0)) throw Error(ErrorKind::InvalidConfig, "duration must be positive");
    if (!(detection_range > 0)) throw Error(ErrorKind::InvalidConfig, "detection_range must be positive");
    if (!(turn_rate > 0) || !(step_length > 0)) throw Error(ErrorKind::InvalidConfig, "turn_rate and step_length must be positive");
    devices.check_within(plan);
    std::map<std::string, int> beacons;
    for (const auto& s : subjects) {
      if (!(s.speed > 0)) throw Error(ErrorKind::InvalidConfig, "subject '" + s.subject_id + "' needs a positive speed");
      if (s.waypoints.empty()) throw Error(ErrorKind::InvalidConfig, "subject '" + s.subject_id + "' has no waypoints");
      if (++beacons[s.beacon_id] > 1) throw Error(ErrorKind::InvalidConfig, "beacon '" + s.beacon_id + "' bound twice");
      for (const auto& w : s.waypoints) {
        if (!plan.in_site(w.position)) throw Error(ErrorKind::InvalidConfig, "waypoint outside the site");
        if (!(w.dwell >= 0)) throw Error(ErrorKind::InvalidConfig, "dwell must be >= 0");
      }
    }
  }
};

/// Piecewise-linear motion of one subject: dwell, turn in place, walk straight.
class SubjectTruth {
 public:
  enum class Kind { Dwell, Turn, Walk };

  struct Segment {
    Kind kind;
    double t0, t1;
    Position2D p0, p1;
    double h0, h1;         // floor heading at the segment ends
    double walked_before;  // seconds of walking before t0
  };

  SubjectTruth(const SubjectPath& path, double duration, double turn_rate) : id_(path.subject_id), beacon_(path.beacon_id), speed_(path.speed) {
    const auto& wps = path.waypoints;
    Position2D pos = wps.front().position;
    double heading = 0.0;
    for (std::size_t i = 1; i <= wps.size(); ++i) {
      const auto& target = wps[i % wps.size()].position;
      if (euclidean_distance(pos, target) > 1e-9) {
        heading = std::atan2(target.y - pos.y, target.x - pos.x);
        break;
      }
    }
    double t = 0.0;
    double walked = 0.0;
    std::size_t idx = 0;
    auto push = [&](Kind kind, double dt, Position2D p1, double h1) {
      if (dt <= 0) return;
      segments_.push_back({kind, t, t + dt, pos, p1, heading, h1, walked});
      if (kind == Kind::Walk) walked += dt;
      t += dt;
      pos = p1;
      heading = h1;
    };
    push(Kind::Dwell, wps.front().dwell, pos, heading);
    bool moved = false;
    while (t < duration) {
      const std::size_t next = (idx + 1) % wps.size();
      const auto& target = wps[next].position;
      const double dist = euclidean_distance(pos, target);
      if (dist > 1e-9) {
        moved = true;
        const double desired = std::atan2(target.y - pos.y, target.x - pos.x);
        const double turn = wrap_angle(desired - heading);
        if (std::abs(turn) > 1e-9) push(Kind::Turn, std::abs(turn) / turn_rate, pos, heading + turn);
        push(Kind::Walk, dist / speed_, target, heading);
      }
      push(Kind::Dwell, wps[next].dwell, target, heading);
      idx = next;
      if (next == 0 && !moved && wps[0].dwell <= 0) break;  // a single point with no dwell
    }
    if (segments_.empty() || segments_.back().t1 < duration) {
      segments_.push_back({Kind::Dwell, t, std::max(duration, t) + 1.0, pos, pos, heading, heading, walked});
    }
  }

  const std::string& subject_id() const { return id_; }
  const std::string& beacon_id() const { return beacon_; }
  double speed() const { return speed_; }
  const std::vector<Segment>& segments() const { return segments_; }

  const Segment& segment_at(double t) const {
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double v, const Segment& s) { return v < s.t1; });
    if (it == segments_.end()) return segments_.back();
    return *it;
  }

  Position2D position(double t) const {
    const auto& s = segment_at(t);
    const double u = std::clamp((t - s.t0) / (s.t1 - s.t0), 0.0, 1.0);
    return {s.p0.x + u * (s.p1.x - s.p0.x), s.p0.y + u * (s.p1.y - s.p0.y)};
  }

  /// Floor heading, unwrapped within a turn.
  double heading(double t) const {
    const auto& s = segment_at(t);
    const double u = std::clamp((t - s.t0) / (s.t1 - s.t0), 0.0, 1.0);
    return s.h0 + u * (s.h1 - s.h0);
  }

  double yaw_rate(double t) const {
    const auto& s = segment_at(t);
    return s.kind == Kind::Turn ? (s.h1 - s.h0) / (s.t1 - s.t0) : 0.0;
  }

  bool walking(double t) const { return segment_at(t).kind == Kind::Walk; }

  double walked_time(double t) const {
    const auto& s = segment_at(t);
    return s.walked_before + (s.kind == Kind::Walk ? std::clamp(t - s.t0, 0.0, s.t1 - s.t0) : 0.0);
  }

 private:
  std::string id_;
  std::string beacon_;
  double speed_;
  std::vector<Segment> segments_;
};

struct TruthRecord {
  double timestamp = 0.0;
  std::string subject_id;
  Position2D position;
  std::optional<std::string> room;

  friend bool operator==(const TruthRecord&, const TruthRecord&) = default;
};

struct GroundTruth {
  std::vector<SubjectTruth> subjects;
  std::vector<TruthRecord> records;  ///< 1 Hz samples, ordered by (timestamp, subject)

  std::vector<TruthRecord> records_for(const std::string& subject_id) const {
    std::vector<TruthRecord> out;
    for (const auto& r : records) {
      if (r.subject_id == subject_id) out.push_back(r);
    }
    return out;
  }
};

inline GroundTruth make_ground_truth(const SimulationConfig& config, double sample_rate = 1.0) {
  config.validate();
  GroundTruth truth;
  for (const auto& s : config.subjects) truth.subjects.emplace_back(s, config.duration, config.turn_rate);
  const auto n = static_cast<long long>(std::floor(config.duration * sample_rate + 1e-9));
  for (long long k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / sample_rate;
    if (t > config.duration) break;
    for (const auto& s : truth.subjects) {
      const auto p = s.position(t);
      truth.records.push_back({t, s.subject_id(), p, point_in_room(config.plan, p)});
    }
  }
  return truth;
}

namespace detail {

/// Channel draw for one (beacon, device) link; owns its own random substream.
class Link {
 public:
  Link(const StreamRng& rng, const std::string& label) : gen_(rng.stream(label)) {}

  std::optional<double> scan(const Device& dev, double bias, const Position2D& beacon_pos,
                             const SimulationConfig& config) {
    const double d = euclidean_distance(dev.position, beacon_pos);
    if (d > config.detection_range) return std::nullopt;
    const double u = uniform_(gen_);
    const double noise = config.rssi_noise_sigma > 0 ? config.rssi_noise_sigma * normal_(gen_) : 0.0;
    if (u < config.dropout_prob) return std::nullopt;
    return distance_to_rssi(dev.params, std::max(d, 0.1)) + bias + noise;
  }

 private:
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline double bias_of(const SimulationConfig& config, const std::string& device_id) {
  auto it = config.device_bias.find(device_id);
  return it == config.device_bias.end() ? 0.0 : it->second;
}

}  // namespace detail

/// Hits from every in-range device at each scan instant k / ble_rate, after Bernoulli
/// dropout and Gaussian dB noise. Ordered by (timestamp, beacon, device).
inline std::vector<RssiHit> simulate_ble(const SimulationConfig& config, const GroundTruth& truth) {
  config.validate();
  const StreamRng rng(config.seed);
  std::vector<std::vector<detail::Link>> links;
  std::vector<const SubjectTruth*> subjects;
  for (const auto& s : truth.subjects) subjects.push_back(&s);
  std::sort(subjects.begin(), subjects.end(),
            [](const SubjectTruth* a, const SubjectTruth* b) { return a->beacon_id() < b->beacon_id(); });
  for (const auto* s : subjects) {
    auto& row = links.emplace_back();
    for (const auto& [id, dev] : config.devices) row.emplace_back(rng, "ble/" + s->beacon_id() + "/" + id);
  }

  std::vector<RssiHit> hits;
  for (long long k = 0;; ++k) {
    const double t = static_cast<double>(k) / config.ble_rate;
    if (t >= config.duration) break;
    for (std::size_t si = 0; si < subjects.size(); ++si) {
      const auto pos = subjects[si]->position(t);
      std::size_t di = 0;
      for (const auto& [id, dev] : config.devices) {
        if (auto rssi = links[si][di++].scan(dev, detail::bias_of(config, id), pos, config)) {
          hits.push_back({t, id, subjects[si]->beacon_id(), *rssi});
        }
      }
    }
  }
  return hits;
}

/// Waist-worn IMU: yaw-only body attitude following the floor heading, vertical gait
/// oscillation at cadence speed / step_length while walking, gyro z from turns, and the
/// earth field rotated into the body frame. All channels carry Gaussian noise.
inline std::map<std::string, std::vector<ImuSample>> simulate_imu(const SimulationConfig& config,
                                                                  const GroundTruth& truth) {
  config.validate();
  const StreamRng rng(config.seed);
  const Vec3 field{std::cos(config.magnetic_dip), 0.0, -std::sin(config.magnetic_dip)};
  std::map<std::string, std::vector<ImuSample>> out;
  for (const auto& subject : truth.subjects) {
    auto gen = rng.stream("imu/" + subject.subject_id());
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& noise = config.imu_noise;
    auto jitter = [&](double sigma) { return sigma > 0 ? sigma * normal(gen) : 0.0; };
    const double cadence = subject.speed() / config.step_length;
    auto& samples = out[subject.subject_id()];
    for (long long k = 0;; ++k) {
      const double t = static_cast<double>(k) / config.imu_rate;
      if (t >= config.duration) break;
      const double yaw = magnetic_yaw_from_floor(subject.heading(t), config.declination);
      const Quaternion q = quat_from_yaw(yaw);
      const double vertical =
          subject.walking(t) ? config.gait_amplitude * std::sin(2.0 * std::numbers::pi * cadence * subject.walked_time(t)) : 0.0;
      const Vec3 accel = q.rotate_inverse({0.0, 0.0, kGravity + vertical});
      const Vec3 mag = q.rotate_inverse(field);
      ImuSample s;
      s.timestamp = t;
      s.accel = {accel.x + jitter(noise.accel_sigma), accel.y + jitter(noise.accel_sigma), accel.z + jitter(noise.accel_sigma)};
      s.gyro = {jitter(noise.gyro_sigma), jitter(noise.gyro_sigma), subject.yaw_rate(t) + jitter(noise.gyro_sigma)};
      s.mag = {mag.x + jitter(noise.mag_sigma), mag.y + jitter(noise.mag_sigma), mag.z + jitter(noise.mag_sigma)};
      samples.push_back(s);
    }
  }
  return out;
}

struct ProbeResult {
  Position2D position;
  int hit_count = 0;
  int unique_devices = 0;
  std::optional<double> mean_rssi;  ///< Absent when nothing was heard.
};

/// Parks a beacon at each probe point for `dwell` seconds and tallies what the receivers hear.
inline std::vector<ProbeResult> simulate_coverage_probe(const SimulationConfig& config,
                                                        std::span<const Position2D> probes, double dwell) {
  config.validate();
  if (!(dwell > 0)) throw Error(ErrorKind::InvalidConfig, "dwell must be positive");
  const StreamRng rng(config.seed);
  const auto scans = static_cast<long long>(std::floor(dwell * config.ble_rate + 1e-9));
  std::vector<ProbeResult> results;
  for (std::size_t pi = 0; pi < probes.size(); ++pi) {
    ProbeResult r{probes[pi], 0, 0, std::nullopt};
    double rssi_sum = 0.0;
    for (const auto& [id, dev] : config.devices) {
      detail::Link link(rng, "probe/" + std::to_string(pi) + "/" + id);
      int heard = 0;
      for (long long k = 0; k < scans; ++k) {
        if (auto rssi = link.scan(dev, detail::bias_of(config, id), probes[pi], config)) {
          ++heard;
          rssi_sum += *rssi;
        }
      }
      r.hit_count += heard;
      if (heard > 0) ++r.unique_devices;
    }
    if (r.hit_count > 0) r.mean_rssi = rssi_sum / r.hit_count;
    results.push_back(r);
  }
  return results;
}

/// Regularly spaced probe points covering the site, offset half a spacing from the walls.
inline std::vector<Position2D> probe_grid(const FloorPlan& plan, double spacing) {
  if (!(spacing > 0)) throw Error(ErrorKind::InvalidConfig, "probe spacing must be positive");
  std::vector<Position2D> pts;
  for (double y = 0.5 * spacing; y <= plan.site_height(); y += spacing) {
    for (double x = 0.5 * spacing; x <= plan.site_width(); x += spacing) pts.push_back({x, y});
  }
  return pts;
}

namespace detail {
inline RoomPolygon rect_room(const std::string& name, double x0, double y0, double x1, double y1) {
  return RoomPolygon(name, {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
}
}  // namespace detail

/// Synthetic 33 m x 59 m site with five regions. Device density is deliberately uneven:
/// the left corridor, kitchen and activity area are dense; the lounge and right corridor sparse.
inline FloorPlan benchmark_plan() {
  return FloorPlan(33.0, 59.0,
                   {detail::rect_room("Left Corridor", 0, 0, 6, 59), detail::rect_room("Kitchen", 6, 0, 27, 18),
                    detail::rect_room("Lounge", 6, 18, 27, 38), detail::rect_room("Activity Area", 6, 38, 27, 59),
                    detail::rect_room("Right Corridor", 27, 0, 33, 59)});
}

inline DeviceRegistry benchmark_devices() {
  std::vector<Position2D> spots;
  for (double y : {3.0, 9.5, 16.0, 22.5, 29.0, 35.5, 42.0, 48.5, 55.0}) spots.push_back({3.0, y});  // left corridor
  for (double x : {9.0, 14.0, 19.0, 24.0}) {
    spots.push_back({x, 4.0});
    spots.push_back({x, 14.0});
  }
  spots.push_back({11.5, 9.0});
  spots.push_back({21.5, 9.0});  // kitchen
  for (double x : {9.0, 14.0, 19.0, 24.0}) {
    spots.push_back({x, 42.0});
    spots.push_back({x, 55.0});
  }
  for (double x : {11.5, 16.5, 21.5}) spots.push_back({x, 48.5});  // activity area
  for (auto p : {Position2D{10, 22}, Position2D{23, 22}, Position2D{16.5, 28}, Position2D{10, 34}, Position2D{23, 34}}) {
    spots.push_back(p);  // lounge
  }
  for (double y : {7.0, 22.0, 37.0, 52.0}) spots.push_back({30.0, y});  // right corridor

  DeviceRegistry reg;
  for (std::size_t i = 0; i < spots.size(); ++i) {
    const double m_rssi = kDefaultOneMeterRssi + static_cast<double>(static_cast<int>(i % 5) - 2);
    const double n = 2.6 + 0.15 * static_cast<double>(i % 6);
    reg.add(fmt::format("rpi{:02}", i + 1), Device{spots[i], PathLossParams{m_rssi, n}});
  }
  return reg;
}

inline std::vector<SubjectPath> benchmark_subjects() {
  auto wp = [](double x, double y, double dwell) { return Waypoint{{x, y}, dwell}; };
  return {
      SubjectPath{"s1", "beacon-a", 1.2,
                  {wp(3, 8, 15), wp(14, 9, 40), wp(16, 28, 40), wp(16, 49, 40), wp(30, 49, 15), wp(30, 12, 15),
                   wp(20, 10, 30)}},
      SubjectPath{"s2", "beacon-b", 1.4,
                  {wp(18, 48, 30), wp(3, 48, 15), wp(3, 20, 10), wp(12, 26, 40), wp(22, 12, 40), wp(30, 30, 15),
                   wp(22, 50, 30)}},
      SubjectPath{"s3", "beacon-c", 1.0,
                  {wp(12, 6, 45), wp(12, 30, 30), wp(24, 44, 45), wp(3, 40, 15), wp(3, 12, 15)}},
  };
}

/// Fixed per-device RSSI offsets the localizer does not know about (mounting, ceiling reflections).
/// Drawn once from a constant seed so the site stays the same whatever the scenario seed.
inline std::map<std::string, double> benchmark_device_bias(double sigma = 6.0) {
  std::map<std::string, double> bias;
  StreamRng rng(0x5eedb1a5ULL);
  for (const auto& [id, device] : benchmark_devices()) {
    auto g = rng.stream(id);
    bias[id] = std::normal_distribution<double>(0.0, sigma)(g);
  }
  return bias;
}

/// The fixed benchmark: 39 devices, five regions, sigma 4 dB, dropout 0.3, 10 m range, three subjects, 10 minutes.
inline SimulationConfig benchmark_config(std::uint64_t seed = 20240611) {
  SimulationConfig config;
  config.seed = seed;
  config.plan = benchmark_plan();
  config.devices = benchmark_devices();
  config.subjects = benchmark_subjects();
  config.duration = 600.0;
  config.rssi_noise_sigma = 4.0;
  config.dropout_prob = 0.3;
  config.detection_range = 10.0;
  config.device_bias = benchmark_device_bias();
  return config;
}

}  // namespace blefuse
