#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "blefuse/deadreckoning.hpp"
#include "blefuse/error.hpp"
#include "blefuse/fusion.hpp"
#include "blefuse/geometry.hpp"
#include "blefuse/pathloss.hpp"
#include "blefuse/registry.hpp"
#include "blefuse/simulator.hpp"

namespace blefuse {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kHitsHeader = "timestamp_s,device_id,beacon_id,rssi_db";
inline constexpr std::string_view kImuHeader = "timestamp_s,ax,ay,az,gx,gy,gz,mx,my,mz";
inline constexpr std::string_view kTruthHeader = "timestamp_s,subject_id,x,y,room";
inline constexpr std::string_view kTrackHeader = "timestamp_s,beacon_id,x,y,source";
inline constexpr std::string_view kCalibrationHeader = "device_id,distance_m,rssi_db";
inline constexpr double kDefaultWatermark = 2.0;

// ---------------------------------------------------------------------------
// Low-level text helpers

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary file and renames it over the target.
inline void write_text_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::IoError, "short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot rename onto '" + path.string() + "': " + ec.message());
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

/// Shortest round-trip representation.
inline std::string num(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------------------
// Record parsing

inline std::optional<RssiHit> parse_hit_line(std::string_view line) {
  const auto f = split_csv(trim(line));
  if (f.size() != 4) return std::nullopt;
  const auto t = parse_double(f[0]);
  const auto rssi = parse_double(f[3]);
  const auto device = trim(f[1]);
  const auto beacon = trim(f[2]);
  if (!t || !rssi || *t < 0 || device.empty() || beacon.empty()) return std::nullopt;
  return RssiHit{*t, std::string(device), std::string(beacon), *rssi};
}

inline std::string format_hit(const RssiHit& h) {
  return fmt::format("{},{},{},{}", num(h.timestamp), h.device_id, h.beacon_id, num(h.rssi));
}

inline std::optional<ImuSample> parse_imu_line(std::string_view line) {
  const auto f = split_csv(trim(line));
  if (f.size() != 10) return std::nullopt;
  double v[10];
  for (int i = 0; i < 10; ++i) {
    const auto x = parse_double(f[static_cast<std::size_t>(i)]);
    if (!x) return std::nullopt;
    v[i] = *x;
  }
  return ImuSample{v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}, {v[7], v[8], v[9]}};
}

inline std::string format_imu(const ImuSample& s) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{}", num(s.timestamp), num(s.accel.x), num(s.accel.y), num(s.accel.z),
                     num(s.gyro.x), num(s.gyro.y), num(s.gyro.z), num(s.mag.x), num(s.mag.y), num(s.mag.z));
}

struct ParseStats {
  std::size_t records = 0;
  std::size_t malformed = 0;
  std::size_t reordered = 0;  ///< Records that regressed by more than the reorder tolerance.
};

template <typename Record, typename Parser>
std::vector<Record> parse_csv_records(std::string_view text, std::string_view header, Parser parse, ParseStats& stats,
                                      const std::string& source) {
  std::vector<Record> out;
  bool first = true;
  std::size_t line_no = 0;
  for (auto line : lines_of(text)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (first) {
      first = false;
      if (t == header) continue;
      // A header-like first line that is not ours is a schema problem, not a bad record.
      if (!t.empty() && !std::isdigit(static_cast<unsigned char>(t.front())) && t.front() != '-' && t.front() != '.') {
        throw Error(ErrorKind::SchemaError, source + ":" + std::to_string(line_no) + ": unexpected header '" +
                                                std::string(t) + "', expected '" + std::string(header) + "'");
      }
    }
    if (auto rec = parse(t)) {
      out.push_back(std::move(*rec));
    } else {
      ++stats.malformed;
    }
  }
  stats.records += out.size();
  return out;
}

template <typename Record>
void sort_by_time(std::vector<Record>& records, ParseStats& stats) {
  double latest = -1e300;
  for (const auto& r : records) {
    if (r.timestamp < latest - kReorderTolerance) ++stats.reordered;
    latest = std::max(latest, r.timestamp);
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const Record& a, const Record& b) { return a.timestamp < b.timestamp; });
}

// ---------------------------------------------------------------------------
// Structured documents

inline json parse_json(std::string_view text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset to line number.
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw Error(ErrorKind::SchemaError, source + ":" + std::to_string(line) + ": " + e.what());
  }
}

template <typename T>
T required(const json& j, const char* key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorKind::SchemaError, ctx + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, ctx + ": bad '" + key + "': " + e.what());
  }
}

template <typename T>
T optional_field(const json& j, const char* key, T fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  return required<T>(j, key, ctx);
}

inline Position2D position_from_json(const json& j, const std::string& ctx) {
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) return {j[0].get<double>(), j[1].get<double>()};
  if (j.is_object()) return {required<double>(j, "x", ctx), required<double>(j, "y", ctx)};
  throw Error(ErrorKind::SchemaError, ctx + ": expected [x, y]");
}

inline FloorPlan plan_from_json(const json& j, const std::string& ctx = "plan") {
  std::vector<RoomPolygon> rooms;
  if (j.contains("rooms")) {
    if (!j.at("rooms").is_array()) throw Error(ErrorKind::SchemaError, ctx + ": 'rooms' must be an array");
    for (const auto& r : j.at("rooms")) {
      const auto name = required<std::string>(r, "name", ctx);
      std::vector<Position2D> vertices;
      if (!r.contains("vertices") || !r.at("vertices").is_array()) {
        throw Error(ErrorKind::SchemaError, ctx + ": room '" + name + "' needs a 'vertices' array");
      }
      for (const auto& v : r.at("vertices")) vertices.push_back(position_from_json(v, ctx + "/" + name));
      rooms.emplace_back(name, std::move(vertices));
    }
  }
  return FloorPlan(required<double>(j, "site_width", ctx), required<double>(j, "site_height", ctx), std::move(rooms));
}

inline json plan_to_json(const FloorPlan& plan) {
  json rooms = json::array();
  for (const auto& r : plan.rooms()) {
    json verts = json::array();
    for (const auto& v : r.vertices()) verts.push_back({v.x, v.y});
    rooms.push_back({{"name", r.name()}, {"vertices", verts}});
  }
  return {{"site_width", plan.site_width()}, {"site_height", plan.site_height()}, {"rooms", rooms}};
}

inline DeviceRegistry registry_from_json(const json& j, const std::string& ctx = "registry") {
  const json& list = j.is_array() ? j : j.value("devices", json::array());
  if (!list.is_array()) throw Error(ErrorKind::SchemaError, ctx + ": 'devices' must be an array");
  DeviceRegistry reg;
  for (const auto& d : list) {
    const auto id = required<std::string>(d, "device_id", ctx);
    Device dev;
    dev.position = {required<double>(d, "x", ctx + "/" + id), required<double>(d, "y", ctx + "/" + id)};
    dev.params.m_rssi = optional_field<double>(d, "m_rssi", kDefaultOneMeterRssi, ctx + "/" + id);
    dev.params.n_factor = optional_field<double>(d, "n_factor", 2.0, ctx + "/" + id);
    try {
      reg.add(id, dev);
    } catch (const Error& e) {
      throw Error(ErrorKind::SchemaError, ctx + ": " + e.what());
    }
  }
  return reg;
}

inline json registry_to_json(const DeviceRegistry& reg) {
  json list = json::array();
  for (const auto& [id, d] : reg) {
    list.push_back({{"device_id", id}, {"x", d.position.x}, {"y", d.position.y}, {"m_rssi", d.params.m_rssi},
                    {"n_factor", d.params.n_factor}});
  }
  return {{"devices", list}};
}

inline FloorPlan load_plan(const fs::path& path) { return plan_from_json(parse_json(read_text(path), path.string()), path.string()); }

inline DeviceRegistry load_registry(const fs::path& path) {
  return registry_from_json(parse_json(read_text(path), path.string()), path.string());
}

inline json scenario_to_json(const SimulationConfig& c) {
  json subjects = json::array();
  for (const auto& s : c.subjects) {
    json wps = json::array();
    for (const auto& w : s.waypoints) wps.push_back({{"x", w.position.x}, {"y", w.position.y}, {"dwell", w.dwell}});
    subjects.push_back({{"subject_id", s.subject_id}, {"beacon_id", s.beacon_id}, {"speed", s.speed}, {"waypoints", wps}});
  }
  json bias = json::object();
  for (const auto& [id, b] : c.device_bias) bias[id] = b;
  return {{"seed", c.seed},
          {"duration", c.duration},
          {"plan", plan_to_json(c.plan)},
          {"devices", registry_to_json(c.devices)["devices"]},
          {"subjects", subjects},
          {"ble_rate", c.ble_rate},
          {"imu_rate", c.imu_rate},
          {"rssi_noise_sigma", c.rssi_noise_sigma},
          {"dropout_prob", c.dropout_prob},
          {"detection_range", c.detection_range},
          {"device_bias", bias},
          {"turn_rate", c.turn_rate},
          {"step_length", c.step_length},
          {"gait_amplitude", c.gait_amplitude},
          {"magnetic_dip", c.magnetic_dip},
          {"declination", c.declination},
          {"imu_noise",
           {{"accel_sigma", c.imu_noise.accel_sigma},
            {"gyro_sigma", c.imu_noise.gyro_sigma},
            {"mag_sigma", c.imu_noise.mag_sigma}}}};
}

/// `plan_file` / `registry_file` entries are resolved relative to `base_dir`.
inline SimulationConfig scenario_from_json(const json& j, const fs::path& base_dir = {}, const std::string& ctx = "scenario") {
  SimulationConfig c;
  c.seed = optional_field<std::uint64_t>(j, "seed", c.seed, ctx);
  c.duration = optional_field<double>(j, "duration", c.duration, ctx);
  if (j.contains("plan")) {
    c.plan = plan_from_json(j.at("plan"), ctx + "/plan");
  } else if (j.contains("plan_file")) {
    c.plan = load_plan(base_dir / required<std::string>(j, "plan_file", ctx));
  } else {
    throw Error(ErrorKind::SchemaError, ctx + ": needs 'plan' or 'plan_file'");
  }
  if (j.contains("devices")) {
    c.devices = registry_from_json(j.at("devices"), ctx + "/devices");
  } else if (j.contains("registry_file")) {
    c.devices = load_registry(base_dir / required<std::string>(j, "registry_file", ctx));
  } else {
    throw Error(ErrorKind::SchemaError, ctx + ": needs 'devices' or 'registry_file'");
  }
  for (const auto& s : j.value("subjects", json::array())) {
    SubjectPath p;
    p.subject_id = required<std::string>(s, "subject_id", ctx);
    p.beacon_id = required<std::string>(s, "beacon_id", ctx + "/" + p.subject_id);
    p.speed = optional_field<double>(s, "speed", p.speed, ctx + "/" + p.subject_id);
    for (const auto& w : s.value("waypoints", json::array())) {
      p.waypoints.push_back({position_from_json(w, ctx + "/" + p.subject_id),
                             w.is_object() ? optional_field<double>(w, "dwell", 0.0, ctx) : 0.0});
    }
    c.subjects.push_back(std::move(p));
  }
  c.ble_rate = optional_field<double>(j, "ble_rate", c.ble_rate, ctx);
  c.imu_rate = optional_field<double>(j, "imu_rate", c.imu_rate, ctx);
  c.rssi_noise_sigma = optional_field<double>(j, "rssi_noise_sigma", c.rssi_noise_sigma, ctx);
  c.dropout_prob = optional_field<double>(j, "dropout_prob", c.dropout_prob, ctx);
  c.detection_range = optional_field<double>(j, "detection_range", c.detection_range, ctx);
  if (j.contains("device_bias")) c.device_bias = required<std::map<std::string, double>>(j, "device_bias", ctx);
  c.turn_rate = optional_field<double>(j, "turn_rate", c.turn_rate, ctx);
  c.step_length = optional_field<double>(j, "step_length", c.step_length, ctx);
  c.gait_amplitude = optional_field<double>(j, "gait_amplitude", c.gait_amplitude, ctx);
  c.magnetic_dip = optional_field<double>(j, "magnetic_dip", c.magnetic_dip, ctx);
  c.declination = optional_field<double>(j, "declination", c.declination, ctx);
  if (j.contains("imu_noise")) {
    const auto& n = j.at("imu_noise");
    c.imu_noise.accel_sigma = optional_field<double>(n, "accel_sigma", c.imu_noise.accel_sigma, ctx);
    c.imu_noise.gyro_sigma = optional_field<double>(n, "gyro_sigma", c.imu_noise.gyro_sigma, ctx);
    c.imu_noise.mag_sigma = optional_field<double>(n, "mag_sigma", c.imu_noise.mag_sigma, ctx);
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::SchemaError, ctx + ": " + e.what());
  }
  return c;
}

inline SimulationConfig load_scenario(const fs::path& path) {
  return scenario_from_json(parse_json(read_text(path), path.string()), path.parent_path(), path.string());
}

// ---------------------------------------------------------------------------
// CSV documents

inline std::string hits_to_csv(std::span<const RssiHit> hits) {
  std::string out(kHitsHeader);
  out += '\n';
  for (const auto& h : hits) {
    out += format_hit(h);
    out += '\n';
  }
  return out;
}

inline std::string imu_to_csv(std::span<const ImuSample> samples) {
  std::string out(kImuHeader);
  out += '\n';
  for (const auto& s : samples) {
    out += format_imu(s);
    out += '\n';
  }
  return out;
}

inline std::string truth_to_csv(std::span<const TruthRecord> records) {
  std::string out(kTruthHeader);
  out += '\n';
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{},{}\n", num(r.timestamp), r.subject_id, num(r.position.x), num(r.position.y),
                       r.room.value_or(""));
  }
  return out;
}

inline std::vector<TruthRecord> truth_from_csv(std::string_view text, ParseStats& stats, const std::string& source = "truth") {
  auto parse = [](std::string_view line) -> std::optional<TruthRecord> {
    const auto f = split_csv(line);
    if (f.size() != 5) return std::nullopt;
    const auto t = parse_double(f[0]);
    const auto x = parse_double(f[2]);
    const auto y = parse_double(f[3]);
    if (!t || !x || !y || trim(f[1]).empty()) return std::nullopt;
    TruthRecord r{*t, std::string(trim(f[1])), {*x, *y}, std::nullopt};
    if (!trim(f[4]).empty()) r.room = std::string(trim(f[4]));
    return r;
  };
  auto out = parse_csv_records<TruthRecord>(text, kTruthHeader, parse, stats, source);
  sort_by_time(out, stats);
  return out;
}

inline std::string track_to_csv(std::span<const FusedTrack> tracks) {
  std::string out(kTrackHeader);
  out += '\n';
  for (const auto& track : tracks) {
    for (const auto& f : track.fixes) {
      out += fmt::format("{},{},{},{},{}\n", num(f.timestamp), track.beacon_id, num(f.position.x), num(f.position.y),
                         to_string(f.source));
    }
  }
  return out;
}

inline std::vector<FusedTrack> tracks_from_csv(std::string_view text, ParseStats& stats, const std::string& source = "track") {
  struct Row {
    double timestamp;
    std::string beacon;
    TrackFix fix;
  };
  auto parse = [](std::string_view line) -> std::optional<Row> {
    const auto f = split_csv(line);
    if (f.size() != 5) return std::nullopt;
    const auto t = parse_double(f[0]);
    const auto x = parse_double(f[2]);
    const auto y = parse_double(f[3]);
    const auto src = parse_fix_source(trim(f[4]));
    if (!t || !x || !y || !src || trim(f[1]).empty()) return std::nullopt;
    return Row{*t, std::string(trim(f[1])), TrackFix{*t, {*x, *y}, *src}};
  };
  auto rows = parse_csv_records<Row>(text, kTrackHeader, parse, stats, source);
  std::map<std::string, FusedTrack> by_beacon;
  for (auto& r : rows) {
    auto& t = by_beacon[r.beacon];
    t.beacon_id = r.beacon;
    t.fixes.push_back(r.fix);
  }
  std::vector<FusedTrack> out;
  for (auto& [b, t] : by_beacon) {
    std::stable_sort(t.fixes.begin(), t.fixes.end(),
                     [](const TrackFix& a, const TrackFix& c) { return a.timestamp < c.timestamp; });
    out.push_back(std::move(t));
  }
  return out;
}

/// Calibration samples file: device_id,distance_m,rssi_db per line.
inline std::map<std::string, std::vector<CalibrationSample>> calibration_from_csv(std::string_view text, ParseStats& stats,
                                                                                 const std::string& source = "samples") {
  struct Row {
    std::string device;
    CalibrationSample s;
  };
  auto parse = [](std::string_view line) -> std::optional<Row> {
    const auto f = split_csv(line);
    if (f.size() != 3 || trim(f[0]).empty()) return std::nullopt;
    const auto d = parse_double(f[1]);
    const auto r = parse_double(f[2]);
    if (!d || !r || !(*d > 0)) return std::nullopt;
    return Row{std::string(trim(f[0])), {*d, *r}};
  };
  std::map<std::string, std::vector<CalibrationSample>> out;
  for (auto& row : parse_csv_records<Row>(text, kCalibrationHeader, parse, stats, source)) out[row.device].push_back(row.s);
  return out;
}

// ---------------------------------------------------------------------------
// Session bundles

/// Files making up one recording session. Offsets (seconds) are added to every timestamp
/// of the corresponding stream to correct constant clock skew.
struct BundlePaths {
  std::vector<fs::path> hit_files;
  std::map<std::string, fs::path> imu_files;       // subject -> file
  std::map<std::string, std::string> bindings;     // subject -> beacon
  double hits_offset = 0.0;
  std::map<std::string, double> imu_offsets;       // subject -> offset
  std::optional<fs::path> registry;
  std::optional<fs::path> plan;
  std::optional<fs::path> truth;
};

struct BundleDiagnostics {
  std::size_t malformed = 0;
  std::size_t reordered = 0;
};

struct SessionBundle {
  std::map<std::string, std::vector<RssiHit>> hits;        // beacon -> hits
  std::map<std::string, std::vector<ImuSample>> imu;       // subject -> samples
  std::map<std::string, std::string> bindings;             // subject -> beacon
  BundleDiagnostics diagnostics;

  std::vector<RssiHit> all_hits() const {
    std::vector<RssiHit> out;
    for (const auto& [b, h] : hits) out.insert(out.end(), h.begin(), h.end());
    std::stable_sort(out.begin(), out.end(), [](const RssiHit& a, const RssiHit& c) { return a.timestamp < c.timestamp; });
    return out;
  }

  std::optional<std::string> subject_for(const std::string& beacon) const {
    for (const auto& [s, b] : bindings) {
      if (b == beacon) return s;
    }
    return std::nullopt;
  }

  friend bool operator==(const SessionBundle& a, const SessionBundle& b) {
    return a.hits == b.hits && a.imu == b.imu && a.bindings == b.bindings &&
           a.diagnostics.malformed == b.diagnostics.malformed && a.diagnostics.reordered == b.diagnostics.reordered;
  }
};

/// Builds a bundle from already-parsed streams (sorting and skew correction included).
inline SessionBundle make_bundle(std::vector<RssiHit> hits, std::map<std::string, std::vector<ImuSample>> imu,
                                 std::map<std::string, std::string> bindings) {
  SessionBundle b;
  ParseStats stats;
  sort_by_time(hits, stats);
  for (auto& h : hits) b.hits[h.beacon_id].push_back(std::move(h));
  for (auto& [subject, samples] : imu) {
    sort_by_time(samples, stats);
    b.imu[subject] = std::move(samples);
  }
  b.bindings = std::move(bindings);
  b.diagnostics.reordered = stats.reordered;
  return b;
}

inline SessionBundle load_bundle(const BundlePaths& paths) {
  ParseStats stats;
  std::vector<RssiHit> hits;
  for (const auto& file : paths.hit_files) {
    auto part = parse_csv_records<RssiHit>(read_text(file), kHitsHeader, parse_hit_line, stats, file.string());
    hits.insert(hits.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  for (auto& h : hits) h.timestamp += paths.hits_offset;
  sort_by_time(hits, stats);

  SessionBundle bundle;
  for (auto& h : hits) bundle.hits[h.beacon_id].push_back(std::move(h));
  for (const auto& [subject, file] : paths.imu_files) {
    auto samples = parse_csv_records<ImuSample>(read_text(file), kImuHeader, parse_imu_line, stats, file.string());
    const auto off = paths.imu_offsets.count(subject) ? paths.imu_offsets.at(subject) : 0.0;
    for (auto& s : samples) s.timestamp += off;
    sort_by_time(samples, stats);
    // Duplicate timestamps cannot feed a strictly increasing IMU pipeline.
    samples.erase(std::unique(samples.begin(), samples.end(),
                              [&](const ImuSample& a, const ImuSample& b) {
                                if (a.timestamp != b.timestamp) return false;
                                ++stats.malformed;
                                return true;
                              }),
                  samples.end());
    bundle.imu[subject] = std::move(samples);
  }
  for (const auto& [subject, beacon] : paths.bindings) bundle.bindings[subject] = beacon;
  for (const auto& [subject, file] : paths.imu_files) {
    if (!bundle.bindings.count(subject)) {
      throw Error(ErrorKind::SchemaError, "IMU stream for subject '" + subject + "' has no beacon binding");
    }
  }
  bundle.diagnostics = {stats.malformed, stats.reordered};
  std::size_t total = 0;
  for (const auto& [b, h] : bundle.hits) total += h.size();
  for (const auto& [s, v] : bundle.imu) total += v.size();
  if (total == 0) throw Error(ErrorKind::EmptyBundle, "no valid records in any input file");
  return bundle;
}

inline constexpr std::string_view kManifestName = "bundle.json";

inline json manifest_to_json(const BundlePaths& p) {
  json j;
  json hits = json::array();
  for (const auto& f : p.hit_files) hits.push_back(f.generic_string());
  j["hits"] = hits;
  json imu = json::object();
  for (const auto& [s, f] : p.imu_files) imu[s] = f.generic_string();
  j["imu"] = imu;
  j["bindings"] = p.bindings;
  j["offsets"] = {{"hits", p.hits_offset}, {"imu", p.imu_offsets}};
  if (p.registry) j["registry"] = p.registry->generic_string();
  if (p.plan) j["plan"] = p.plan->generic_string();
  if (p.truth) j["truth"] = p.truth->generic_string();
  return j;
}

/// Reads `bundle.json` in `dir`; relative paths resolve against `dir`.
inline BundlePaths load_manifest(const fs::path& dir) {
  const auto path = dir / kManifestName;
  const auto j = parse_json(read_text(path), path.string());
  const std::string ctx = path.string();
  BundlePaths p;
  auto resolve = [&](const std::string& s) { return fs::path(s).is_absolute() ? fs::path(s) : dir / s; };
  const json hits = j.contains("hits") ? j.at("hits") : json::array();
  if (hits.is_string()) {
    p.hit_files.push_back(resolve(hits.get<std::string>()));
  } else {
    for (const auto& h : hits) p.hit_files.push_back(resolve(h.get<std::string>()));
  }
  const json imu = j.value("imu", json::object());
  for (const auto& [s, f] : imu.items()) p.imu_files[s] = resolve(f.get<std::string>());
  p.bindings = optional_field<std::map<std::string, std::string>>(j, "bindings", {}, ctx);
  if (j.contains("offsets")) {
    const auto& o = j.at("offsets");
    p.hits_offset = optional_field<double>(o, "hits", 0.0, ctx);
    p.imu_offsets = optional_field<std::map<std::string, double>>(o, "imu", {}, ctx);
  }
  if (j.contains("registry")) p.registry = resolve(required<std::string>(j, "registry", ctx));
  if (j.contains("plan")) p.plan = resolve(required<std::string>(j, "plan", ctx));
  if (j.contains("truth")) p.truth = resolve(required<std::string>(j, "truth", ctx));
  return p;
}

// ---------------------------------------------------------------------------
// Streaming

/// Incremental hit ingestion with a lateness watermark. Records are held until the newest
/// timestamp seen moves `watermark` seconds past them, then released in timestamp order
/// (arrival order breaks ties). Records older than newest - watermark on arrival are dropped.
class HitStream {
 public:
  explicit HitStream(double watermark = kDefaultWatermark) : watermark_(watermark) {}

  /// Feeds one text line; returns the records this line released.
  std::vector<RssiHit> push_line(std::string_view line) {
    const auto t = trim(line);
    if (t.empty() || t == kHitsHeader || t.front() == '#') return {};
    auto hit = parse_hit_line(t);
    if (!hit) {
      ++malformed_;
      return {};
    }
    return push(std::move(*hit));
  }

  std::vector<RssiHit> push(RssiHit hit) {
    if (hit.timestamp < newest_ - watermark_) {
      ++late_dropped_;
      return {};
    }
    newest_ = std::max(newest_, hit.timestamp);
    pending_.push({std::move(hit), seq_++});
    return release(newest_ - watermark_);
  }

  /// Releases everything still pending (end of input).
  std::vector<RssiHit> flush() { return release(std::numeric_limits<double>::infinity()); }

  std::size_t malformed() const { return malformed_; }
  std::size_t late_dropped() const { return late_dropped_; }
  const std::map<std::string, std::vector<RssiHit>>& released_by_beacon() const { return by_beacon_; }

 private:
  struct Pending {
    RssiHit hit;
    std::size_t seq;
    bool operator>(const Pending& o) const {
      return hit.timestamp != o.hit.timestamp ? hit.timestamp > o.hit.timestamp : seq > o.seq;
    }
  };

  std::vector<RssiHit> release(double horizon) {
    std::vector<RssiHit> out;
    while (!pending_.empty() && pending_.top().hit.timestamp < horizon) {
      out.push_back(pending_.top().hit);
      pending_.pop();
    }
    for (const auto& h : out) by_beacon_[h.beacon_id].push_back(h);
    return out;
  }

  double watermark_;
  double newest_ = -std::numeric_limits<double>::infinity();
  std::size_t seq_ = 0;
  std::size_t malformed_ = 0;
  std::size_t late_dropped_ = 0;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> pending_;
  std::map<std::string, std::vector<RssiHit>> by_beacon_;
};

}  // namespace blefuse
