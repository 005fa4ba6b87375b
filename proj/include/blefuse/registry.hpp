#pragma once

#include <map>
#include <string>

#include "blefuse/error.hpp"
#include "blefuse/geometry.hpp"
#include "blefuse/pathloss.hpp"

namespace blefuse {

struct Device {
  Position2D position;
  PathLossParams params;

  friend bool operator==(const Device&, const Device&) = default;
};

/// Fixed receivers keyed by id. Ordered so every iteration is canonical.
class DeviceRegistry {
 public:
  using Map = std::map<std::string, Device>;

  DeviceRegistry() = default;

  void add(const std::string& id, const Device& device) {
    if (!device.position.finite()) throw Error(ErrorKind::SchemaError, "device '" + id + "' has a non-finite position");
    validate(device.params);
    if (!devices_.emplace(id, device).second) {
      throw Error(ErrorKind::SchemaError, "duplicate device id '" + id + "'");
    }
  }

  const Device& at(const std::string& id) const {
    auto it = devices_.find(id);
    if (it == devices_.end()) throw Error(ErrorKind::UnknownDevice, "device '" + id + "' is not registered");
    return it->second;
  }

  Device& mutable_at(const std::string& id) {
    auto it = devices_.find(id);
    if (it == devices_.end()) throw Error(ErrorKind::UnknownDevice, "device '" + id + "' is not registered");
    return it->second;
  }

  bool contains(const std::string& id) const { return devices_.count(id) != 0; }
  std::size_t size() const { return devices_.size(); }
  bool empty() const { return devices_.empty(); }
  const Map& devices() const { return devices_; }
  auto begin() const { return devices_.begin(); }
  auto end() const { return devices_.end(); }

  /// Throws a schema error if any device sits outside the plan's site rectangle.
  void check_within(const FloorPlan& plan) const {
    for (const auto& [id, dev] : devices_) {
      if (!plan.in_site(dev.position)) throw Error(ErrorKind::SchemaError, "device '" + id + "' lies outside the site");
    }
  }

  friend bool operator==(const DeviceRegistry&, const DeviceRegistry&) = default;

 private:
  Map devices_;
};

}  // namespace blefuse
