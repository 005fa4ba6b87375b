#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blefuse/error.hpp"

namespace blefuse {

/// Planar position in meters; origin at the site's southwest corner, +x east, +y north.
struct Position2D {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Position2D&, const Position2D&) = default;

  Position2D& operator+=(const Position2D& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  friend Position2D operator+(Position2D a, const Position2D& b) { return a += b; }
  friend Position2D operator-(const Position2D& a, const Position2D& b) { return {a.x - b.x, a.y - b.y}; }
  friend Position2D operator*(double s, const Position2D& p) { return {s * p.x, s * p.y}; }

  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline double euclidean_distance(const Position2D& a, const Position2D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

namespace detail {

inline double cross(const Position2D& o, const Position2D& a, const Position2D& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool on_segment(const Position2D& p, const Position2D& a, const Position2D& b, double eps = 1e-9) {
  if (std::abs(cross(a, b, p)) > eps * std::max(1.0, euclidean_distance(a, b))) {
    return false;
  }
  return p.x >= std::min(a.x, b.x) - eps && p.x <= std::max(a.x, b.x) + eps &&
         p.y >= std::min(a.y, b.y) - eps && p.y <= std::max(a.y, b.y) + eps;
}

inline int orientation(const Position2D& a, const Position2D& b, const Position2D& c) {
  const double v = cross(a, b, c);
  if (std::abs(v) < 1e-12) return 0;
  return v > 0 ? 1 : -1;
}

inline bool segments_intersect(const Position2D& p1, const Position2D& p2, const Position2D& q1,
                               const Position2D& q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(q1, p1, p2)) return true;
  if (o2 == 0 && on_segment(q2, p1, p2)) return true;
  if (o3 == 0 && on_segment(p1, q1, q2)) return true;
  if (o4 == 0 && on_segment(p2, q1, q2)) return true;
  return false;
}

}  // namespace detail

/// Shoelace area; positive for counterclockwise vertex order.
inline double signed_area(std::span<const Position2D> vertices) {
  double twice = 0.0;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const auto& a = vertices[i];
    const auto& b = vertices[(i + 1) % vertices.size()];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

inline bool is_simple_polygon(std::span<const Position2D> vertices) {
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // Adjacent edges share a vertex by construction.
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (detail::segments_intersect(vertices[i], vertices[(i + 1) % n], vertices[j], vertices[(j + 1) % n])) {
        return false;
      }
    }
  }
  return true;
}

/// A named region bounded by a simple polygon. Construction validates the polygon
/// and stores the vertices counterclockwise.
class RoomPolygon {
 public:
  RoomPolygon(std::string name, std::vector<Position2D> vertices)
      : name_(std::move(name)), vertices_(std::move(vertices)) {
    if (vertices_.size() < 3) {
      throw Error(ErrorKind::SchemaError, "room '" + name_ + "' needs at least 3 vertices");
    }
    for (const auto& v : vertices_) {
      if (!v.finite()) throw Error(ErrorKind::SchemaError, "room '" + name_ + "' has a non-finite vertex");
    }
    double area = signed_area(vertices_);
    if (area < 0) {
      std::reverse(vertices_.begin(), vertices_.end());
      area = -area;
    }
    if (!(area > 0)) throw Error(ErrorKind::SchemaError, "room '" + name_ + "' has zero area");
    if (!is_simple_polygon(vertices_)) {
      throw Error(ErrorKind::SchemaError, "room '" + name_ + "' is self-intersecting");
    }
  }

  const std::string& name() const { return name_; }
  const std::vector<Position2D>& vertices() const { return vertices_; }
  double area() const { return signed_area(vertices_); }

  /// Even-odd ray casting; points on an edge count as inside.
  bool contains(const Position2D& p) const {
    const std::size_t n = vertices_.size();
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const auto& a = vertices_[i];
      const auto& b = vertices_[j];
      if (detail::on_segment(p, a, b)) return true;
      if ((a.y > p.y) != (b.y > p.y)) {
        const double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
        if (p.x < x_cross) inside = !inside;
      }
    }
    return inside;
  }

  Position2D centroid() const {
    const double a = area();
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
      const auto& p = vertices_[i];
      const auto& q = vertices_[(i + 1) % vertices_.size()];
      const double f = p.x * q.y - q.x * p.y;
      cx += (p.x + q.x) * f;
      cy += (p.y + q.y) * f;
    }
    return {cx / (6.0 * a), cy / (6.0 * a)};
  }

 private:
  std::string name_;
  std::vector<Position2D> vertices_;
};

/// Rectangular site with named rooms. Rooms must lie inside the site and have unique names.
class FloorPlan {
 public:
  FloorPlan(double site_width, double site_height, std::vector<RoomPolygon> rooms)
      : width_(site_width), height_(site_height), rooms_(std::move(rooms)) {
    if (!(width_ > 0) || !(height_ > 0) || !std::isfinite(width_) || !std::isfinite(height_)) {
      throw Error(ErrorKind::SchemaError, "site dimensions must be positive and finite");
    }
    std::set<std::string> names;
    for (const auto& room : rooms_) {
      if (!names.insert(room.name()).second) {
        throw Error(ErrorKind::SchemaError, "duplicate room name '" + room.name() + "'");
      }
      for (const auto& v : room.vertices()) {
        if (!in_site(v)) throw Error(ErrorKind::SchemaError, "room '" + room.name() + "' leaves the site bounds");
      }
    }
  }

  double site_width() const { return width_; }
  double site_height() const { return height_; }
  const std::vector<RoomPolygon>& rooms() const { return rooms_; }

  bool in_site(const Position2D& p, double eps = 1e-9) const {
    return p.x >= -eps && p.x <= width_ + eps && p.y >= -eps && p.y <= height_ + eps;
  }

  const RoomPolygon* find_room(const std::string& name) const {
    for (const auto& r : rooms_) {
      if (r.name() == name) return &r;
    }
    return nullptr;
  }

 private:
  double width_;
  double height_;
  std::vector<RoomPolygon> rooms_;
};

/// First room in declaration order that contains `p`.
inline std::optional<std::string> point_in_room(const FloorPlan& plan, const Position2D& p) {
  for (const auto& room : plan.rooms()) {
    if (room.contains(p)) return room.name();
  }
  return std::nullopt;
}

}  // namespace blefuse
