#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "blefuse/geometry.hpp"

using namespace blefuse;

namespace {

RoomPolygon unit_square(const std::string& name = "Unit") { return RoomPolygon(name, {{0, 0}, {1, 0}, {1, 1}, {0, 1}}); }

// Independent oracle: winding number by summing signed angles.
int winding_number(const std::vector<Position2D>& poly, const Position2D& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto a = poly[i] - p;
    const auto b = poly[(i + 1) % poly.size()] - p;
    total += std::atan2(a.x * b.y - a.y * b.x, a.x * b.x + a.y * b.y);
  }
  return static_cast<int>(std::lround(total / (2 * std::numbers::pi)));
}

// Random star-shaped polygon: one vertex per angular sector keeps it simple.
std::vector<Position2D> star_polygon(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> radius(1.0, 5.0);
  std::uniform_real_distribution<double> jitter(0.05, 0.95);
  std::vector<Position2D> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2 * std::numbers::pi * (static_cast<double>(i) + jitter(rng)) / static_cast<double>(n);
    const double r = radius(rng);
    out.push_back({10 + r * std::cos(a), 10 + r * std::sin(a)});
  }
  return out;
}

}  // namespace

TEST(EuclideanDistance, Examples) {
  EXPECT_DOUBLE_EQ(euclidean_distance({0, 0}, {3, 4}), 5.0);
  EXPECT_DOUBLE_EQ(euclidean_distance({1, 1}, {1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(euclidean_distance({-2, 0}, {2, 0}), 4.0);
}

TEST(EuclideanDistance, MetricAxiomsOnRandomTriples) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 1000; ++i) {
    const Position2D a{u(rng), u(rng)}, b{u(rng), u(rng)}, c{u(rng), u(rng)};
    EXPECT_LE(euclidean_distance(a, c), euclidean_distance(a, b) + euclidean_distance(b, c) + 1e-12);
    EXPECT_EQ(euclidean_distance(a, b), euclidean_distance(b, a));
    EXPECT_GT(euclidean_distance(a, b), 0.0);
  }
}

TEST(RoomPolygon, RejectsDegenerateShapes) {
  EXPECT_THROW(RoomPolygon("two", {{0, 0}, {1, 0}}), Error);
  EXPECT_THROW(RoomPolygon("flat", {{0, 0}, {1, 0}, {2, 0}}), Error);
  EXPECT_THROW(RoomPolygon("bowtie", {{0, 0}, {1, 1}, {1, 0}, {0, 1}}), Error);
  EXPECT_THROW(RoomPolygon("nan", {{0, 0}, {1, 0}, {NAN, 1}}), Error);
}

TEST(RoomPolygon, ClockwiseInputIsNormalized) {
  RoomPolygon cw("cw", {{0, 0}, {0, 1}, {1, 1}, {1, 0}});
  EXPECT_GT(cw.area(), 0.0);
  EXPECT_DOUBLE_EQ(cw.area(), 1.0);
  EXPECT_TRUE(cw.contains({0.5, 0.5}));
}

TEST(RoomPolygon, CentroidMatchesGridSampling) {
  RoomPolygon ell("L", {{0, 0}, {4, 0}, {4, 1}, {1, 1}, {1, 3}, {0, 3}});
  double sx = 0, sy = 0;
  int n = 0;
  for (double x = 0.005; x < 4; x += 0.01) {
    for (double y = 0.005; y < 3; y += 0.01) {
      if (winding_number(ell.vertices(), {x, y}) != 0) {
        sx += x;
        sy += y;
        ++n;
      }
    }
  }
  const auto c = ell.centroid();
  EXPECT_NEAR(c.x, sx / n, 1e-3);
  EXPECT_NEAR(c.y, sy / n, 1e-3);
  EXPECT_DOUBLE_EQ(ell.area(), 6.0);
}

TEST(PointInRoom, UnitSquareExamples) {
  FloorPlan plan(5, 5, {unit_square()});
  EXPECT_EQ(point_in_room(plan, {0.5, 0.5}), "Unit");
  EXPECT_EQ(point_in_room(plan, {2, 2}), std::nullopt);
}

TEST(PointInRoom, BoundaryCountsAsInside) {
  FloorPlan plan(5, 5, {unit_square()});
  EXPECT_EQ(point_in_room(plan, {1.0, 0.5}), "Unit");
  EXPECT_EQ(point_in_room(plan, {0.0, 0.0}), "Unit");
  EXPECT_EQ(point_in_room(plan, {0.5, 1.0}), "Unit");
  EXPECT_EQ(point_in_room(plan, {1.0 + 1e-6, 0.5}), std::nullopt);
}

TEST(PointInRoom, OverlapResolvedByDeclarationOrder) {
  RoomPolygon a("A", {{0, 0}, {2, 0}, {2, 2}, {0, 2}});
  RoomPolygon b("B", {{1, 1}, {3, 1}, {3, 3}, {1, 3}});
  const Position2D p{1.5, 1.5};
  ASSERT_TRUE(a.contains(p));
  ASSERT_TRUE(b.contains(p));
  EXPECT_EQ(point_in_room(FloorPlan(4, 4, {a, b}), p), "A");
  EXPECT_EQ(point_in_room(FloorPlan(4, 4, {b, a}), p), "B");
}

TEST(PointInRoom, AgreesWithWindingNumberOracle) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(4, 16);
  for (int poly = 0; poly < 20; ++poly) {
    const auto verts = star_polygon(rng, 3 + poly % 10);
    RoomPolygon room("R", verts);
    for (int i = 0; i < 1000; ++i) {
      const Position2D p{u(rng), u(rng)};
      EXPECT_EQ(room.contains(p), winding_number(verts, p) != 0) << "polygon " << poly << " point " << p.x << "," << p.y;
    }
  }
}

TEST(PointInRoom, ConcaveRoom) {
  RoomPolygon u_shape("U", {{0, 0}, {3, 0}, {3, 3}, {2, 3}, {2, 1}, {1, 1}, {1, 3}, {0, 3}});
  EXPECT_TRUE(u_shape.contains({0.5, 2.5}));
  EXPECT_TRUE(u_shape.contains({2.5, 2.5}));
  EXPECT_FALSE(u_shape.contains({1.5, 2.0}));
  EXPECT_TRUE(u_shape.contains({1.5, 0.5}));
}

TEST(PointInRoom, TranslationInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 20);
  const auto verts = star_polygon(rng, 8);
  const Position2D off{3.25, -1.5};
  std::vector<Position2D> moved;
  for (const auto& v : verts) moved.push_back(v + off);
  RoomPolygon a("A", verts), b("A", moved);
  for (int i = 0; i < 1000; ++i) {
    const Position2D p{u(rng), u(rng)};
    EXPECT_EQ(a.contains(p), b.contains(p + off));
  }
}

TEST(FloorPlan, Validation) {
  EXPECT_THROW(FloorPlan(0, 5, {}), Error);
  EXPECT_THROW(FloorPlan(5, 5, {unit_square("X"), unit_square("X")}), Error);
  EXPECT_THROW(FloorPlan(0.5, 5, {unit_square()}), Error);
  FloorPlan plan(5, 5, {unit_square()});
  EXPECT_TRUE(plan.in_site({5, 5}));
  EXPECT_FALSE(plan.in_site({5.1, 0}));
  EXPECT_NE(plan.find_room("Unit"), nullptr);
  EXPECT_EQ(plan.find_room("None"), nullptr);
}
