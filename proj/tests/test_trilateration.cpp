#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "blefuse/trilateration.hpp"

using namespace blefuse;

namespace {

DeviceRegistry registry_of(const std::vector<Position2D>& positions, PathLossParams params = {-70, 2.0}) {
  DeviceRegistry reg;
  for (std::size_t i = 0; i < positions.size(); ++i) reg.add("d" + std::to_string(i), {positions[i], params});
  return reg;
}

HitWindow window_of(const std::vector<int>& counts) {
  HitWindow w{"b", 10.0, 10.0, {}};
  for (std::size_t i = 0; i < counts.size(); ++i) w.per_device["d" + std::to_string(i)] = {counts[i], -80.0};
  return w;
}

// Oracle: explicit enumeration of every pair, written independently of the library loop.
Position2D pairwise_oracle(const std::vector<Position2D>& p, const std::vector<int>& h) {
  double sx = 0, sy = 0, sw = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (j <= i) continue;
      const double hi = h[i], hj = h[j];
      const double mx = (hi * p[i].x + hj * p[j].x) / (hi + hj);
      const double my = (hi * p[i].y + hj * p[j].y) / (hi + hj);
      sx += (hi + hj) * mx;
      sy += (hi + hj) * my;
      sw += hi + hj;
    }
  }
  return {sx / sw, sy / sw};
}

RssiHit hit(double t, const std::string& device, double rssi, const std::string& beacon = "b") {
  return {t, device, beacon, rssi};
}

}  // namespace

TEST(BuildWindows, TwentyHitsTumblingGivesOneWindow) {
  std::vector<RssiHit> hits;
  for (int k = 0; k < 20; ++k) hits.push_back(hit(100.0 + 0.5 * k, "d0", -75));
  const auto windows = build_windows(hits, WindowOptions::tumbling(10));
  ASSERT_EQ(windows.size(), 1u);
  EXPECT_EQ(windows[0].per_device.at("d0").hit_count, 20);
  EXPECT_DOUBLE_EQ(windows[0].per_device.at("d0").mean_rssi, -75.0);
}

TEST(BuildWindows, EmptyInput) { EXPECT_TRUE(build_windows(std::vector<RssiHit>{}).empty()); }

TEST(BuildWindows, CountsPerDevice) {
  std::vector<RssiHit> hits;
  const std::vector<std::pair<std::string, int>> counts{{"d0", 5}, {"d1", 3}, {"d2", 2}};
  double t = 0;
  for (const auto& [id, n] : counts) {
    for (int k = 0; k < n; ++k) hits.push_back(hit(t += 0.3, id, -80 - k));
  }
  std::stable_sort(hits.begin(), hits.end(), [](auto& a, auto& b) { return a.timestamp < b.timestamp; });
  const auto windows = build_windows(hits, WindowOptions::tumbling(10));
  ASSERT_EQ(windows.size(), 1u);
  ASSERT_EQ(windows[0].per_device.size(), 3u);
  EXPECT_EQ(windows[0].per_device.at("d0").hit_count, 5);
  EXPECT_EQ(windows[0].per_device.at("d1").hit_count, 3);
  EXPECT_EQ(windows[0].per_device.at("d2").hit_count, 2);
  EXPECT_DOUBLE_EQ(windows[0].per_device.at("d1").mean_rssi, -81.0);
}

TEST(BuildWindows, SlidingWindowsHoldOnlyHitsInRange) {
  std::vector<RssiHit> hits;
  for (int k = 0; k < 60; ++k) hits.push_back(hit(0.5 * k, "d" + std::to_string(k % 3), -80));
  const auto windows = build_windows(hits, {10, 1, std::nullopt});
  ASSERT_FALSE(windows.empty());
  for (const auto& w : windows) {
    int expected = 0;
    for (const auto& h : hits) expected += h.timestamp >= w.window_end - 10 && h.timestamp < w.window_end;
    EXPECT_EQ(w.total_hits(), expected) << "window ending " << w.window_end;
  }
  EXPECT_DOUBLE_EQ(windows.front().window_end, 1.0);
  EXPECT_EQ(windows.front().total_hits(), 2);
}

TEST(BuildWindows, SeparatesBeacons) {
  std::vector<RssiHit> hits{hit(0, "d0", -80, "a"), hit(0.2, "d1", -80, "b"), hit(0.4, "d0", -80, "a")};
  const auto windows = build_windows(hits, WindowOptions::tumbling(10));
  ASSERT_EQ(windows.size(), 2u);
  for (const auto& w : windows) EXPECT_EQ(w.total_hits(), w.beacon_id == "a" ? 2 : 1);
}

TEST(BuildWindows, RssiFloorDropsWeakHits) {
  std::vector<RssiHit> hits{hit(0, "d0", -80), hit(0.5, "d1", -99)};
  const auto windows = build_windows(hits, WindowOptions::tumbling(10));
  ASSERT_EQ(windows.size(), 1u);
  EXPECT_EQ(windows[0].per_device.count("d1"), 0u);
}

TEST(BuildWindows, UnsortedBeyondToleranceThrows) {
  std::vector<RssiHit> jitter{hit(1.0, "d0", -80), hit(0.95, "d1", -80)};
  EXPECT_NO_THROW(build_windows(jitter));
  std::vector<RssiHit> bad{hit(1.0, "d0", -80), hit(0.5, "d1", -80)};
  try {
    build_windows(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnsortedInput);
  }
}

TEST(BuildWindows, RejectsNonPositiveDurationOrStride) {
  std::vector<RssiHit> hits{hit(0, "d0", -80)};
  EXPECT_THROW(build_windows(hits, {0, 1, std::nullopt}), Error);
  EXPECT_THROW(build_windows(hits, {10, 0, std::nullopt}), Error);
}

TEST(AdaptiveTrilaterate, SinglePair) {
  const auto reg = registry_of({{0, 0}, {4, 0}});
  const auto fix = adaptive_trilaterate(window_of({3, 1}), reg);
  EXPECT_DOUBLE_EQ(fix.position.x, 1.0);
  EXPECT_DOUBLE_EQ(fix.position.y, 0.0);
  EXPECT_EQ(fix.device_count, 2);
  EXPECT_EQ(fix.total_hits, 4);
}

TEST(AdaptiveTrilaterate, EqualHitsGiveTriangleCentroid) {
  const auto reg = registry_of({{0, 0}, {6, 0}, {0, 9}});
  const auto fix = adaptive_trilaterate(window_of({4, 4, 4}), reg);
  EXPECT_NEAR(fix.position.x, 2.0, 1e-12);
  EXPECT_NEAR(fix.position.y, 3.0, 1e-12);
}

TEST(AdaptiveTrilaterate, LoneDeviceGivesItsPosition) {
  const auto reg = registry_of({{7, 3}});
  const auto fix = adaptive_trilaterate(window_of({5}), reg);
  EXPECT_EQ(fix.position, (Position2D{7, 3}));
}

TEST(AdaptiveTrilaterate, Errors) {
  const auto reg = registry_of({{0, 0}});
  try {
    adaptive_trilaterate(HitWindow{"b", 1, 10, {}}, reg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyWindow);
  }
  try {
    adaptive_trilaterate(window_of({1, 1}), reg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownDevice);
  }
}

TEST(AdaptiveTrilaterate, CollapsesToHitWeightedCentroid) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> coord(0, 60);
  std::uniform_int_distribution<int> count(1, 20), n_dev(2, 39);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = n_dev(rng);
    std::vector<Position2D> p;
    std::vector<int> h;
    double sx = 0, sy = 0, sh = 0;
    for (int i = 0; i < n; ++i) {
      p.push_back({coord(rng), coord(rng)});
      h.push_back(count(rng));
      sx += h.back() * p.back().x;
      sy += h.back() * p.back().y;
      sh += h.back();
    }
    const auto fix = adaptive_trilaterate(window_of(h), registry_of(p));
    const auto oracle = pairwise_oracle(p, h);
    EXPECT_NEAR(fix.position.x, oracle.x, 1e-9);
    EXPECT_NEAR(fix.position.y, oracle.y, 1e-9);
    EXPECT_NEAR(fix.position.x, sx / sh, 1e-9);
    EXPECT_NEAR(fix.position.y, sy / sh, 1e-9);
  }
}

TEST(AdaptiveTrilaterate, ScaleEquivariantAndInsideBoundingBox) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> coord(0, 30);
  std::uniform_int_distribution<int> count(1, 9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Position2D> p;
    std::vector<int> h, h3;
    for (int i = 0; i < 6; ++i) {
      p.push_back({coord(rng), coord(rng)});
      h.push_back(count(rng));
      h3.push_back(3 * h.back());
    }
    const auto reg = registry_of(p);
    const auto a = adaptive_trilaterate(window_of(h), reg);
    const auto b = adaptive_trilaterate(window_of(h3), reg);
    EXPECT_NEAR(a.position.x, b.position.x, 1e-12);
    EXPECT_NEAR(a.position.y, b.position.y, 1e-12);
    // Convex weights: the fix is a convex combination of the anchors.
    double min_x = 1e9, max_x = -1e9;
    for (const auto& q : p) {
      min_x = std::min(min_x, q.x);
      max_x = std::max(max_x, q.x);
    }
    EXPECT_GE(a.position.x, min_x - 1e-12);
    EXPECT_LE(a.position.x, max_x + 1e-12);
  }
}

TEST(BaselineTrilaterate, ExactRangesRecoverPoint) {
  const PathLossParams params{-70, 2.0};
  const auto reg = registry_of({{0, 0}, {10, 0}, {0, 10}}, params);
  const Position2D truth{3, 4};
  std::vector<RssiHit> hits;
  int i = 0;
  for (const auto& [id, d] : reg) {
    hits.push_back(hit(0.1 * i++, id, distance_to_rssi(params, euclidean_distance(truth, d.position))));
  }
  const auto fix = baseline_trilaterate(hits, reg);
  ASSERT_TRUE(fix);
  EXPECT_NEAR(fix->fix.position.x, 3.0, 1e-4);
  EXPECT_NEAR(fix->fix.position.y, 4.0, 1e-4);
  EXPECT_TRUE(fix->converged);
  EXPECT_FALSE(fix->ill_conditioned);
}

TEST(BaselineTrilaterate, TwoDevicesGiveNoFix) {
  const auto reg = registry_of({{0, 0}, {10, 0}, {0, 10}});
  std::vector<RssiHit> hits{hit(0, "d0", -80), hit(0.1, "d1", -80), hit(0.2, "d1", -82)};
  EXPECT_FALSE(baseline_trilaterate(hits, reg));
}

TEST(BaselineTrilaterate, PointAtDevice) {
  const PathLossParams params{-70, 2.0};
  const auto reg = registry_of({{0, 0}, {10, 0}, {0, 10}}, params);
  // Zero range cannot be expressed in RSSI; a tiny range stands in for it.
  std::vector<RssiHit> hits{hit(0, "d0", distance_to_rssi(params, 1e-9)), hit(0, "d1", distance_to_rssi(params, 10)),
                            hit(0, "d2", distance_to_rssi(params, 10))};
  const auto fix = baseline_trilaterate(hits, reg);
  ASSERT_TRUE(fix);
  EXPECT_NEAR(fix->fix.position.x, 0.0, 1e-4);
  EXPECT_NEAR(fix->fix.position.y, 0.0, 1e-4);
}

TEST(BaselineTrilaterate, NoiselessRandomInstances) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> coord(0, 50), n_dist(1.8, 4.0);
  int tested = 0;
  while (tested < 1000) {
    std::vector<Position2D> anchors{{coord(rng), coord(rng)}, {coord(rng), coord(rng)}, {coord(rng), coord(rng)}};
    const double area2 = std::abs((anchors[1] - anchors[0]).x * (anchors[2] - anchors[0]).y -
                                  (anchors[1] - anchors[0]).y * (anchors[2] - anchors[0]).x);
    if (area2 < 50.0) continue;  // keep instances clearly non-collinear
    const PathLossParams params{-70, n_dist(rng)};
    const auto reg = registry_of(anchors, params);
    const Position2D truth{coord(rng), coord(rng)};
    std::vector<RssiHit> hits;
    for (const auto& [id, d] : reg) hits.push_back(hit(0, id, distance_to_rssi(params, euclidean_distance(truth, d.position))));
    const auto fix = baseline_trilaterate(hits, reg);
    ASSERT_TRUE(fix);
    EXPECT_NEAR(fix->fix.position.x, truth.x, 1e-4) << "instance " << tested;
    EXPECT_NEAR(fix->fix.position.y, truth.y, 1e-4) << "instance " << tested;
    ++tested;
  }
}

TEST(BaselineTrilaterate, CollinearDevicesFlagged) {
  const PathLossParams params{-70, 2.0};
  const auto reg = registry_of({{0, 0}, {5, 0}, {10, 0}}, params);
  const Position2D truth{4, 3};
  std::vector<RssiHit> hits;
  for (const auto& [id, d] : reg) hits.push_back(hit(0, id, distance_to_rssi(params, euclidean_distance(truth, d.position))));
  const auto fix = baseline_trilaterate(hits, reg);
  ASSERT_TRUE(fix);
  EXPECT_TRUE(fix->ill_conditioned);
  EXPECT_TRUE(fix->fix.position.finite());
}

TEST(BaselineTrilaterate, PermutationInvariant) {
  const auto reg = registry_of({{0, 0}, {10, 0}, {0, 10}, {10, 10}});
  std::vector<RssiHit> hits{hit(0, "d0", -82), hit(0.1, "d1", -85), hit(0.2, "d2", -88), hit(0.3, "d3", -90)};
  const auto a = baseline_trilaterate(hits, reg);
  std::reverse(hits.begin(), hits.end());
  const auto b = baseline_trilaterate(hits, reg);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->fix.position, b->fix.position);
}

TEST(BaselineFixes, GroupsByScanSlot) {
  const PathLossParams params{-70, 2.0};
  const auto reg = registry_of({{0, 0}, {10, 0}, {0, 10}}, params);
  std::vector<RssiHit> hits;
  for (int slot = 0; slot < 4; ++slot) {
    const int devices = slot % 2 == 0 ? 3 : 2;  // odd slots miss a device
    for (int d = 0; d < devices; ++d) hits.push_back(hit(0.5 * slot + 0.01 * d, "d" + std::to_string(d), -80));
  }
  const auto fixes = baseline_fixes(hits, reg);
  ASSERT_EQ(fixes.size(), 2u);
  EXPECT_DOUBLE_EQ(fixes[0].fix.timestamp, 0.0);
  EXPECT_DOUBLE_EQ(fixes[1].fix.timestamp, 1.0);
}
