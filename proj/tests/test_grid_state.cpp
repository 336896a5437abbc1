#include <gtest/gtest.h>

#include <cmath>

#include "bstep/grid.hpp"
#include "bstep/state.hpp"

using namespace bstep;

TEST(SpatialGrid, NodesAreUniformAndClosed) {
  SpatialGrid g(8);
  EXPECT_EQ(g.size(), 9);
  EXPECT_EQ(g.node(0), 0.0);
  EXPECT_EQ(g.node(8), 1.0);
  EXPECT_EQ(g.spacing(), 0.125);
  for (int k = 1; k <= 8; ++k) EXPECT_NEAR(g.node(k) - g.node(k - 1), 0.125, 1e-15);
}

TEST(SpatialGrid, InterpolationIsExactForLines) {
  SpatialGrid g(10);
  std::vector<double> v;
  for (double x : g.nodes()) v.push_back(2.0 * x - 1.0);
  for (double x : {0.0, 0.033, 0.5, 0.91, 1.0}) EXPECT_NEAR(g.interpolate(v, x), 2.0 * x - 1.0, 1e-14);
}

TEST(SpatialGrid, TrapezoidWeightsSumToLength) {
  SpatialGrid g(20);
  for (int k : {1, 7, 20}) {
    double s = 0.0;
    for (int q = 0; q <= k; ++q) s += g.trapezoid_weight(q, k);
    EXPECT_NEAR(s, g.node(k), 1e-14);
  }
}

TEST(TriangleGrid, IndexCoversTriangle) {
  TriangleGrid t(SpatialGrid(5));
  EXPECT_EQ(t.size(), 21u);
  EXPECT_EQ(TriangleGrid::index(0, 0), 0u);
  EXPECT_EQ(TriangleGrid::index(5, 5), 20u);
}

namespace {

StateField sine_field(int N, int n = 2) {
  SpatialGrid g(N);
  StateField s(g, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k <= N; ++k) s(i, k) = std::sin(M_PI * g.node(k));
  return s;
}

}  // namespace

TEST(StateField, NormsOfSineConverge) {
  StateField s = sine_field(400, 1);
  const double l2 = std::sqrt(0.5);
  const double dx = M_PI * std::sqrt(0.5);
  const double dxx = M_PI * M_PI * std::sqrt(0.5);
  EXPECT_NEAR(s.l2(), l2, 1e-6);
  EXPECT_NEAR(s.h1(), l2 + dx, 1e-3);
  EXPECT_NEAR(s.h2(), l2 + dx + dxx, 1e-2);
}

TEST(StateField, DifferencesExactForQuadratics) {
  SpatialGrid g(10);
  StateField s(g, 1);
  for (int k = 0; k <= 10; ++k) s(0, k) = 3.0 * g.node(k) * g.node(k) - g.node(k);
  auto d1 = s.first_difference(0);
  auto d2 = s.second_difference(0);
  for (int k = 0; k <= 10; ++k) {
    EXPECT_NEAR(d1[k], 6.0 * g.node(k) - 1.0, 1e-11);
    EXPECT_NEAR(d2[k], 6.0, 1e-9);
  }
}

TEST(StateField, SupAndFinite) {
  StateField s = sine_field(10);
  EXPECT_NEAR(s.sup(), 1.0, 1e-15);
  EXPECT_TRUE(s.finite());
  s(1, 3) = NAN;
  EXPECT_FALSE(s.finite());
}

TEST(StateField, CompatibilityCheck) {
  StateField a = sine_field(10), b = sine_field(12), c = sine_field(10, 3);
  EXPECT_NO_THROW(a.check_compatible(a));
  EXPECT_THROW(a.check_compatible(b), NumericalError);
  EXPECT_THROW(a.check_compatible(c), NumericalError);
}
