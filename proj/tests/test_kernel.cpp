#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "bstep/kernel.hpp"
#include "fixtures.hpp"

using namespace bstep;
using bstep::testing::fixture_2x2;
using bstep::testing::fixture_3x3;

namespace {

LinearPlant three_by_three_one_actuator(int N) {
  SpatialGrid g(N);
  Eigen::MatrixXd s(3, 3);
  s << 0, 0.5, 0.3, 0.4, 0, 1.0, 0.2, 1.0, 0;
  Eigen::MatrixXd Q(2, 1);
  Q << 0.5, 0.3;
  return LinearPlant(SpeedProfile::constant(g, 1, {-1, 1, 2}), CouplingProfile::constant(g, s), Q);
}

struct Solved {
  LinearPlant plant;
  KernelField K;
};

const Solved& solved_2x2(int N) {
  static std::map<int, Solved> cache;
  auto it = cache.find(N);
  if (it == cache.end()) {
    LinearPlant p = fixture_2x2(N);
    KernelField K = solve_kernel(p, TriangleGrid(p.grid()), default_artificial_data(p));
    it = cache.emplace(N, Solved{p, std::move(K)}).first;
  }
  return it->second;
}

}  // namespace

TEST(ArtificialData, ZeroCouplingGivesZeroData) {
  SpatialGrid g(10);
  Eigen::MatrixXd Q(1, 2);
  Q << 0.5, 0.4;
  LinearPlant p(SpeedProfile::constant(g, 2, {-1.5, -1, 1}), CouplingProfile::zero(g, 3), Q);
  auto d = default_artificial_data(p);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (d.k1(i, j)) {
        EXPECT_EQ(d.k1(i, j).value(0.3), 0.0);
      }
      if (d.k2(i, j)) {
        EXPECT_EQ(d.k2(i, j).value(0.3), 0.0);
      }
    }
}

TEST(ArtificialData, TwoByTwoHasOnlyTheBottomDiagonalEntry) {
  auto d = default_artificial_data(fixture_2x2(10));
  int right = 0, bottom = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      right += static_cast<bool>(d.k1(i, j));
      bottom += static_cast<bool>(d.k2(i, j));
    }
  EXPECT_EQ(right, 0);
  EXPECT_EQ(bottom, 1);
  ASSERT_TRUE(d.k2(1, 1));
  EXPECT_EQ(d.k2(1, 1).value(0.7), 0.0);
}

TEST(ArtificialData, ThreeByThreeRightValueMatchesDiagonal) {
  auto p = three_by_three_one_actuator(10);
  auto d = default_artificial_data(p);
  ASSERT_TRUE(d.k1(1, 2));
  // sigma_23 / (lambda_2 - lambda_3) = 1 / (1 - 2)
  EXPECT_NEAR(d.k1(1, 2).value(1.0), -1.0, 1e-15);
}

TEST(Compatibility, DefaultDataIsCompatible) {
  for (const auto& p : {three_by_three_one_actuator(10), fixture_3x3(10)}) {
    auto r = compatibility_check(default_artificial_data(p), p);
    EXPECT_LE(r.max_c0, 1e-12);
    EXPECT_LE(r.max_c1, 1e-12);
  }
}

TEST(Compatibility, PerturbedValueShowsInC0) {
  auto p = three_by_three_one_actuator(10);
  auto d = default_artificial_data(p);
  auto base = d.k1(1, 2);
  d.k1(1, 2) = {[base](double xi) { return base.value(xi) + 0.1; }, base.slope};
  EXPECT_NEAR(compatibility_check(d, p).max_c0, 0.1, 1e-12);
}

TEST(Compatibility, ConstantDataMissesTheSlope) {
  auto p = three_by_three_one_actuator(10);
  auto d = default_artificial_data(p);
  d.k1(1, 2) = {[](double) { return -1.0; }, [](double) { return 0.0; }};
  // slope = (sigma_13 k_21 + sigma_23 k_22 + sigma_33 k_23) / (lambda_2 - lambda_3), k_21 = 0.4 / 2
  const double slope = (0.3 * 0.2) / (1.0 - 2.0);
  auto r = compatibility_check(d, p);
  EXPECT_NEAR(r.max_c0, 0.0, 1e-15);
  EXPECT_NEAR(r.max_c1, std::abs(slope), 1e-12);
}

TEST(SolveKernel, ZeroCouplingConvergesImmediately) {
  SpatialGrid g(20);
  Eigen::MatrixXd Q(1, 1);
  Q << 0.8;
  LinearPlant p(SpeedProfile::constant(g, 1, {-1, 1}), CouplingProfile::zero(g, 2), Q);
  auto K = solve_kernel(p, TriangleGrid(g), default_artificial_data(p));
  EXPECT_EQ(K.iterations, 1);
  EXPECT_EQ(K.sup_norm(), 0.0);
  auto r = kernel_residual(K, p);
  EXPECT_EQ(r.pde_max_all, 0.0);
  EXPECT_EQ(r.diagonal_max, 0.0);
  EXPECT_EQ(r.relation_max, 0.0);
  auto G = target_coupling(K, p);
  EXPECT_EQ(G.M, 0.0);
  auto L = inverse_kernel(K);
  EXPECT_EQ(L.sup_norm(), 0.0);
}

TEST(SolveKernel, DiagonalTraceIsImposed) {
  const auto& s = solved_2x2(50);
  for (int p = 0; p <= 50; ++p) {
    EXPECT_EQ(s.K.at(0, 1, p, p), -0.25);
    EXPECT_EQ(s.K.at(1, 0, p, p), 0.25);
  }
  EXPECT_EQ(kernel_residual(s.K, s.plant).diagonal_max, 0.0);
}

TEST(SolveKernel, BoundaryRelationHolds) {
  const auto& s = solved_2x2(50);
  auto r = kernel_residual(s.K, s.plant);
  EXPECT_LE(r.relation_max, 10 * 1e-10);
  for (int p = 0; p <= 50; ++p) EXPECT_NEAR(s.K.bottom(0, 0, p) - 0.8 * s.K.bottom(0, 1, p), 0.0, 1e-9);
}

TEST(SolveKernel, UpdatesContractAfterThirdSweep) {
  const auto& s = solved_2x2(50);
  ASSERT_GE(s.K.history.size(), 4u);
  for (std::size_t k = 3; k < s.K.history.size(); ++k) EXPECT_LE(s.K.history[k], s.K.history[k - 1]);
}

TEST(SolveKernel, ResidualHalvesUnderRefinement) {
  double prev = 0.0;
  for (int N : {50, 100}) {
    const auto& s = solved_2x2(N);
    double r = kernel_residual(s.K, s.plant).pde_max_all;
    if (prev > 0.0) {
      EXPECT_GE(prev / r, 1.5);
      EXPECT_LE(prev / r, 3.0);
    }
    prev = r;
  }
}

TEST(SolveKernel, SelfConvergenceIsFirstOrder) {
  const auto& a = solved_2x2(50);
  const auto& b = solved_2x2(100);
  const auto& fine = solved_2x2(400);
  // interior samples away from the characteristic lines through the corners
  double eab = 0.0, ebf = 0.0;
  for (auto [x, xi] : {std::pair{0.9, 0.3}, {0.7, 0.1}, {0.95, 0.6}, {0.6, 0.5}})
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        eab = std::max(eab, std::abs(a.K.eval(i, j, x, xi) - b.K.eval(i, j, x, xi)));
        ebf = std::max(ebf, std::abs(b.K.eval(i, j, x, xi) - fine.K.eval(i, j, x, xi)));
      }
  EXPECT_LE(ebf, 0.01 * fine.K.sup_norm());
  // at least first order: the N = 50 vs 100 gap dominates the N = 100 vs 400 gap
  EXPECT_GE(eab / ebf, 1.5);
}

TEST(SolveKernel, IncompatibleDataRejected) {
  auto p = three_by_three_one_actuator(10);
  auto d = default_artificial_data(p);
  d.k1(1, 2) = {[](double) { return 0.5; }, {}};
  EXPECT_THROW(solve_kernel(p, TriangleGrid(p.grid()), d), Error);
}

TEST(SolveKernel, NonConvergenceCarriesHistory) {
  auto p = fixture_2x2(20);
  try {
    solve_kernel(p, TriangleGrid(p.grid()), default_artificial_data(p), KernelOptions{1e-14, 2});
    FAIL() << "expected non-convergence";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.history().size(), 2u);
  }
}

TEST(TargetCoupling, FirstEntryVanishesByRelation) {
  const auto& s = solved_2x2(50);
  auto G = target_coupling(s.K, s.plant);
  for (int k = 0; k <= 50; ++k) {
    EXPECT_LE(std::abs(G.at(0, 0, k)), 1e-8);
    EXPECT_EQ(G.at(0, 1, k), 0.0);
    EXPECT_EQ(G.at(1, 1, k), 0.0);
    EXPECT_NEAR(G.at(1, 0, k), s.K.bottom(1, 0, k) - 0.8 * s.K.bottom(1, 1, k), 1e-15);
  }
  double M = 0.0;
  for (int k = 0; k <= 50; ++k) M = std::max(M, G.g[k].cwiseAbs().maxCoeff());
  EXPECT_EQ(G.M, M);
}

TEST(TargetCoupling, ThreeByThreeIsStrictlyLowerInNegativeBlock) {
  auto p = fixture_3x3(30);
  auto K = solve_kernel(p, TriangleGrid(p.grid()), default_artificial_data(p));
  auto G = target_coupling(K, p);
  for (int k = 0; k <= 30; ++k) {
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) EXPECT_LE(std::abs(G.at(i, j, k)), 1e-8);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(G.at(i, 2, k), 0.0);
  }
}

TEST(InverseKernel, DiagonalMatchesForwardKernel) {
  const auto& s = solved_2x2(50);
  auto L = inverse_kernel(s.K);
  for (int p = 0; p <= 50; ++p)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) EXPECT_EQ(L.at(i, j, p, p), s.K.at(i, j, p, p));
}

TEST(InverseKernel, VolterraIdentitiesWithinQuadratureError) {
  const auto& s = solved_2x2(50);
  auto L = inverse_kernel(s.K);
  const double h = 1.0 / 50;
  auto r = volterra_residuals(s.K, L);
  EXPECT_LE(r.forward, 10 * h * s.K.sup_norm() * L.sup_norm() + 1e-12);
  EXPECT_LE(r.reciprocal, 10 * h);
}

TEST(InverseKernel, ReciprocalIdentityByIndependentQuadrature) {
  const auto& s = solved_2x2(50);
  auto L = inverse_kernel(s.K);
  // L(x, xi) - K(x, xi) - int_xi^x L(x, s) K(s, xi) ds by Simpson on the interpolants
  double worst = 0.0;
  for (auto [x, xi] : {std::pair{0.8, 0.2}, {0.5, 0.45}, {0.9, 0.7}})
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double I = bstep::testing::simpson(
            [&](double sv) {
              double v = 0.0;
              for (int k = 0; k < 2; ++k) v += L.eval(i, k, x, sv) * s.K.eval(k, j, sv, xi);
              return v;
            },
            xi, x, 200);
        worst = std::max(worst, std::abs(L.eval(i, j, x, xi) - s.K.eval(i, j, x, xi) - I));
      }
  EXPECT_LE(worst, 10.0 / 50);
}

TEST(KernelField, NoCornerCurveWithoutTwoValuedCorner) {
  // 2x2: no component carries both diagonal and xi = 0 data, and the default data is compatible at (1,1)
  EXPECT_TRUE(solved_2x2(50).K.curves.empty());
}

TEST(KernelField, DiscontinuityCurvesRecorded) {
  auto p = three_by_three_one_actuator(40);
  KernelField K = solve_kernel(p, TriangleGrid(p.grid()), default_artificial_data(p));
  ASSERT_FALSE(K.curves.empty());
  for (const auto& c : K.curves)
    for (const auto& pt : c.points) {
      EXPECT_GE(pt[1], -1e-12);
      EXPECT_LE(pt[1], pt[0] + 1e-12);
    }
}
