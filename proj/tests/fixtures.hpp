#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>

#include "bstep/expression.hpp"
#include "bstep/plant.hpp"

namespace bstep::testing {

inline LinearPlant fixture_2x2(int N, double sigma = 0.5, double q = 0.8) {
  SpatialGrid g(N);
  Eigen::MatrixXd s(2, 2);
  s << 0, sigma, sigma, 0;
  Eigen::MatrixXd Q(1, 1);
  Q << q;
  return LinearPlant(SpeedProfile::constant(g, 1, {-1, 1}), CouplingProfile::constant(g, s), Q);
}

inline LinearPlant fixture_3x3(int N) {
  SpatialGrid g(N);
  Eigen::MatrixXd s(3, 3);
  s << 0, 0.3, 0.4, 0.5, 0, 0.3, 0.4, 0.5, 0;
  Eigen::MatrixXd Q(1, 2);
  Q << 0.5, 0.4;
  return LinearPlant(SpeedProfile::constant(g, 2, {-1.5, -1, 1}), CouplingProfile::constant(g, s), Q);
}

inline StateFn expr(const char* text) {
  auto e = std::make_shared<const Expression>(Expression::parse(text));
  return [e](double x, std::span<const double> u) { return e->evaluate(x, u); };
}

/// The quasilinear fixture: eps = 0.1 state dependence in A, cubic terms in F.
inline QuasilinearPlant quasilinear_2x2() {
  QuasilinearPlant::Data d;
  d.n = 2;
  d.m = 1;
  d.a = {expr("-1 + 0.1*u1"), {}, {}, expr("1")};
  d.f = {expr("0.2*u1 + 0.5*u2 + u1^3"), expr("0.5*u1 - u2^3")};
  d.g = {expr("0.8*u1 + 0.5*u1^2")};
  return QuasilinearPlant(std::move(d));
}

inline double simpson(const std::function<double(double)>& f, double a, double b, int panels = 400) {
  double h = (b - a) / panels, s = f(a) + f(b);
  for (int k = 1; k < panels; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

}  // namespace bstep::testing
