#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bstep/error.hpp"
#include "bstep/grid.hpp"

namespace bstep {

/// n channels sampled on a spatial grid at time t.
class StateField {
 public:
  StateField() = default;
  StateField(SpatialGrid grid, int n, double t = 0.0)
      : t(t), grid_(grid), data_(n, std::vector<double>(grid.size(), 0.0)) {}

  double t = 0.0;

  int channels() const noexcept { return static_cast<int>(data_.size()); }
  const SpatialGrid& grid() const noexcept { return grid_; }

  std::vector<double>& channel(int i) { return data_[i]; }
  const std::vector<double>& channel(int i) const { return data_[i]; }
  double& operator()(int i, int k) { return data_[i][k]; }
  double operator()(int i, int k) const { return data_[i][k]; }

  std::vector<double> node(int k) const {
    std::vector<double> v(channels());
    for (int i = 0; i < channels(); ++i) v[i] = data_[i][k];
    return v;
  }
  double eval(int i, double x) const { return grid_.interpolate(data_[i], x); }

  /// Centered first differences, second-order one-sided at the ends.
  std::vector<double> first_difference(int i) const {
    const auto& u = data_[i];
    const int N = grid_.cells();
    const double h = grid_.spacing();
    std::vector<double> d(N + 1);
    if (N < 2) {
      d[0] = d[N] = (u[N] - u[0]) / h;
      return d;
    }
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2 * h);
    d[N] = (3.0 * u[N] - 4.0 * u[N - 1] + u[N - 2]) / (2 * h);
    for (int k = 1; k < N; ++k) d[k] = (u[k + 1] - u[k - 1]) / (2 * h);
    return d;
  }

  /// Centered second differences, second-order one-sided at the ends.
  std::vector<double> second_difference(int i) const {
    const auto& u = data_[i];
    const int N = grid_.cells();
    const double h2 = grid_.spacing() * grid_.spacing();
    std::vector<double> d(N + 1, 0.0);
    if (N < 3) return d;
    d[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / h2;
    d[N] = (2 * u[N] - 5 * u[N - 1] + 4 * u[N - 2] - u[N - 3]) / h2;
    for (int k = 1; k < N; ++k) d[k] = (u[k + 1] - 2 * u[k] + u[k - 1]) / h2;
    return d;
  }

  bool finite() const noexcept {
    for (const auto& c : data_)
      for (double v : c)
        if (!std::isfinite(v)) return false;
    return true;
  }

  double sup() const noexcept {
    double s = 0.0;
    for (const auto& c : data_)
      for (double v : c) s = std::max(s, std::abs(v));
    return s;
  }

  double l2() const { return std::sqrt(squared(data_)); }
  /// ||u|| + ||u_x|| in L2.
  double h1() const {
    std::vector<std::vector<double>> d;
    for (int i = 0; i < channels(); ++i) d.push_back(first_difference(i));
    return l2() + std::sqrt(squared(d));
  }
  /// ||u|| + ||u_x|| + ||u_xx|| in L2.
  double h2() const {
    std::vector<std::vector<double>> d;
    for (int i = 0; i < channels(); ++i) d.push_back(second_difference(i));
    return h1() + std::sqrt(squared(d));
  }

  void check_compatible(const StateField& other) const {
    if (!(grid_ == other.grid_) || channels() != other.channels())
      throw NumericalError("state fields live on different grids");
  }

 private:
  /// Trapezoid of sum_i u_i^2.
  double squared(const std::vector<std::vector<double>>& v) const {
    const int N = grid_.cells();
    const double h = grid_.spacing();
    double s = 0.0;
    for (const auto& c : v) {
      double a = 0.5 * (c[0] * c[0] + c[N] * c[N]);
      for (int k = 1; k < N; ++k) a += c[k] * c[k];
      s += a * h;
    }
    return s;
  }

  SpatialGrid grid_;
  std::vector<std::vector<double>> data_;
};

}  // namespace bstep
