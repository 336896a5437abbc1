#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "bstep/error.hpp"

namespace bstep {

/// Uniform partition of [0, 1] into N cells.
class SpatialGrid {
 public:
  explicit SpatialGrid(int n_cells = 1) : n_(n_cells), h_(1.0 / n_cells) {
    if (n_cells < 1) throw std::invalid_argument("SpatialGrid needs at least one cell");
  }

  int cells() const noexcept { return n_; }
  int size() const noexcept { return n_ + 1; }
  double spacing() const noexcept { return h_; }
  double node(int k) const noexcept { return static_cast<double>(k) / static_cast<double>(n_); }

  std::vector<double> nodes() const {
    std::vector<double> out(size());
    for (int k = 0; k <= n_; ++k) out[k] = node(k);
    return out;
  }

  /// Cell index and local coordinate in [0, 1] of x (clamped to the interval).
  std::pair<int, double> locate(double x) const noexcept {
    x = std::clamp(x, 0.0, 1.0);
    double s = x * n_;
    int c = std::min(static_cast<int>(s), n_ - 1);
    return {c, s - c};
  }

  /// Piecewise-linear interpolation of nodal samples.
  double interpolate(std::span<const double> samples, double x) const noexcept {
    auto [c, f] = locate(x);
    if (f == 0.0) return samples[c];
    return (1.0 - f) * samples[c] + f * samples[c + 1];
  }

  /// Composite trapezoid weights over nodes 0..k of the base grid (integral over [0, x_k]).
  double trapezoid_weight(int q, int k) const noexcept {
    if (k == 0) return 0.0;
    return (q == 0 || q == k) ? 0.5 * h_ : h_;
  }

  friend bool operator==(const SpatialGrid& a, const SpatialGrid& b) noexcept { return a.n_ == b.n_; }

 private:
  int n_;
  double h_;
};

/// Interpolation stencil on the triangle: up to four nodal indices and weights.
struct TriangleStencil {
  std::array<std::size_t, 4> index{};
  std::array<double, 4> weight{};
  int count = 0;
};

/// Nodes (x_p, xi_q) with 0 <= q <= p <= N on the triangle {0 <= xi <= x <= 1}.
class TriangleGrid {
 public:
  explicit TriangleGrid(SpatialGrid base = SpatialGrid(1)) : base_(base) {}

  const SpatialGrid& base() const noexcept { return base_; }
  int cells() const noexcept { return base_.cells(); }
  double spacing() const noexcept { return base_.spacing(); }
  std::size_t size() const noexcept {
    std::size_t n = static_cast<std::size_t>(base_.cells()) + 1;
    return n * (n + 1) / 2;
  }
  static std::size_t index(int p, int q) noexcept {
    return static_cast<std::size_t>(p) * (p + 1) / 2 + static_cast<std::size_t>(q);
  }

  /// Bilinear in square cells, linear on the half cells touching the diagonal.
  TriangleStencil stencil(double x, double xi) const noexcept {
    const int n = base_.cells();
    x = std::clamp(x, 0.0, 1.0);
    xi = std::clamp(xi, 0.0, x);
    double sx = x * n, sq = xi * n;
    int p = std::min(static_cast<int>(sx), n - 1);
    int q = std::min(static_cast<int>(sq), p);
    double a = sx - p, b = sq - q;
    TriangleStencil s;
    if (q < p) {
      s.count = 4;
      s.index = {index(p, q), index(p + 1, q), index(p, q + 1), index(p + 1, q + 1)};
      s.weight = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
    } else {
      b = std::min(b, a);
      s.count = 3;
      s.index = {index(p, p), index(p + 1, p), index(p + 1, p + 1), 0};
      s.weight = {1 - a, a - b, b, 0.0};
    }
    return s;
  }

 private:
  SpatialGrid base_;
};

}  // namespace bstep
