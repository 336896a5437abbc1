#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bstep/error.hpp"
#include "bstep/grid.hpp"
#include "bstep/plant.hpp"

namespace bstep {

// Index classes of the kernel boundary conditions (0-based, m negative channels).
inline bool right_range(int i, int j, int m) { return (j < i && i < m) || (m <= i && i < j); }
inline bool bottom_data_range(int i, int j, int m) { return m <= j && j <= i; }
inline bool relation_range(int i, int j, int m) { return i <= j && j < m; }

/// Sign of the parameter along which a component is traced back to its data.
inline int trace_direction(int i, int j, int m) {
  if (i < m && j < m) return i <= j ? 1 : -1;
  if (i >= m && j >= m) return i >= j ? -1 : 1;
  return i < m ? 1 : -1;
}

/// k_ij(x) = sigma_ij / (lambda_i - lambda_j); taken as 0 on the diagonal i = j.
inline double diagonal_value(const LinearPlant& plant, int i, int j, double x) {
  if (i == j) return 0.0;
  double d = plant.speeds()(i, x) - plant.speeds()(j, x);
  if (d == 0.0) throw PlantError("coincident speeds " + std::to_string(i + 1) + "," + std::to_string(j + 1));
  return plant.coupling()(i, j, x) / d;
}

/// Slope that x = 1 data must have at xi = 1 to be C^1 compatible with the diagonal data.
inline double compatible_slope(const LinearPlant& plant, int i, int j) {
  const int n = plant.channels();
  const auto& sp = plant.speeds();
  double li = sp(i, 1.0), lj = sp(j, 1.0);
  if (li == lj) throw PlantError("coincident speeds at x = 1");
  double dk = differentiate([&](double x) { return diagonal_value(plant, i, j, x); }, 1.0);
  double acc = li * dk;
  for (int k = 0; k < n; ++k) {
    double c = plant.coupling()(k, j, 1.0) + (k == j ? sp.derivative(j, 1.0) : 0.0);
    acc += c * diagonal_value(plant, i, k, 1.0);
  }
  return acc / (li - lj);
}

struct DataFn {
  ScalarFn value;
  ScalarFn slope;  // optional exact derivative
  explicit operator bool() const noexcept { return static_cast<bool>(value); }
  double derivative(double x) const { return slope ? slope(x) : differentiate(value, x); }
};

/// Boundary data on x = 1 and on xi = 0 that the plant leaves free.
struct ArtificialData {
  int n = 0;
  int m = 0;
  std::vector<DataFn> right;   // n*n, set on right_range
  std::vector<DataFn> bottom;  // n*n, set on bottom_data_range

  ArtificialData() = default;
  ArtificialData(int n_, int m_) : n(n_), m(m_), right(n_ * n_), bottom(n_ * n_) {}

  const DataFn& k1(int i, int j) const { return right[i * n + j]; }
  const DataFn& k2(int i, int j) const { return bottom[i * n + j]; }
  DataFn& k1(int i, int j) { return right[i * n + j]; }
  DataFn& k2(int i, int j) { return bottom[i * n + j]; }
};

inline ArtificialData default_artificial_data(const LinearPlant& plant) {
  const int n = plant.channels(), m = plant.negative();
  ArtificialData d(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (right_range(i, j, m)) {
        double k1 = diagonal_value(plant, i, j, 1.0);
        double s = compatible_slope(plant, i, j);
        d.k1(i, j) = {[k1, s](double xi) { return k1 + (xi - 1.0) * s; }, [s](double) { return s; }};
      }
      if (bottom_data_range(i, j, m)) {
        double k0 = diagonal_value(plant, i, j, 0.0);
        d.k2(i, j) = {[k0](double) { return k0; }, [](double) { return 0.0; }};
      }
    }
  return d;
}

struct CompatibilityEntry {
  int i = 0;
  int j = 0;
  double c0 = 0.0;  // |k_ij(1) - k1_ij(1)|
  double c1 = 0.0;  // |k1_ij'(1) - compatible slope|
};

struct CompatibilityReport {
  std::vector<CompatibilityEntry> entries;
  double max_c0 = 0.0;
  double max_c1 = 0.0;
};

inline CompatibilityReport compatibility_check(const ArtificialData& data, const LinearPlant& plant) {
  CompatibilityReport r;
  const int n = plant.channels(), m = plant.negative();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!right_range(i, j, m)) continue;
      const DataFn& f = data.k1(i, j);
      if (!f) throw PlantError("missing x = 1 data for component " + std::to_string(i + 1) + "," + std::to_string(j + 1));
      CompatibilityEntry e{i, j};
      e.c0 = std::abs(diagonal_value(plant, i, j, 1.0) - f.value(1.0));
      e.c1 = std::abs(f.derivative(1.0) - compatible_slope(plant, i, j));
      r.max_c0 = std::max(r.max_c0, e.c0);
      r.max_c1 = std::max(r.max_c1, e.c1);
      r.entries.push_back(e);
    }
  return r;
}

struct DiscontinuityCurve {
  int i = 0;
  int j = 0;
  std::vector<std::array<double, 2>> points;
};

/// Samples of an n x n kernel on the triangle. The xi = 0 trace is kept
/// separately because (0,0) can carry two values.
class KernelField {
 public:
  KernelField() = default;
  KernelField(TriangleGrid grid, int n, int m)
      : grid_(grid), n_(n), m_(m),
        values_(n * n, std::vector<double>(grid.size(), 0.0)),
        bottom_(n * n, std::vector<double>(grid.base().size(), 0.0)) {}

  const TriangleGrid& grid() const noexcept { return grid_; }
  int channels() const noexcept { return n_; }
  int negative() const noexcept { return m_; }

  double at(int i, int j, int p, int q) const { return values_[i * n_ + j][TriangleGrid::index(p, q)]; }
  double& at(int i, int j, int p, int q) { return values_[i * n_ + j][TriangleGrid::index(p, q)]; }
  /// Limit of K_ij(x_p, xi) as xi -> 0.
  double bottom(int i, int j, int p) const { return bottom_[i * n_ + j][p]; }
  double& bottom(int i, int j, int p) { return bottom_[i * n_ + j][p]; }
  /// Value used inside integrals: the bottom trace on the xi = 0 column.
  double integrand(int i, int j, int p, int q) const { return q == 0 ? bottom(i, j, p) : at(i, j, p, q); }

  std::vector<double>& component(int i, int j) { return values_[i * n_ + j]; }
  const std::vector<double>& component(int i, int j) const { return values_[i * n_ + j]; }
  std::vector<double>& bottom_component(int i, int j) { return bottom_[i * n_ + j]; }
  const std::vector<double>& bottom_component(int i, int j) const { return bottom_[i * n_ + j]; }

  /// Interpolated value at an arbitrary point of the triangle.
  double eval(int i, int j, double x, double xi) const {
    TriangleStencil s = grid_.stencil(x, xi);
    const auto& v = values_[i * n_ + j];
    double r = 0.0;
    for (int t = 0; t < s.count; ++t) r += s.weight[t] * v[s.index[t]];
    return r;
  }

  double sup_norm() const noexcept {
    double s = 0.0;
    for (const auto& c : values_)
      for (double v : c) s = std::max(s, std::abs(v));
    for (const auto& c : bottom_)
      for (double v : c) s = std::max(s, std::abs(v));
    return s;
  }

  std::vector<DiscontinuityCurve> curves;
  int iterations = 0;
  double final_update = 0.0;
  std::vector<double> history;

 private:
  TriangleGrid grid_;
  int n_ = 0;
  int m_ = 0;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<double>> bottom_;
};

struct KernelOptions {
  double tol = 1e-10;
  int max_iter = 200;
};

namespace detail {

enum class Side : std::uint8_t { Inside, Diagonal, Bottom, Right };

struct TracedPath {
  std::vector<std::array<double, 2>> points;
  double ds = 0.0;
  double ds_last = 0.0;
  Side exit = Side::Inside;
};

/// Follows dx/ds = dir lambda_i(x), dxi/ds = dir lambda_j(xi) from (x, xi) until it leaves the triangle.
/// RK4 with displacement about half a cell per step; the exit point is located by bisection on the step.
inline TracedPath trace(const SpeedProfile& sp, int i, int j, int dir, double x, double xi, double ds) {
  const bool diag_invariant = (i == j);
  auto rk4 = [&](int c, double y, double step) {
    double k1 = dir * sp(c, y);
    double k2 = dir * sp(c, y + 0.5 * step * k1);
    double k3 = dir * sp(c, y + 0.5 * step * k2);
    double k4 = dir * sp(c, y + step * k3);
    return y + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  };
  auto violation = [&](double a, double b, Side* side) {
    double v = -b;
    Side s = Side::Bottom;
    if (!diag_invariant && b - a > v) {
      v = b - a;
      s = Side::Diagonal;
    }
    if (a - 1.0 > v) {
      v = a - 1.0;
      s = Side::Right;
    }
    if (-a > v) {
      v = -a;
      s = Side::Bottom;
    }
    if (side) *side = s;
    return v;
  };

  TracedPath path;
  path.ds = ds;
  path.points.push_back({x, xi});
  const int guard = 1 << 22;
  for (int step = 0; step < guard; ++step) {
    double nx = rk4(i, x, ds), nxi = rk4(j, xi, ds);
    if (diag_invariant) nxi = std::min(nxi, nx);
    Side side;
    if (violation(nx, nxi, &side) <= 0.0) {
      if (nx == x && nxi == xi) throw InternalError("characteristic is stationary");
      x = nx;
      xi = nxi;
      path.points.push_back({x, xi});
      continue;
    }
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      double mx = rk4(i, x, mid * ds), mxi = rk4(j, xi, mid * ds);
      if (diag_invariant) mxi = std::min(mxi, mx);
      if (violation(mx, mxi, nullptr) <= 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    double ex = rk4(i, x, hi * ds), exi = rk4(j, xi, hi * ds);
    if (diag_invariant) exi = std::min(exi, ex);
    violation(ex, exi, &side);
    switch (side) {
      case Side::Bottom:
        exi = 0.0;
        ex = std::clamp(ex, 0.0, 1.0);
        break;
      case Side::Diagonal:
        ex = std::clamp(ex, 0.0, 1.0);
        exi = ex;
        break;
      case Side::Right:
        ex = 1.0;
        exi = std::clamp(exi, 0.0, 1.0);
        break;
      case Side::Inside:
        break;
    }
    path.points.push_back({ex, exi});
    path.ds_last = hi * ds;
    path.exit = side;
    return path;
  }
  throw InternalError("characteristic did not leave the triangle");
}

inline double segment_distance(std::array<double, 2> p, std::array<double, 2> a, std::array<double, 2> b) {
  double dx = b[0] - a[0], dy = b[1] - a[1];
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? std::clamp(((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2, 0.0, 1.0) : 0.0;
  double ex = a[0] + t * dx - p[0], ey = a[1] + t * dy - p[1];
  return std::sqrt(ex * ex + ey * ey);
}

inline double curve_distance(std::array<double, 2> p, const DiscontinuityCurve& c) {
  double d = std::numeric_limits<double>::infinity();
  if (c.points.size() == 1) return std::hypot(p[0] - c.points[0][0], p[1] - c.points[0][1]);
  for (std::size_t k = 0; k + 1 < c.points.size(); ++k) d = std::min(d, segment_distance(p, c.points[k], c.points[k + 1]));
  return d;
}

}  // namespace detail

/// Solves the kernel equations by Jacobi sweeps over characteristic integrals.
inline KernelField solve_kernel(const LinearPlant& plant, const TriangleGrid& grid, const ArtificialData& data,
                                KernelOptions opt = {}) {
  using detail::Side;
  const int n = plant.channels(), m = plant.negative(), N = grid.cells();
  const double h = grid.spacing();
  const SpatialGrid& base = grid.base();
  const auto& sp = plant.speeds();
  if (!(plant.grid() == base)) throw PlantError("kernel grid does not match the plant grid");
  if (data.n != n || data.m != m) throw PlantError("artificial data has the wrong size");

  auto compat = compatibility_check(data, plant);
  if (compat.max_c0 > 1e-9) throw PlantError("x = 1 data violates C0 compatibility by " + std::to_string(compat.max_c0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (bottom_data_range(i, j, m) && !data.k2(i, j))
        throw PlantError("missing xi = 0 data for component " + std::to_string(i + 1) + "," + std::to_string(j + 1));

  // coef[j][k][q] = sigma_kj(xi_q) + delta_kj lambda_j'(xi_q)
  std::vector<std::vector<std::vector<double>>> coef(n, std::vector<std::vector<double>>(n));
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      coef[j][k].resize(base.size());
      for (int q = 0; q < base.size(); ++q)
        coef[j][k][q] = plant.coupling().sample(k, j, q) + (k == j ? sp.slope_sample(j, q) : 0.0);
    }

  struct Path {
    std::uint32_t begin = 0;
    std::uint32_t count = 0;
    double ds = 0.0;
    double ds_last = 0.0;
    Side exit = Side::Inside;
    double exit_x = 0.0;
    double entry = 0.0;  // explicit data at the exit point
  };
  struct Component {
    int i, j, dir;
    bool diag, relation, bottom_data, right;
    std::vector<Path> paths;
    std::vector<float> pts;
  };

  std::vector<Component> comps;
  comps.reserve(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Component c{i, j, trace_direction(i, j, m), i != j, relation_range(i, j, m), bottom_data_range(i, j, m),
                  right_range(i, j, m), {}, {}};
      comps.push_back(std::move(c));
    }

  KernelField K(grid, n, m);

  auto assigned = [&](const Component& c, int p, int q) {
    return (c.diag && p == q) || ((c.relation || c.bottom_data) && q == 0) || (c.right && p == N);
  };

  // Characteristic geometry is independent of the iterate: trace once.
  for (auto& c : comps) {
    double vmax = 0.0;
    for (int k = 0; k < base.size(); ++k) vmax = std::max({vmax, std::abs(sp.sample(c.i, k)), std::abs(sp.sample(c.j, k))});
    double ds = 0.5 * h / vmax;
    c.paths.resize(grid.size());
    for (int p = 0; p <= N; ++p)
      for (int q = 0; q <= p; ++q) {
        if (assigned(c, p, q)) continue;
        auto tr = detail::trace(sp, c.i, c.j, c.dir, base.node(p), base.node(q), ds);
        Path& path = c.paths[TriangleGrid::index(p, q)];
        path.begin = static_cast<std::uint32_t>(c.pts.size() / 2);
        path.count = static_cast<std::uint32_t>(tr.points.size());
        path.ds = tr.ds;
        path.ds_last = tr.ds_last;
        path.exit = tr.exit;
        auto last = tr.points.back();
        path.exit_x = last[0];
        for (auto& pt : tr.points) {
          c.pts.push_back(static_cast<float>(pt[0]));
          c.pts.push_back(static_cast<float>(pt[1]));
        }
        switch (tr.exit) {
          case Side::Diagonal:
            if (!c.diag) throw InternalError("characteristic reached the diagonal without data");
            path.entry = diagonal_value(plant, c.i, c.j, last[0]);
            break;
          case Side::Right:
            if (!c.right) throw InternalError("characteristic reached x = 1 without data");
            path.entry = data.k1(c.i, c.j).value(last[1]);
            break;
          case Side::Bottom:
            if (c.bottom_data) {
              path.entry = data.k2(c.i, c.j).value(last[0]);
            } else if (!c.relation) {
              throw InternalError("characteristic reached xi = 0 without data");
            }
            break;
          case Side::Inside:
            throw InternalError("characteristic did not exit");
        }
      }
  }

  // Curves where the kernel may jump.
  for (const auto& c : comps) {
    bool corner00 = c.diag && (c.relation || c.bottom_data);
    if (corner00) {
      auto tr = detail::trace(sp, c.i, c.j, -c.dir, 0.0, 0.0, 0.5 * h / sp.max_speed());
      K.curves.push_back({c.i, c.j, tr.points});
    }
    if (c.right) {
      double gap = std::abs(diagonal_value(plant, c.i, c.j, 1.0) - data.k1(c.i, c.j).value(1.0));
      if (gap > 1e-12) {
        auto tr = detail::trace(sp, c.i, c.j, -c.dir, 1.0, 1.0, 0.5 * h / sp.max_speed());
        K.curves.push_back({c.i, c.j, tr.points});
      }
    }
  }

  std::vector<double> lam0(n);
  for (int k = 0; k < n; ++k) lam0[k] = sp.sample(k, 0);
  const Eigen::MatrixXd& Q = plant.reflection();

  // Relation value on xi = 0 at x_p from the current bottom traces.
  auto relation = [&](const KernelField& F, int i, int j, int p) {
    double s = 0.0;
    for (int k = 0; k < n - m; ++k) s += lam0[m + k] * F.bottom(i, m + k, p) * Q(k, j);
    return -s / lam0[j];
  };

  KernelField next(grid, n, m);
  std::vector<std::vector<double>> rel(n * n);
  std::vector<double> F(n);
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    for (const auto& c : comps)
      if (c.relation) {
        auto& r = rel[c.i * n + c.j];
        r.resize(base.size());
        for (int p = 0; p <= N; ++p) r[p] = relation(K, c.i, c.j, p);
      }

    for (const auto& c : comps) {
      auto& out = next.component(c.i, c.j);
      const auto& r = rel[c.i * n + c.j];
      for (int p = 0; p <= N; ++p)
        for (int q = 0; q <= p; ++q) {
          std::size_t idx = TriangleGrid::index(p, q);
          if (c.diag && p == q) {
            out[idx] = diagonal_value(plant, c.i, c.j, base.node(p));
            continue;
          }
          if (q == 0 && c.relation) {
            out[idx] = r[p];
            continue;
          }
          if (q == 0 && c.bottom_data) {
            out[idx] = data.k2(c.i, c.j).value(base.node(p));
            continue;
          }
          if (p == N && c.right) {
            out[idx] = data.k1(c.i, c.j).value(base.node(q));
            continue;
          }
          const Path& path = c.paths[idx];
          double entry = path.entry;
          if (path.exit == Side::Bottom && c.relation) entry = base.interpolate(r, path.exit_x);
          // trapezoid of sum_k coef_kj(xi) K_ik(x, xi) along the stored points
          double acc = 0.0, prev = 0.0;
          const float* pt = c.pts.data() + 2 * static_cast<std::size_t>(path.begin);
          for (std::uint32_t t = 0; t < path.count; ++t) {
            double x = pt[2 * t], xi = pt[2 * t + 1];
            TriangleStencil st = grid.stencil(x, xi);
            auto [cq, fq] = base.locate(xi);
            double f = 0.0;
            for (int k = 0; k < n; ++k) {
              const auto& cf = coef[c.j][k];
              double ck = fq == 0.0 ? cf[cq] : (1.0 - fq) * cf[cq] + fq * cf[cq + 1];
              if (ck == 0.0) continue;
              const auto& v = K.component(c.i, k);
              double kv = 0.0;
              for (int s = 0; s < st.count; ++s) kv += st.weight[s] * v[st.index[s]];
              f += ck * kv;
            }
            if (t > 0) acc += 0.5 * (t + 1 == path.count ? path.ds_last : path.ds) * (prev + f);
            prev = f;
          }
          out[idx] = entry + c.dir * acc;
        }
      auto& b = next.bottom_component(c.i, c.j);
      for (int p = 0; p <= N; ++p) {
        if (c.relation) {
          b[p] = r[p];
        } else if (c.bottom_data) {
          b[p] = data.k2(c.i, c.j).value(base.node(p));
        } else {
          b[p] = out[TriangleGrid::index(p, 0)];
        }
      }
    }

    double upd = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const auto& a = K.component(i, j);
        const auto& b = next.component(i, j);
        for (std::size_t t = 0; t < a.size(); ++t) upd = std::max(upd, std::abs(a[t] - b[t]));
        const auto& ab = K.bottom_component(i, j);
        const auto& bb = next.bottom_component(i, j);
        for (std::size_t t = 0; t < ab.size(); ++t) upd = std::max(upd, std::abs(ab[t] - bb[t]));
      }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        std::swap(K.component(i, j), next.component(i, j));
        std::swap(K.bottom_component(i, j), next.bottom_component(i, j));
      }
    K.history.push_back(upd);
    K.iterations = iter;
    K.final_update = upd;
    if (!std::isfinite(upd)) throw NumericalError("kernel iteration diverged");
    if (upd < opt.tol) return K;
  }
  throw ConvergenceError("kernel iteration did not converge in " + std::to_string(opt.max_iter) + " sweeps", K.history);
}

struct KernelResidualReport {
  // per component (i*n + j)
  std::vector<double> pde_max;
  std::vector<double> pde_l2;
  std::vector<int> counted;
  double pde_max_all = 0.0;
  double diagonal_max = 0.0;
  double relation_max = 0.0;
  int excluded = 0;
};

/// Finite-difference residual of the kernel PDE plus boundary residuals.
/// Nodes within 1.5 cells of a discontinuity curve of the same row are skipped.
inline KernelResidualReport kernel_residual(const KernelField& K, const LinearPlant& plant) {
  const int n = K.channels(), m = K.negative(), N = K.grid().cells();
  const double h = K.grid().spacing();
  const SpatialGrid& base = K.grid().base();
  const auto& sp = plant.speeds();
  KernelResidualReport r;
  r.pde_max.assign(n * n, 0.0);
  r.pde_l2.assign(n * n, 0.0);
  r.counted.assign(n * n, 0);

  std::vector<char> banned_row(static_cast<std::size_t>(n) * K.grid().size(), 0);
  for (int i = 0; i < n; ++i)
    for (int p = 0; p <= N; ++p)
      for (int q = 0; q <= p; ++q)
        for (const auto& c : K.curves)
          if (c.i == i && detail::curve_distance({base.node(p), base.node(q)}, c) <= 1.5 * h + 1e-14) {
            banned_row[i * K.grid().size() + TriangleGrid::index(p, q)] = 1;
            break;
          }

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p <= N; ++p)
        for (int q = 0; q <= p; ++q) {
          if (banned_row[i * K.grid().size() + TriangleGrid::index(p, q)]) {
            ++r.excluded;
            continue;
          }
          double dx, dxi;
          if (p - 1 >= q) {
            dx = (K.at(i, j, p, q) - K.at(i, j, p - 1, q)) / h;
          } else if (p + 1 <= N) {
            dx = (K.at(i, j, p + 1, q) - K.at(i, j, p, q)) / h;
          } else {
            continue;
          }
          if (q >= 1) {
            dxi = (K.at(i, j, p, q) - K.at(i, j, p, q - 1)) / h;
          } else if (q + 1 <= p) {
            dxi = (K.at(i, j, p, q + 1) - K.at(i, j, p, q)) / h;
          } else {
            continue;
          }
          double res = sp.sample(i, p) * dx + sp.sample(j, q) * dxi;
          for (int k = 0; k < n; ++k) {
            double ck = plant.coupling().sample(k, j, q) + (k == j ? sp.slope_sample(j, q) : 0.0);
            res += ck * K.at(i, k, p, q);
          }
          res = std::abs(res);
          int c = i * n + j;
          r.pde_max[c] = std::max(r.pde_max[c], res);
          r.pde_l2[c] += res * res * h * h;
          ++r.counted[c];
        }
  for (int c = 0; c < n * n; ++c) {
    r.pde_l2[c] = std::sqrt(r.pde_l2[c]);
    r.pde_max_all = std::max(r.pde_max_all, r.pde_max[c]);
  }

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i != j)
        for (int p = 0; p <= N; ++p)
          r.diagonal_max = std::max(r.diagonal_max, std::abs(K.at(i, j, p, p) - diagonal_value(plant, i, j, base.node(p))));
      if (relation_range(i, j, m))
        for (int p = 0; p <= N; ++p) {
          double s = 0.0;
          for (int k = 0; k < n - m; ++k)
            s += sp.sample(m + k, 0) * K.bottom(i, m + k, p) * plant.reflection()(k, j);
          double want = -s / sp.sample(j, 0);
          r.relation_max = std::max(r.relation_max, std::abs(K.bottom(i, j, p) - want));
        }
    }
  return r;
}

/// G(x) = -K(x,0) Lambda(0) [[I, 0], [Q, 0]] at the nodes.
struct TargetCoupling {
  SpatialGrid grid;
  int n = 0;
  int m = 0;
  std::vector<Eigen::MatrixXd> g;  // per node
  double M = 0.0;                  // entrywise sup |G_ij|
  double structure_residual = 0.0;

  double at(int i, int j, int k) const { return g[k](i, j); }
  double eval(int i, int j, double x) const {
    auto [c, f] = grid.locate(x);
    if (f == 0.0) return g[c](i, j);
    return (1.0 - f) * g[c](i, j) + f * g[c + 1](i, j);
  }
};

inline TargetCoupling target_coupling(const KernelField& K, const LinearPlant& plant, double structure_tol = 1e-8) {
  const int n = K.channels(), m = K.negative(), N = K.grid().cells();
  const auto& sp = plant.speeds();
  const Eigen::MatrixXd& Q = plant.reflection();
  TargetCoupling T;
  T.grid = K.grid().base();
  T.n = n;
  T.m = m;
  T.g.assign(N + 1, Eigen::MatrixXd::Zero(n, n));
  for (int p = 0; p <= N; ++p)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        double s = K.bottom(i, j, p) * sp.sample(j, 0);
        for (int k = 0; k < n - m; ++k) s += K.bottom(i, m + k, p) * sp.sample(m + k, 0) * Q(k, j);
        T.g[p](i, j) = -s;
      }
  for (int p = 0; p <= N; ++p)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = std::abs(T.g[p](i, j));
        T.M = std::max(T.M, v);
        if (j >= m || (i <= j && j < m)) T.structure_residual = std::max(T.structure_residual, v);
      }
  if (T.structure_residual > structure_tol)
    throw NumericalError("target coupling violates the cascade structure by " + std::to_string(T.structure_residual));
  return T;
}

/// Successive approximation of L(x,xi) = K(x,xi) + int_xi^x K(x,s) L(s,xi) ds.
inline KernelField inverse_kernel(const KernelField& K, KernelOptions opt = {1e-12, 200}) {
  const int n = K.channels(), N = K.grid().cells();
  const SpatialGrid& base = K.grid().base();
  KernelField L(K.grid(), n, K.negative());
  KernelField next(K.grid(), n, K.negative());
  // L starts at K.
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      L.component(i, j) = K.component(i, j);
      L.bottom_component(i, j) = K.bottom_component(i, j);
    }
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    double upd = 0.0;
    for (int p = 0; p <= N; ++p)
      for (int q = 0; q <= p; ++q) {
        // q == 0 is computed on the bottom trace; the (0,0) node keeps the diagonal value.
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            double s = K.integrand(i, j, p, q);
            for (int r = q; r <= p; ++r) {
              double w = base.trapezoid_weight(r - q, p - q);
              if (w == 0.0) continue;
              for (int k = 0; k < n; ++k) s += w * K.integrand(i, k, p, r) * L.integrand(k, j, r, q);
            }
            if (q == 0) {
              next.bottom(i, j, p) = s;
              next.at(i, j, p, 0) = p == 0 ? K.at(i, j, 0, 0) : s;
            } else {
              next.at(i, j, p, q) = s;
            }
          }
      }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const auto& a = L.component(i, j);
        const auto& b = next.component(i, j);
        for (std::size_t t = 0; t < a.size(); ++t) upd = std::max(upd, std::abs(a[t] - b[t]));
        const auto& ab = L.bottom_component(i, j);
        const auto& bb = next.bottom_component(i, j);
        for (std::size_t t = 0; t < ab.size(); ++t) upd = std::max(upd, std::abs(ab[t] - bb[t]));
        std::swap(L.component(i, j), next.component(i, j));
        std::swap(L.bottom_component(i, j), next.bottom_component(i, j));
      }
    L.history.push_back(upd);
    L.iterations = iter;
    L.final_update = upd;
    if (!std::isfinite(upd)) throw NumericalError("inverse kernel iteration diverged");
    if (upd < opt.tol) {
      L.curves = K.curves;
      return L;
    }
  }
  throw ConvergenceError("inverse kernel iteration did not converge", L.history);
}

struct VolterraResidual {
  double forward = 0.0;     // L - K - int K(x,s) L(s,xi) ds
  double reciprocal = 0.0;  // L - K - int L(x,s) K(s,xi) ds
};

inline VolterraResidual volterra_residuals(const KernelField& K, const KernelField& L) {
  const int n = K.channels(), N = K.grid().cells();
  const SpatialGrid& base = K.grid().base();
  VolterraResidual r;
  for (int p = 0; p <= N; ++p)
    for (int q = 0; q <= p; ++q)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          double a = L.integrand(i, j, p, q) - K.integrand(i, j, p, q);
          double b = a;
          for (int s = q; s <= p; ++s) {
            double w = base.trapezoid_weight(s - q, p - q);
            if (w == 0.0) continue;
            for (int k = 0; k < n; ++k) {
              a -= w * K.integrand(i, k, p, s) * L.integrand(k, j, s, q);
              b -= w * L.integrand(i, k, p, s) * K.integrand(k, j, s, q);
            }
          }
          r.forward = std::max(r.forward, std::abs(a));
          r.reciprocal = std::max(r.reciprocal, std::abs(b));
        }
  return r;
}

}  // namespace bstep
