#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bstep/error.hpp"
#include "bstep/grid.hpp"

namespace bstep {

using ScalarFn = std::function<double(double)>;
/// f(x, u) where u holds as many state entries as the function needs.
using StateFn = std::function<double(double, std::span<const double>)>;

/// Smallest admissible |lambda_i(x)|.
inline constexpr double kSpeedMargin = 1e-9;
/// Finite-difference step for Jacobians and derivatives.
inline constexpr double kDiffStep = 1e-6;

/// Derivative of f on [0, 1]; central inside, second-order one-sided near the ends.
inline double differentiate(const ScalarFn& f, double x, double e = kDiffStep) {
  if (x - e < 0.0) return (-3.0 * f(x) + 4.0 * f(x + e) - f(x + 2 * e)) / (2 * e);
  if (x + e > 1.0) return (3.0 * f(x) - 4.0 * f(x - e) + f(x - 2 * e)) / (2 * e);
  return (f(x + e) - f(x - e)) / (2 * e);
}

class SpeedProfile {
 public:
  SpeedProfile() = default;
  SpeedProfile(SpatialGrid grid, int m, std::vector<ScalarFn> lambda)
      : grid_(grid), m_(m), fn_(std::move(lambda)) {
    if (fn_.empty()) throw PlantError("speed profile needs at least one channel");
    if (m_ < 0 || m_ > channels()) throw PlantError("split index out of range");
    samples_.assign(fn_.size(), std::vector<double>(grid_.size()));
    slopes_.assign(fn_.size(), std::vector<double>(grid_.size()));
    for (int i = 0; i < channels(); ++i) {
      for (int k = 0; k < grid_.size(); ++k) {
        samples_[i][k] = fn_[i](grid_.node(k));
        slopes_[i][k] = differentiate(fn_[i], grid_.node(k));
        if (!std::isfinite(samples_[i][k]))
          throw PlantError("speed " + std::to_string(i + 1) + " is not finite at x = " + std::to_string(grid_.node(k)));
      }
    }
  }

  static SpeedProfile constant(SpatialGrid grid, int m, const std::vector<double>& values) {
    std::vector<ScalarFn> fns;
    for (double v : values) fns.push_back([v](double) { return v; });
    return SpeedProfile(grid, m, std::move(fns));
  }

  int channels() const noexcept { return static_cast<int>(fn_.size()); }
  int negative() const noexcept { return m_; }
  const SpatialGrid& grid() const noexcept { return grid_; }

  double operator()(int i, double x) const { return fn_[i](x); }
  double derivative(int i, double x) const { return differentiate(fn_[i], x); }
  const ScalarFn& function(int i) const noexcept { return fn_[i]; }

  double sample(int i, int k) const noexcept { return samples_[i][k]; }
  std::span<const double> samples(int i) const noexcept { return samples_[i]; }
  double slope_sample(int i, int k) const noexcept { return slopes_[i][k]; }

  /// sup_x |lambda_i(x)| over the nodes.
  double sup_abs(int i) const noexcept {
    double s = 0.0;
    for (double v : samples_[i]) s = std::max(s, std::abs(v));
    return s;
  }
  /// inf_x |lambda_i(x)| over the nodes.
  double inf_abs(int i) const noexcept {
    double s = std::numeric_limits<double>::infinity();
    for (double v : samples_[i]) s = std::min(s, std::abs(v));
    return s;
  }
  double max_speed() const noexcept {
    double s = 0.0;
    for (int i = 0; i < channels(); ++i) s = std::max(s, sup_abs(i));
    return s;
  }
  double margin() const noexcept {
    double s = std::numeric_limits<double>::infinity();
    for (int i = 0; i < channels(); ++i) s = std::min(s, inf_abs(i));
    return s;
  }

 private:
  SpatialGrid grid_;
  int m_ = 0;
  std::vector<ScalarFn> fn_;
  std::vector<std::vector<double>> samples_;
  std::vector<std::vector<double>> slopes_;
};

struct SpeedReport {
  bool ok = true;
  int node = -1;
  // 0-based channels of the violated relation.
  int first = -1;
  int second = -1;
  std::string message;
};

inline SpeedReport validate_speeds(const SpeedProfile& profile) {
  SpeedReport r;
  const int n = profile.channels(), m = profile.negative();
  auto fail = [&](int k, int a, int b, std::string what) {
    r.ok = false;
    r.node = k;
    r.first = a;
    r.second = b;
    r.message = std::move(what) + " at node " + std::to_string(k) + " (x = " + std::to_string(profile.grid().node(k)) +
                "), channels " + std::to_string(a + 1) + "," + std::to_string(b + 1);
    return r;
  };
  if (m < 1 || m >= n) {
    r.ok = false;
    r.message = "split index must satisfy 1 <= m < n";
    return r;
  }
  for (int k = 0; k < profile.grid().size(); ++k) {
    if (!(profile.sample(m - 1, k) < 0.0 && profile.sample(m, k) > 0.0)) return fail(k, m - 1, m, "sign split broken");
    for (int i = 0; i + 1 < n; ++i)
      if (!(profile.sample(i, k) < profile.sample(i + 1, k))) return fail(k, i, i + 1, "ordering broken");
    for (int i = 0; i < n; ++i)
      if (std::abs(profile.sample(i, k)) < kSpeedMargin) return fail(k, i, i, "speed below hyperbolicity margin");
  }
  return r;
}

/// Sigma(x) with identically zero diagonal; empty entries are zero.
class CouplingProfile {
 public:
  CouplingProfile() = default;
  CouplingProfile(SpatialGrid grid, int n, std::vector<ScalarFn> entries) : grid_(grid), n_(n), fn_(std::move(entries)) {
    if (static_cast<int>(fn_.size()) != n * n) throw PlantError("coupling needs n*n entries");
    samples_.assign(fn_.size(), std::vector<double>(grid_.size(), 0.0));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        auto& f = fn_[i * n + j];
        if (!f) continue;
        for (int k = 0; k < grid_.size(); ++k) {
          double v = f(grid_.node(k));
          if (!std::isfinite(v)) throw PlantError("coupling entry is not finite");
          if (i == j && v != 0.0) throw PlantError("coupling diagonal must vanish (entry " + std::to_string(i + 1) + ")");
          samples_[i * n + j][k] = v;
        }
        if (i == j) f = nullptr;
      }
    }
  }

  static CouplingProfile zero(SpatialGrid grid, int n) { return CouplingProfile(grid, n, std::vector<ScalarFn>(n * n)); }

  static CouplingProfile constant(SpatialGrid grid, const Eigen::MatrixXd& sigma) {
    const int n = static_cast<int>(sigma.rows());
    std::vector<ScalarFn> fns(n * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (sigma(i, j) != 0.0) {
          double v = sigma(i, j);
          fns[i * n + j] = [v](double) { return v; };
        }
    return CouplingProfile(grid, n, std::move(fns));
  }

  int channels() const noexcept { return n_; }
  const SpatialGrid& grid() const noexcept { return grid_; }
  bool has(int i, int j) const noexcept { return static_cast<bool>(fn_[i * n_ + j]); }
  double operator()(int i, int j, double x) const { return has(i, j) ? fn_[i * n_ + j](x) : 0.0; }
  double sample(int i, int j, int k) const noexcept { return samples_[i * n_ + j][k]; }
  std::span<const double> samples(int i, int j) const noexcept { return samples_[i * n_ + j]; }

  /// (Sigma(x) u)_i.
  double row(int i, double x, std::span<const double> u) const {
    double s = 0.0;
    for (int j = 0; j < n_; ++j)
      if (has(i, j)) s += fn_[i * n_ + j](x) * u[j];
    return s;
  }

  double sup_abs() const noexcept {
    double s = 0.0;
    for (const auto& v : samples_)
      for (double e : v) s = std::max(s, std::abs(e));
    return s;
  }

 private:
  SpatialGrid grid_;
  int n_ = 0;
  std::vector<ScalarFn> fn_;
  std::vector<std::vector<double>> samples_;
};

/// (Q u_-)_s for the reflection matrix.
inline double reflect_row(const Eigen::MatrixXd& q, int s, std::span<const double> u_minus) {
  double v = 0.0;
  for (int r = 0; r < q.cols(); ++r) v += q(s, r) * u_minus[r];
  return v;
}

class LinearPlant {
 public:
  LinearPlant() = default;
  LinearPlant(SpeedProfile speeds, CouplingProfile coupling, Eigen::MatrixXd q)
      : speeds_(std::move(speeds)), coupling_(std::move(coupling)), q_(std::move(q)) {
    const int n = speeds_.channels(), m = speeds_.negative();
    if (!(speeds_.grid() == coupling_.grid())) throw PlantError("speeds and coupling live on different grids");
    if (coupling_.channels() != n) throw PlantError("coupling size does not match the number of channels");
    if (q_.rows() != n - m || q_.cols() != m) throw PlantError("reflection matrix must be (n-m) x m");
    if (!q_.allFinite()) throw PlantError("reflection matrix is not finite");
    auto rep = validate_speeds(speeds_);
    if (!rep.ok) throw PlantError(rep.message);
  }

  int channels() const noexcept { return speeds_.channels(); }
  int negative() const noexcept { return speeds_.negative(); }
  const SpatialGrid& grid() const noexcept { return speeds_.grid(); }
  const SpeedProfile& speeds() const noexcept { return speeds_; }
  const CouplingProfile& coupling() const noexcept { return coupling_; }
  const Eigen::MatrixXd& reflection() const noexcept { return q_; }

 private:
  SpeedProfile speeds_;
  CouplingProfile coupling_;
  Eigen::MatrixXd q_;
};

/// u_t + A(x,u) u_x = F(x,u), u_+(t,0) = G(u_-(t,0)).
class QuasilinearPlant {
 public:
  struct Data {
    int n = 0;
    int m = 0;
    std::vector<StateFn> a;   // n*n, empty = 0
    std::vector<StateFn> f;   // n
    std::vector<StateFn> g;   // n-m, functions of u_- (x unused)
    std::vector<StateFn> df;  // n*n, optional analytic d f_i / d u_j (evaluated at u = 0)
    std::vector<StateFn> dg;  // (n-m)*m, optional analytic d G_s / d u_r (evaluated at u = 0)
  };

  QuasilinearPlant() = default;
  explicit QuasilinearPlant(Data d) : d_(std::move(d)) {
    const int n = d_.n, m = d_.m;
    if (!(n > m && m >= 1)) throw PlantError("need n > m >= 1");
    if (static_cast<int>(d_.a.size()) != n * n) throw PlantError("A needs n*n entries");
    if (static_cast<int>(d_.f.size()) != n) throw PlantError("F needs n entries");
    if (static_cast<int>(d_.g.size()) != n - m) throw PlantError("G needs n-m entries");
    d_.df.resize(n * n);
    d_.dg.resize((n - m) * m);
    for (int i = 0; i < n; ++i)
      if (!d_.a[i * n + i]) throw PlantError("A diagonal entry " + std::to_string(i + 1) + " is missing");
  }

  /// The linear plant viewed as a quasilinear one; steppers agree bit for bit.
  static QuasilinearPlant from_linear(const LinearPlant& lin) {
    const int n = lin.channels(), m = lin.negative();
    Data d;
    d.n = n;
    d.m = m;
    d.a.resize(n * n);
    d.df.resize(n * n);
    for (int i = 0; i < n; ++i) {
      ScalarFn li = lin.speeds().function(i);
      d.a[i * n + i] = [li](double x, std::span<const double>) { return li(x); };
      d.f.push_back([c = lin.coupling(), i](double x, std::span<const double> u) { return c.row(i, x, u); });
      for (int j = 0; j < n; ++j)
        d.df[i * n + j] = [c = lin.coupling(), i, j](double x, std::span<const double>) { return c(i, j, x); };
    }
    d.dg.resize((n - m) * m);
    for (int s = 0; s < n - m; ++s) {
      d.g.push_back([q = lin.reflection(), s](double, std::span<const double> u) { return reflect_row(q, s, u); });
      for (int r = 0; r < m; ++r) {
        double v = lin.reflection()(s, r);
        d.dg[s * m + r] = [v](double, std::span<const double>) { return v; };
      }
    }
    return QuasilinearPlant(std::move(d));
  }

  int channels() const noexcept { return d_.n; }
  int negative() const noexcept { return d_.m; }

  bool has_a(int i, int j) const noexcept { return static_cast<bool>(d_.a[i * d_.n + j]); }
  double a(int i, int j, double x, std::span<const double> u) const {
    return has_a(i, j) ? d_.a[i * d_.n + j](x, u) : 0.0;
  }
  double f(int i, double x, std::span<const double> u) const { return d_.f[i](x, u); }
  /// G_s for s = 0..n-m-1 (the channel m + s).
  double g(int s, std::span<const double> u_minus) const { return d_.g[s](0.0, u_minus); }

  Eigen::MatrixXd a_matrix(double x, std::span<const double> u) const {
    Eigen::MatrixXd out(d_.n, d_.n);
    for (int i = 0; i < d_.n; ++i)
      for (int j = 0; j < d_.n; ++j) out(i, j) = a(i, j, x, u);
    return out;
  }
  Eigen::VectorXd f_vector(double x, std::span<const double> u) const {
    Eigen::VectorXd out(d_.n);
    for (int i = 0; i < d_.n; ++i) out(i) = f(i, x, u);
    return out;
  }
  Eigen::VectorXd g_vector(std::span<const double> u_minus) const {
    Eigen::VectorXd out(d_.n - d_.m);
    for (int s = 0; s < d_.n - d_.m; ++s) out(s) = g(s, u_minus);
    return out;
  }

  /// d f_i / d u_j at (x, 0): analytic when supplied, else central differences.
  double df(int i, int j, double x) const {
    std::vector<double> u(d_.n, 0.0);
    if (d_.df[i * d_.n + j]) return d_.df[i * d_.n + j](x, u);
    u[j] = kDiffStep;
    double fp = f(i, x, u);
    u[j] = -kDiffStep;
    double fm = f(i, x, u);
    return (fp - fm) / (2 * kDiffStep);
  }
  Eigen::MatrixXd jacobian_f(double x) const {
    Eigen::MatrixXd out(d_.n, d_.n);
    for (int i = 0; i < d_.n; ++i)
      for (int j = 0; j < d_.n; ++j) out(i, j) = df(i, j, x);
    return out;
  }
  Eigen::MatrixXd jacobian_g_fd() const {
    const int m = d_.m;
    Eigen::MatrixXd out(d_.n - m, m);
    std::vector<double> u(m, 0.0);
    for (int s = 0; s < d_.n - m; ++s)
      for (int r = 0; r < m; ++r) {
        u[r] = kDiffStep;
        double gp = g(s, u);
        u[r] = -kDiffStep;
        double gm = g(s, u);
        u[r] = 0.0;
        out(s, r) = (gp - gm) / (2 * kDiffStep);
      }
    return out;
  }
  /// d G_s / d u_r at u_-; analytic when supplied, else central differences.
  double dg_at(int s, int r, std::span<const double> u_minus) const {
    const int m = d_.m;
    if (d_.dg[s * m + r]) return d_.dg[s * m + r](0.0, u_minus);
    std::vector<double> u(u_minus.begin(), u_minus.end());
    u[r] = u_minus[r] + kDiffStep;
    double gp = g(s, u);
    u[r] = u_minus[r] - kDiffStep;
    double gm = g(s, u);
    return (gp - gm) / (2 * kDiffStep);
  }
  Eigen::MatrixXd jacobian_g() const {
    const int m = d_.m;
    Eigen::MatrixXd fd = jacobian_g_fd();
    std::vector<double> u(m, 0.0);
    for (int s = 0; s < d_.n - m; ++s)
      for (int r = 0; r < m; ++r)
        if (d_.dg[s * m + r]) fd(s, r) = d_.dg[s * m + r](0.0, u);
    return fd;
  }

  /// Checks F(x,0) = 0, G(0) = 0 and that A(x,0) is diagonal at the nodes.
  void validate(const SpatialGrid& grid, double tol = 1e-12) const {
    const int n = d_.n;
    std::vector<double> zero(n, 0.0);
    for (int k = 0; k < grid.size(); ++k) {
      double x = grid.node(k);
      for (int i = 0; i < n; ++i) {
        if (std::abs(f(i, x, zero)) > tol) throw PlantError("F(x,0) != 0 in component " + std::to_string(i + 1));
        for (int j = 0; j < n; ++j)
          if (i != j && std::abs(a(i, j, x, zero)) > tol) throw PlantError("A(x,0) is not diagonal");
      }
    }
    for (int s = 0; s < n - d_.m; ++s)
      if (std::abs(g(s, zero)) > tol) throw PlantError("G(0) != 0 in component " + std::to_string(d_.m + s + 1));
  }

 private:
  Data d_;
};

/// phi_i(x) = exp(-int_0^x f_ii / Lambda_i), the diagonal change of variables w = Phi u.
class ScalingProfile {
 public:
  ScalingProfile() = default;
  ScalingProfile(SpatialGrid grid, int m, std::vector<std::vector<double>> log_phi, std::vector<ScalarFn> rate)
      : grid_(grid), m_(m), log_phi_(std::move(log_phi)), rate_(std::move(rate)) {}

  static ScalingProfile identity(SpatialGrid grid, int n, int m) {
    std::vector<ScalarFn> rate(n, [](double) { return 0.0; });
    return ScalingProfile(grid, m, std::vector<std::vector<double>>(n, std::vector<double>(grid.size(), 0.0)),
                          std::move(rate));
  }

  int channels() const noexcept { return static_cast<int>(log_phi_.size()); }
  const SpatialGrid& grid() const noexcept { return grid_; }

  double sample(int i, int k) const { return std::exp(log_phi_[i][k]); }
  /// Off the nodes, integrates the rate from the cell's left node by Simpson.
  double operator()(int i, double x) const {
    auto [c, f] = grid_.locate(x);
    if (f == 0.0) return sample(i, c);
    double x0 = grid_.node(c), x1 = x0 + f * grid_.spacing();
    double part = (x1 - x0) / 6.0 * (rate_[i](x0) + 4.0 * rate_[i](0.5 * (x0 + x1)) + rate_[i](x1));
    return std::exp(log_phi_[i][c] - part);
  }
  /// f_ii(x) / Lambda_i(x); Phi' = -diag(rate) Phi.
  double rate(int i, double x) const { return rate_[i](x); }

  Eigen::VectorXd at(double x) const {
    Eigen::VectorXd v(channels());
    for (int i = 0; i < channels(); ++i) v(i) = (*this)(i, x);
    return v;
  }
  /// First m entries of Phi at x = 1.
  Eigen::VectorXd control_diagonal() const {
    Eigen::VectorXd v(m_);
    for (int r = 0; r < m_; ++r) v(r) = sample(r, grid_.cells());
    return v;
  }

 private:
  SpatialGrid grid_;
  int m_ = 0;
  std::vector<std::vector<double>> log_phi_;
  std::vector<ScalarFn> rate_;
};

inline ScalingProfile diagonal_scaling(const QuasilinearPlant& plant, const SpatialGrid& grid) {
  const int n = plant.channels();
  std::vector<ScalarFn> rate;
  for (int i = 0; i < n; ++i) {
    rate.push_back([p = plant, i, n](double x) {
      std::vector<double> zero(n, 0.0);
      double li = p.a(i, i, x, zero);
      if (!(std::abs(li) >= kSpeedMargin))
        throw PlantError("singular integrand: speed " + std::to_string(i + 1) + " vanishes at x = " + std::to_string(x));
      return p.df(i, i, x) / li;
    });
  }
  // Composite Simpson on each cell, midpoints evaluated directly.
  const double h = grid.spacing();
  std::vector<std::vector<double>> log_phi(n, std::vector<double>(grid.size(), 0.0));
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    double left = rate[i](0.0);
    for (int k = 1; k < grid.size(); ++k) {
      double right = rate[i](grid.node(k));
      double mid = rate[i](0.5 * (grid.node(k - 1) + grid.node(k)));
      acc += h / 6.0 * (left + 4.0 * mid + right);
      log_phi[i][k] = -acc;
      left = right;
    }
  }
  return ScalingProfile(grid, plant.negative(), std::move(log_phi), std::move(rate));
}

inline LinearPlant linearize(const QuasilinearPlant& plant, const ScalingProfile& scaling) {
  const int n = plant.channels(), m = plant.negative();
  const SpatialGrid& grid = scaling.grid();
  std::vector<ScalarFn> speeds;
  for (int i = 0; i < n; ++i)
    speeds.push_back([plant, i, n](double x) {
      std::vector<double> zero(n, 0.0);
      return plant.a(i, i, x, zero);
    });
  std::vector<ScalarFn> sigma(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j)
        sigma[i * n + j] = [plant, scaling, i, j](double x) { return scaling(i, x) / scaling(j, x) * plant.df(i, j, x); };
  return LinearPlant(SpeedProfile(grid, m, std::move(speeds)), CouplingProfile(grid, n, std::move(sigma)),
                     plant.jacobian_g());
}

/// Lambda_NL, f_NL and G_NL: what is left of the scaled plant after removing its linear part.
class NonlinearResidual {
 public:
  NonlinearResidual(QuasilinearPlant plant, ScalingProfile scaling, LinearPlant linear)
      : plant_(std::move(plant)), scaling_(std::move(scaling)), linear_(std::move(linear)) {}

  /// Phi A(x, Phi^-1 w) Phi^-1.
  Eigen::MatrixXd a_bar(double x, std::span<const double> w) const {
    Eigen::VectorXd phi = scaling_.at(x);
    std::vector<double> u = unscale(phi, w);
    Eigen::MatrixXd a = plant_.a_matrix(x, u);
    return phi.asDiagonal() * a * phi.cwiseInverse().asDiagonal();
  }

  /// Phi F(x, Phi^-1 w) - a_bar diag(f_ii / Lambda_i) w.
  Eigen::VectorXd f_tilde(double x, std::span<const double> w) const {
    const int n = plant_.channels();
    Eigen::VectorXd phi = scaling_.at(x);
    std::vector<double> u = unscale(phi, w);
    Eigen::VectorXd out = phi.cwiseProduct(plant_.f_vector(x, u));
    Eigen::VectorXd gw(n);
    for (int i = 0; i < n; ++i) gw(i) = scaling_.rate(i, x) * w[i];
    return out - a_bar(x, w) * gw;
  }

  Eigen::MatrixXd lambda_nl(double x, std::span<const double> w) const {
    const int n = plant_.channels();
    Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) lam(i, i) = linear_.speeds()(i, x);
    return lam - a_bar(x, w);
  }

  Eigen::VectorXd f_nl(double x, std::span<const double> w) const {
    const int n = plant_.channels();
    Eigen::VectorXd out = f_tilde(x, w);
    for (int i = 0; i < n; ++i) out(i) -= linear_.coupling().row(i, x, w);
    return out;
  }

  Eigen::VectorXd g_nl(std::span<const double> w_minus) const {
    const Eigen::MatrixXd& q = linear_.reflection();
    Eigen::VectorXd out = plant_.g_vector(w_minus);
    for (int s = 0; s < out.size(); ++s) out(s) -= reflect_row(q, s, w_minus);
    return out;
  }

 private:
  static std::vector<double> unscale(const Eigen::VectorXd& phi, std::span<const double> w) {
    std::vector<double> u(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) u[i] = w[i] / phi(static_cast<Eigen::Index>(i));
    return u;
  }

  QuasilinearPlant plant_;
  ScalingProfile scaling_;
  LinearPlant linear_;
};

inline NonlinearResidual nonlinear_residuals(const QuasilinearPlant& plant, const ScalingProfile& scaling,
                                             const LinearPlant& linear) {
  for (int i = 0; i < scaling.channels(); ++i)
    for (int k = 0; k < scaling.grid().size(); ++k)
      if (!(scaling.sample(i, k) > 0.0)) throw InternalError("scaling is not positive");
  return NonlinearResidual(plant, scaling, linear);
}

}  // namespace bstep
