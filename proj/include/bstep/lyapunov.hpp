#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bstep/error.hpp"
#include "bstep/kernel.hpp"
#include "bstep/plant.hpp"
#include "bstep/state.hpp"

namespace bstep {

enum class MuMode { AsWritten, Conservative };
enum class PMode { Minus, Plus };

struct LyapunovDesign {
  double lambda = 0.0;
  double delta = 0.0;
  double mu = 0.0;
  double M = 0.0;
  int n = 0;
  int m = 0;
  Eigen::VectorXd b;
  Eigen::VectorXd s;
  Eigen::VectorXd C;
  Eigen::MatrixXd P;
  MuMode mu_mode = MuMode::AsWritten;
  PMode p_mode = PMode::Minus;  // the mode actually used
  bool p_fallback = false;      // Minus requested but n - m != m

  // certificate margins; all strictly positive for a valid design
  double delta_margin = 0.0;
  double b_margin = 0.0;
  double gershgorin_margin = 0.0;
  double sp_min_eigenvalue = 0.0;

  bool certified() const noexcept {
    return delta_margin > 0.0 && b_margin > 0.0 && gershgorin_margin > 0.0 && sp_min_eigenvalue > 0.0;
  }
};

/// Re-derives the certificate margins of a design from its own fields.
inline void certify(LyapunovDesign& d) {
  const int m = d.m;
  d.delta_margin = d.delta - std::max(d.lambda * d.mu + m * d.M * d.mu, d.lambda * d.mu + 1.0);
  d.b_margin = std::numeric_limits<double>::infinity();
  for (int r = 0; r < m; ++r) {
    double tail = 0.0;
    for (int j = r + 1; j < m; ++j) tail += d.b(j);
    double need = (r + 1 < m ? d.M * d.mu * std::exp(d.delta) * tail : 0.0) + d.s(r);
    d.b_margin = std::min(d.b_margin, d.b(r) - need);
  }
  Eigen::MatrixXd SP = Eigen::MatrixXd(d.s.asDiagonal()) - d.P;
  d.gershgorin_margin = std::numeric_limits<double>::infinity();
  for (int r = 0; r < m; ++r) {
    double off = 0.0;
    for (int j = 0; j < m; ++j)
      if (j != r) off += std::abs(SP(r, j));
    d.gershgorin_margin = std::min(d.gershgorin_margin, SP(r, r) - off);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (SP + SP.transpose()));
  d.sp_min_eigenvalue = es.eigenvalues().minCoeff();
}

inline LyapunovDesign select_parameters(double lambda, const LinearPlant& plant, const TargetCoupling& G,
                                        MuMode mu_mode = MuMode::AsWritten, PMode p_mode = PMode::Minus) {
  if (!(lambda > 0.0)) throw ConfigError("design.lambda", "must be positive");
  const int n = plant.channels(), m = plant.negative();
  const auto& sp = plant.speeds();
  const SpatialGrid& grid = plant.grid();
  LyapunovDesign d;
  d.lambda = lambda;
  d.n = n;
  d.m = m;
  d.M = G.M;
  d.mu_mode = mu_mode;

  d.mu = 0.0;
  for (int i = 0; i < n; ++i)
    d.mu = std::max(d.mu, 1.0 / (mu_mode == MuMode::AsWritten ? sp.sup_abs(i) : sp.inf_abs(i)));

  // P = Q^T Q + int G2^T W G2 with W = Lambda_-^-2 (needs n - m = m) or Lambda_+^-2.
  d.p_mode = p_mode;
  if (p_mode == PMode::Minus && n - m != m) {
    d.p_mode = PMode::Plus;
    d.p_fallback = true;
  }
  const Eigen::MatrixXd& Q = plant.reflection();
  d.P = Q.transpose() * Q;
  for (int k = 0; k <= grid.cells(); ++k) {
    Eigen::MatrixXd G2 = G.g[k].block(m, 0, n - m, m);
    Eigen::VectorXd w(n - m);
    for (int s = 0; s < n - m; ++s) {
      double l = d.p_mode == PMode::Minus ? sp.sample(s, k) : sp.sample(m + s, k);
      w(s) = 1.0 / (l * l);
    }
    d.P += grid.trapezoid_weight(k, grid.cells()) * (G2.transpose() * w.asDiagonal() * G2);
  }

  d.s.resize(m);
  for (int r = 0; r < m; ++r) d.s(r) = d.P.row(r).cwiseAbs().sum() + 1.0;

  d.delta = std::max(lambda * d.mu + m * d.M * d.mu, lambda * d.mu + 1.0) + 0.1;

  d.b.resize(m);
  d.C.resize(m);
  for (int r = m - 1; r >= 0; --r) {
    double tail = 0.0;
    for (int j = r + 1; j < m; ++j) tail += d.b(j);
    d.C(r) = tail;
    d.b(r) = r == m - 1 ? 1.01 * d.s(r) : 1.01 * (d.M * d.mu * std::exp(d.delta) * tail + d.s(r));
  }
  certify(d);
  return d;
}

/// D(x) = diag(-e^{delta x} B Lambda_-^-1, e^{-delta x} Lambda_+^-1).
inline Eigen::VectorXd d_weight(double x, const LyapunovDesign& d, const SpeedProfile& sp) {
  Eigen::VectorXd w(d.n);
  for (int i = 0; i < d.n; ++i) {
    double l = sp(i, x);
    w(i) = i < d.m ? -std::exp(d.delta * x) * d.b(i) / l : std::exp(-d.delta * x) / l;
  }
  return w;
}

namespace detail {

/// Diagonal of D at the grid nodes, per channel.
inline std::vector<std::vector<double>> d_table(const LyapunovDesign& d, const SpeedProfile& sp, const SpatialGrid& g) {
  std::vector<std::vector<double>> t(d.n, std::vector<double>(g.size()));
  for (int k = 0; k < g.size(); ++k) {
    double x = g.node(k);
    for (int i = 0; i < d.n; ++i) {
      double l = sp.sample(i, k);
      t[i][k] = i < d.m ? -std::exp(d.delta * x) * d.b(i) / l : std::exp(-d.delta * x) / l;
    }
  }
  return t;
}

inline double weighted_energy(const std::vector<std::vector<double>>& D, const StateField& v) {
  const int N = v.grid().cells();
  double s = 0.0;
  for (int i = 0; i < v.channels(); ++i)
    for (int k = 0; k <= N; ++k) s += v.grid().trapezoid_weight(k, N) * D[i][k] * v(i, k) * v(i, k);
  return s;
}

}  // namespace detail

/// Weighted L2 functional of gamma; nonnegative because Lambda_- < 0.
inline double v0(const StateField& gamma, const LyapunovDesign& d, const SpeedProfile& sp) {
  if (!(sp.grid() == gamma.grid())) throw NumericalError("state and speeds live on different grids");
  return detail::weighted_energy(detail::d_table(d, sp, gamma.grid()), gamma);
}

struct DerivativeFunctionals {
  std::vector<double> v2;  // int zeta^T D zeta, zeta ~ gamma_t
  std::vector<double> v3;  // int theta^T D theta, theta ~ gamma_tt
};

/// Backward-difference surrogates of the time-derivative functionals; entries 0 and 1
/// reuse the first computable value.
inline DerivativeFunctionals derivative_functionals(std::span<const StateField> snapshots, const LyapunovDesign& d,
                                                    const SpeedProfile& sp) {
  if (snapshots.size() < 3) throw NumericalError("derivative functionals need at least 3 snapshots");
  auto D = detail::d_table(d, sp, snapshots[0].grid());
  const int n = snapshots[0].channels();
  const std::size_t T = snapshots.size();
  DerivativeFunctionals out{std::vector<double>(T), std::vector<double>(T)};
  for (std::size_t k = 2; k < T; ++k) {
    const StateField &a = snapshots[k - 2], &b = snapshots[k - 1], &c = snapshots[k];
    double dt1 = c.t - b.t, dt0 = b.t - a.t;
    StateField zeta(c.grid(), n), theta(c.grid(), n);
    for (int i = 0; i < n; ++i)
      for (int q = 0; q < c.grid().size(); ++q) {
        double z1 = (c(i, q) - b(i, q)) / dt1;
        double z0 = (b(i, q) - a(i, q)) / dt0;
        zeta(i, q) = z1;
        theta(i, q) = (z1 - z0) / (0.5 * (dt1 + dt0));
      }
    out.v2[k] = detail::weighted_energy(D, zeta);
    out.v3[k] = detail::weighted_energy(D, theta);
  }
  out.v2[0] = out.v2[1] = out.v2[2];
  out.v3[0] = out.v3[1] = out.v3[2];
  return out;
}

struct DecayFit {
  double rate = 0.0;
  double residual = 0.0;  // standard error of the slope
  double t0 = 0.0;
  double t1 = 0.0;
  int points = 0;
  bool shrunk = false;
};

/// Least-squares slope of log V on [t0, t1]; the window ends before the first nonpositive V.
inline DecayFit decay_rate_fit(std::span<const double> t, std::span<const double> V, double t0, double t1) {
  if (t.size() != V.size()) throw NumericalError("time and value series differ in length");
  DecayFit f;
  f.t0 = t0;
  f.t1 = t1;
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] < t0 || t[k] > t1) continue;
    if (!(V[k] > 0.0)) {
      f.shrunk = true;
      f.t1 = xs.empty() ? t0 : xs.back();
      break;
    }
    xs.push_back(t[k]);
    ys.push_back(std::log(V[k]));
  }
  f.points = static_cast<int>(xs.size());
  if (xs.size() < 3) throw NumericalError("decay fit window holds fewer than 3 positive samples");
  const double np = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    mx += xs[k];
    my += ys[k];
  }
  mx /= np;
  my /= np;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxx += (xs[k] - mx) * (xs[k] - mx);
    sxy += (xs[k] - mx) * (ys[k] - my);
  }
  double slope = sxy / sxx;
  double sse = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    double e = ys[k] - (my + slope * (xs[k] - mx));
    sse += e * e;
  }
  f.rate = -slope;
  f.residual = xs.size() > 2 ? std::sqrt(sse / (np - 2.0) / sxx) : 0.0;
  return f;
}

/// max_k (V_{k+1} - V_k)/dt_k + lambda (V_k + V_{k+1})/2; <= 0 means V' <= -lambda V held at every step.
inline double lyapunov_derivative_check(std::span<const double> t, std::span<const double> V, double lambda) {
  if (t.size() != V.size() || t.size() < 2) throw NumericalError("derivative check needs a series of length >= 2");
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    double dt = t[k + 1] - t[k];
    worst = std::max(worst, (V[k + 1] - V[k]) / dt + lambda * 0.5 * (V[k] + V[k + 1]));
  }
  return worst;
}

}  // namespace bstep
