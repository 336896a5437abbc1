#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "bstep/error.hpp"
#include "bstep/kernel.hpp"
#include "bstep/plant.hpp"
#include "bstep/state.hpp"

namespace bstep {

namespace detail {

inline void require_grid(const KernelField& K, const StateField& w) {
  if (!(K.grid().base() == w.grid()) || K.channels() != w.channels())
    throw NumericalError("kernel and state live on different grids");
}

/// out(x_p) = sign * int_0^x_p P(x_p, xi) v(xi) dxi added to v, trapezoid.
inline StateField volterra_apply(const KernelField& P, const StateField& v, double sign) {
  require_grid(P, v);
  const int n = v.channels(), N = v.grid().cells();
  const SpatialGrid& g = v.grid();
  StateField out = v;
  for (int p = 1; p <= N; ++p)
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int q = 0; q <= p; ++q) {
        double row = 0.0;
        for (int j = 0; j < n; ++j) row += P.integrand(i, j, p, q) * v(j, q);
        acc += g.trapezoid_weight(q, p) * row;
      }
      out(i, p) = v(i, p) + sign * acc;
    }
  return out;
}

}  // namespace detail

/// gamma = w - int_0^x K(x, xi) w(xi) dxi.
inline StateField forward_transform(const KernelField& K, const StateField& w) { return detail::volterra_apply(K, w, -1.0); }

/// w = gamma + int_0^x L(x, xi) gamma(xi) dxi.
inline StateField inverse_transform(const KernelField& L, const StateField& gamma) {
  return detail::volterra_apply(L, gamma, 1.0);
}

/// U_i = int_0^1 sum_j K_ij(1, xi) w_j(xi) dxi, i < m.
inline std::vector<double> linear_feedback(const KernelField& K, const StateField& w) {
  detail::require_grid(K, w);
  const int n = w.channels(), m = K.negative(), N = w.grid().cells();
  std::vector<double> U(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int q = 0; q <= N; ++q) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) row += K.integrand(i, j, N, q) * w(j, q);
      acc += w.grid().trapezoid_weight(q, N) * row;
    }
    U[i] = acc;
  }
  return U;
}

/// Kernels and scaling needed by the nonlinear feedback.
struct TransformPair {
  KernelField K;
  KernelField L;
  ScalingProfile scaling;
  // [r * n + j][q]: K_rj(1, xi_q) and phi_r(1)^-1 K_rj(1, xi_q) phi_j(xi_q)
  std::vector<std::vector<double>> control_row;
  std::vector<std::vector<double>> k_tilde;
};

inline TransformPair make_transform_pair(KernelField K, KernelField L, ScalingProfile scaling) {
  TransformPair t{std::move(K), std::move(L), std::move(scaling), {}, {}};
  const int n = t.K.channels(), m = t.K.negative(), N = t.K.grid().cells();
  t.control_row.assign(m * n, std::vector<double>(N + 1));
  t.k_tilde.assign(m * n, std::vector<double>(N + 1));
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < n; ++j)
      for (int q = 0; q <= N; ++q) {
        double k = t.K.integrand(r, j, N, q);
        t.control_row[r * n + j][q] = k;
        t.k_tilde[r * n + j][q] = k * t.scaling.sample(j, q) / t.scaling.sample(r, N);
      }
  return t;
}

/// h_r = phi_r(1)^-1 int_0^1 sum_j K_rj(1, xi) phi_j(xi) u_j(xi) dxi.
inline std::vector<double> nonlinear_feedback(const TransformPair& pair, const ScalingProfile& scaling,
                                              const StateField& u) {
  detail::require_grid(pair.K, u);
  const int n = u.channels(), m = pair.K.negative(), N = u.grid().cells();
  std::vector<double> H(m, 0.0);
  for (int r = 0; r < m; ++r) {
    double acc = 0.0;
    for (int q = 0; q <= N; ++q) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) row += pair.control_row[r * n + j][q] * (scaling.sample(j, q) * u(j, q));
      acc += u.grid().trapezoid_weight(q, N) * row;
    }
    H[r] = acc / scaling.sample(r, N);
  }
  return H;
}

inline std::vector<double> nonlinear_feedback(const TransformPair& pair, const StateField& u) {
  return nonlinear_feedback(pair, pair.scaling, u);
}

/// a_r(t) = a_r(0) e^{-d_r t}, b_r(t) = b_r(0) e^{-dt_r t}.
struct DynamicExtension {
  std::vector<double> a0;
  std::vector<double> b0;
  std::vector<double> d;
  std::vector<double> dt;
};

inline std::vector<double> extension_value(const DynamicExtension& ext, double t) {
  std::vector<double> v(ext.a0.size());
  for (std::size_t r = 0; r < v.size(); ++r) v[r] = ext.a0[r] * std::exp(-ext.d[r] * t) + ext.b0[r] * std::exp(-ext.dt[r] * t);
  return v;
}

/// u_t at t = 0 from the equation: f(x, phi) - A(x, phi) phi'.
inline StateField initial_time_derivative(const QuasilinearPlant& plant, const StateField& phi) {
  const int n = phi.channels();
  std::vector<std::vector<double>> dphi;
  for (int i = 0; i < n; ++i) dphi.push_back(phi.first_difference(i));
  StateField tau(phi.grid(), n);
  for (int k = 0; k < phi.grid().size(); ++k) {
    double x = phi.grid().node(k);
    auto u = phi.node(k);
    for (int i = 0; i < n; ++i) {
      double v = plant.f(i, x, u);
      for (int j = 0; j < n; ++j)
        if (plant.has_a(i, j)) v -= plant.a(i, j, x, u) * dphi[j][k];
      tau(i, k) = v;
    }
  }
  return tau;
}

/// Mismatch of the x = 1 compatibility relations for the nonlinear feedback.
struct ControlCompatibility {
  std::vector<double> P;  // phi_r(1) - h_r(phi)
  std::vector<double> M;  // same relation one time derivative later
};

inline ControlCompatibility control_mismatch(const QuasilinearPlant& plant, const TransformPair& pair,
                                             const StateField& phi) {
  const int m = plant.negative(), N = phi.grid().cells();
  ControlCompatibility c;
  auto h = nonlinear_feedback(pair, phi);
  StateField tau = initial_time_derivative(plant, phi);
  auto ht = nonlinear_feedback(pair, tau);
  for (int r = 0; r < m; ++r) {
    c.P.push_back(phi(r, N) - h[r]);
    c.M.push_back(tau(r, N) - ht[r]);
  }
  return c;
}

/// Initial extension states that absorb the mismatches P and M.
inline DynamicExtension extension_from_mismatch(const std::vector<double>& P, const std::vector<double>& M,
                                                const std::vector<double>& d, const std::vector<double>& dt) {
  const std::size_t m = P.size();
  if (M.size() != m || d.size() != m || dt.size() != m) throw ConfigError("design.d", "one rate pair per control is required");
  DynamicExtension e{std::vector<double>(m), std::vector<double>(m), d, dt};
  for (std::size_t r = 0; r < m; ++r) {
    if (!(d[r] > 0.0 && dt[r] > 0.0)) throw ConfigError("design.d", "extension rates must be positive");
    if (d[r] == dt[r]) throw NumericalError("extension rates coincide: division by zero");
    e.a0[r] = -(M[r] + dt[r] * P[r]) / (d[r] - dt[r]);
    e.b0[r] = (d[r] * P[r] + M[r]) / (d[r] - dt[r]);
  }
  return e;
}

inline DynamicExtension extension_init(const QuasilinearPlant& plant, const TransformPair& pair, const StateField& phi,
                                       const std::vector<double>& d, const std::vector<double>& dt) {
  auto c = control_mismatch(plant, pair, phi);
  return extension_from_mismatch(c.P, c.M, d, dt);
}

struct CompatReport {
  std::vector<double> value;  // zeroth-order relation, per boundary channel
  std::vector<double> slope;  // first-order relation
  double max_value = 0.0;
  double max_slope = 0.0;
  bool extended = false;
};

/// Corner (t, x) = (0, 0): phi_+(0) = G(phi_-(0)) and its time derivative.
inline CompatReport check_compat_origin(const QuasilinearPlant& plant, const StateField& phi) {
  const int n = plant.channels(), m = plant.negative();
  CompatReport r;
  auto u0 = phi.node(0);
  std::vector<double> um(u0.begin(), u0.begin() + m);
  StateField tau = initial_time_derivative(plant, phi);
  for (int s = 0; s < n - m; ++s) {
    double v = std::abs(phi(m + s, 0) - plant.g(s, um));
    double rhs = 0.0;
    for (int q = 0; q < m; ++q) rhs += plant.dg_at(s, q, um) * tau(q, 0);
    double sl = std::abs(tau(m + s, 0) - rhs);
    r.value.push_back(v);
    r.slope.push_back(sl);
    r.max_value = std::max(r.max_value, v);
    r.max_slope = std::max(r.max_slope, sl);
  }
  return r;
}

/// Corner (t, x) = (0, 1) for the nonlinear feedback, optionally with the dynamic extension.
inline CompatReport check_compat_control(const QuasilinearPlant& plant, const TransformPair& pair, const StateField& phi,
                                         const DynamicExtension* ext = nullptr) {
  const int m = plant.negative();
  auto c = control_mismatch(plant, pair, phi);
  CompatReport r;
  r.extended = ext != nullptr;
  for (int q = 0; q < m; ++q) {
    double v = c.P[q], s = c.M[q];
    if (ext) {
      v -= ext->a0[q] + ext->b0[q];
      s += ext->d[q] * ext->a0[q] + ext->dt[q] * ext->b0[q];
    }
    r.value.push_back(std::abs(v));
    r.slope.push_back(std::abs(s));
    r.max_value = std::max(r.max_value, std::abs(v));
    r.max_slope = std::max(r.max_slope, std::abs(s));
  }
  return r;
}

}  // namespace bstep
