#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bstep/controller.hpp"
#include "bstep/error.hpp"
#include "bstep/kernel.hpp"
#include "bstep/lyapunov.hpp"
#include "bstep/plant.hpp"
#include "bstep/state.hpp"

namespace bstep {

inline constexpr double kDefaultCfl = 0.45;

inline double cfl_dt(double max_speed, const SpatialGrid& grid, double safety = kDefaultCfl) {
  if (!(max_speed > 0.0)) throw NumericalError("CFL step needs a positive speed bound");
  return safety * grid.spacing() / max_speed;
}

inline double cfl_dt(const SpeedProfile& sp, const SpatialGrid& grid, double safety = kDefaultCfl) {
  return cfl_dt(sp.max_speed(), grid, safety);
}

/// Largest |a_ii(x_k, u_k)| over the nodes of a state.
inline double quasilinear_speed_bound(const QuasilinearPlant& plant, const StateField& u) {
  double s = 0.0;
  for (int k = 0; k < u.grid().size(); ++k) {
    auto v = u.node(k);
    for (int i = 0; i < plant.channels(); ++i) s = std::max(s, std::abs(plant.a(i, i, u.grid().node(k), v)));
  }
  return s;
}

namespace detail {

inline void check_step(double dt, double speed, const SpatialGrid& g) {
  if (!(dt > 0.0)) throw NumericalError("time step must be positive");
  if (dt * speed > g.spacing() * (1.0 + 1e-12)) throw NumericalError("CFL condition violated");
}

inline void check_finite(const StateField& s) {
  if (!s.finite()) throw NumericalError("state is not finite at t = " + std::to_string(s.t));
}

/// Upwind difference of channel j at node k for transport speed sign.
inline double upwind(const std::vector<double>& u, int k, bool positive, int N, double h) {
  if (positive) return k > 0 ? (u[k] - u[k - 1]) / h : (u[1] - u[0]) / h;
  return k < N ? (u[k + 1] - u[k]) / h : (u[N] - u[N - 1]) / h;
}

}  // namespace detail

/// First-order upwind step of w_t + Lambda w_x = Sigma w with w_+(0) = Q w_-(0), w_-(1) = U.
inline StateField step_linear(const StateField& w, const LinearPlant& plant, std::span<const double> U, double dt) {
  const int n = plant.channels(), m = plant.negative(), N = w.grid().cells();
  const double h = w.grid().spacing();
  const auto& sp = plant.speeds();
  detail::check_step(dt, sp.max_speed(), w.grid());
  StateField out(w.grid(), n, w.t + dt);
  for (int k = 0; k <= N; ++k) {
    double x = w.grid().node(k);
    auto v = w.node(k);
    for (int i = 0; i < n; ++i) {
      double l = sp.sample(i, k);
      if ((i >= m && k == 0) || (i < m && k == N)) continue;
      double adv = l * detail::upwind(w.channel(i), k, l > 0.0, N, h);
      double src = plant.coupling().row(i, x, v);
      out(i, k) = w(i, k) - dt * adv + dt * src;
    }
  }
  for (int r = 0; r < m; ++r) out(r, N) = U[r];
  auto um = out.node(0);
  um.resize(m);
  for (int s = 0; s < n - m; ++s) out(m + s, 0) = reflect_row(plant.reflection(), s, um);
  detail::check_finite(out);
  return out;
}

/// Split upwind step of u_t + A(x,u) u_x = F(x,u) with u_+(0) = G(u_-(0)), u_-(1) = H.
inline StateField step_quasilinear(const StateField& u, const QuasilinearPlant& plant, std::span<const double> H,
                                   double dt, double guard = 1.0) {
  const int n = plant.channels(), m = plant.negative(), N = u.grid().cells();
  const double h = u.grid().spacing();
  if (u.sup() > guard) throw NumericalError("blow-up guard tripped: |u| > " + std::to_string(guard));
  detail::check_step(dt, quasilinear_speed_bound(plant, u), u.grid());
  StateField out(u.grid(), n, u.t + dt);
  std::vector<double> diag(n);
  for (int k = 0; k <= N; ++k) {
    double x = u.grid().node(k);
    auto v = u.node(k);
    for (int i = 0; i < n; ++i) {
      diag[i] = plant.a(i, i, x, v);
      if ((i < m) != (diag[i] < 0.0))
        throw NumericalError("speed " + std::to_string(i + 1) + " changed sign at x = " + std::to_string(x));
    }
    for (int i = 0; i < n; ++i) {
      if ((i >= m && k == 0) || (i < m && k == N)) continue;
      double adv = diag[i] * detail::upwind(u.channel(i), k, diag[i] > 0.0, N, h);
      for (int j = 0; j < n; ++j) {
        if (j == i || !plant.has_a(i, j)) continue;
        double aij = plant.a(i, j, x, v);
        if (aij == 0.0) continue;
        adv += aij * detail::upwind(u.channel(j), k, diag[j] > 0.0, N, h);
      }
      double src = plant.f(i, x, v);
      out(i, k) = u(i, k) - dt * adv + dt * src;
    }
  }
  for (int r = 0; r < m; ++r) out(r, N) = H[r];
  auto um = out.node(0);
  um.resize(m);
  for (int s = 0; s < n - m; ++s) out(m + s, 0) = plant.g(s, um);
  detail::check_finite(out);
  if (out.sup() > guard) throw NumericalError("blow-up guard tripped: |u| > " + std::to_string(guard));
  return out;
}

/// Upwind step of the target cascade gamma_t + Lambda gamma_x = G(x) gamma(t,0).
inline StateField step_target(const StateField& g, const SpeedProfile& sp, const TargetCoupling& G,
                              const Eigen::MatrixXd& Q, double dt) {
  const int n = sp.channels(), m = sp.negative(), N = g.grid().cells();
  const double h = g.grid().spacing();
  detail::check_step(dt, sp.max_speed(), g.grid());
  StateField out(g.grid(), n, g.t + dt);
  auto trace = g.node(0);
  for (int k = 0; k <= N; ++k)
    for (int i = 0; i < n; ++i) {
      if ((i >= m && k == 0) || (i < m && k == N)) continue;
      double l = sp.sample(i, k);
      double src = 0.0;
      for (int j = 0; j < m; ++j) src += G.at(i, j, k) * trace[j];
      out(i, k) = g(i, k) - dt * l * detail::upwind(g.channel(i), k, l > 0.0, N, h) + dt * src;
    }
  for (int r = 0; r < m; ++r) out(r, N) = 0.0;
  auto um = out.node(0);
  um.resize(m);
  for (int s = 0; s < n - m; ++s) out(m + s, 0) = reflect_row(Q, s, um);
  detail::check_finite(out);
  return out;
}

/// Travel-time coordinates phi_i(x) = int_0^x 1/|lambda_i| and the extinction times of the cascade.
class TravelTimes {
 public:
  explicit TravelTimes(const SpeedProfile& sp) : grid_(sp.grid()), m_(sp.negative()) {
    const int n = sp.channels();
    const double h = grid_.spacing();
    tau_.assign(n, std::vector<double>(grid_.size(), 0.0));
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int k = 1; k < grid_.size(); ++k) {
        double a = 1.0 / std::abs(sp(i, grid_.node(k - 1)));
        double b = 1.0 / std::abs(sp(i, grid_.node(k)));
        double c = 1.0 / std::abs(sp(i, 0.5 * (grid_.node(k - 1) + grid_.node(k))));
        acc += h / 6.0 * (a + 4.0 * c + b);
        tau_[i][k] = acc;
      }
    }
    double T = 0.0;
    for (int r = 0; r < m_; ++r) {
      T += total(r);
      extinction_.push_back(T);
    }
    double slowest = 0.0;
    for (int s = m_; s < n; ++s) slowest = std::max(slowest, total(s));
    t_final_ = T + slowest;
  }

  double operator()(int i, double x) const { return grid_.interpolate(tau_[i], x); }
  double total(int i) const { return tau_[i].back(); }
  /// x with phi_i(x) = y, y in [0, total(i)].
  double inverse(int i, double y) const {
    const auto& t = tau_[i];
    if (y <= 0.0) return 0.0;
    if (y >= t.back()) return 1.0;
    auto it = std::upper_bound(t.begin(), t.end(), y);
    int k = static_cast<int>(it - t.begin());
    double f = (y - t[k - 1]) / (t[k] - t[k - 1]);
    return grid_.node(k - 1) + f * grid_.spacing();
  }
  /// Time after which the trace gamma_r(t, 0) of a negative channel is zero.
  double extinction(int r) const { return extinction_[r]; }
  /// Comparisons absorb the rounding of the quadrature sums.
  bool extinct(int r, double t) const { return t >= extinction_[r] * (1.0 - kSnap); }
  bool finished(double t) const { return t >= t_final_ * (1.0 - kSnap); }
  /// t_F: every channel is zero afterwards.
  double finish() const noexcept { return t_final_; }

 private:
  static constexpr double kSnap = 1e-12;

  SpatialGrid grid_;
  int m_;
  std::vector<std::vector<double>> tau_;
  std::vector<double> extinction_;
  double t_final_ = 0.0;
};

inline double finite_time(const SpeedProfile& sp) { return TravelTimes(sp).finish(); }

/// Exact cascade solution by characteristics; sources along paths by trapezoid on fine substeps.
inline StateField simulate_target_exact(const StateField& g0, const SpeedProfile& sp, const TargetCoupling& G,
                                        const Eigen::MatrixXd& Q, double t) {
  const int n = sp.channels(), m = sp.negative(), N = g0.grid().cells();
  for (int p = 0; p <= N; ++p)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if ((j >= m || (i <= j && j < m)) && std::abs(G.at(i, j, p)) > 1e-8)
          throw NumericalError("target coupling lacks the cascade structure");
  TravelTimes tt(sp);
  // boundary traces beta_r(s) = gamma_r(s, 0), tabulated on [0, extinction(r)]
  const int sub = 4 * N;
  std::vector<double> ds(m);
  std::vector<std::vector<double>> beta(m);
  auto beta_at = [&](int r, double s) {
    if (tt.extinct(r, s) || s < 0.0) return 0.0;
    double pos = s / ds[r];
    int c = std::min(static_cast<int>(pos), static_cast<int>(beta[r].size()) - 2);
    double f = pos - c;
    return (1.0 - f) * beta[r][c] + f * beta[r][c + 1];
  };
  // integral of sum_j G_ij(x(s)) beta_j(s) along a characteristic of channel i
  auto source = [&](int i, double s0, double s1, auto&& position) {
    if (s1 <= s0) return 0.0;
    int steps = std::max(1, static_cast<int>(std::ceil((s1 - s0) / tt.finish() * sub)));
    double hs = (s1 - s0) / steps, acc = 0.0, prev = 0.0;
    for (int q = 0; q <= steps; ++q) {
      double s = s0 + q * hs;
      double x = position(s);
      double f = 0.0;
      for (int j = 0; j < std::min(i, m); ++j) {
        double b = beta_at(j, s);
        if (b != 0.0) f += G.eval(i, j, x) * b;
      }
      if (q > 0) acc += 0.5 * hs * (prev + f);
      prev = f;
    }
    return acc;
  };
  // negative channel r at (time, x)
  auto negative = [&](int r, double time, double x) {
    double y = tt(r, x);
    double reach = tt.total(r) - y;  // time since entering at x = 1
    double s0 = 0.0, start = 0.0;
    if (time < reach) {
      start = g0.eval(r, tt.inverse(r, y + time));
    } else {
      s0 = time - reach;
    }
    auto pos = [&](double s) { return tt.inverse(r, y + (time - s)); };
    return start + source(r, s0, time, pos);
  };
  for (int r = 0; r < m; ++r) {
    double T = tt.extinction(r);
    int L = std::max(2, static_cast<int>(std::ceil(T / tt.finish() * sub)));
    ds[r] = T / L;
    beta[r].assign(L + 1, 0.0);
    for (int l = 0; l < L; ++l) beta[r][l] = negative(r, l * ds[r], 0.0);
  }
  StateField out(g0.grid(), n, g0.t + t);
  if (tt.finished(t)) return out;
  for (int k = 0; k <= N; ++k) {
    double x = g0.grid().node(k);
    for (int r = 0; r < m; ++r) out(r, k) = tt.extinct(r, t) ? 0.0 : negative(r, t, x);
    for (int s = m; s < n; ++s) {
      double y = tt(s, x);
      double start, s0;
      if (t < y) {
        start = g0.eval(s, tt.inverse(s, y - t));
        s0 = 0.0;
      } else {
        s0 = t - y;
        start = 0.0;
        for (int j = 0; j < m; ++j) start += Q(s - m, j) * beta_at(j, s0);
      }
      auto pos = [&](double sv) { return tt.inverse(s, y - (t - sv)); };
      out(s, k) = start + source(s, s0, t, pos);
    }
  }
  return out;
}

enum class SimMode { Linear, Quasilinear, Target, TargetExact };
enum class LoopMode { Open, Closed };

struct NormRecord {
  double t = 0.0;
  double l2 = 0.0;
  double h1 = 0.0;
  double h2 = 0.0;
  double v0 = 0.0;
  double v1 = 0.0;  // H2 surrogate: V1 + V2D + V3D
  std::vector<double> trace;
};

struct ControlRecord {
  double t = 0.0;
  std::vector<double> control;
  std::vector<double> offset;
};

struct Trajectory {
  double dt = 0.0;
  std::vector<NormRecord> records;
  std::vector<ControlRecord> controls;
  std::vector<StateField> snapshots;
  bool aborted = false;
  std::string abort_reason;

  std::vector<double> times() const {
    std::vector<double> t;
    for (const auto& r : records) t.push_back(r.t);
    return t;
  }
  std::vector<double> column(double NormRecord::* f) const {
    std::vector<double> v;
    for (const auto& r : records) v.push_back(r.*f);
    return v;
  }
};

/// Everything a closed-loop run needs.
struct Design {
  LinearPlant linear;
  std::optional<QuasilinearPlant> quasilinear;
  ScalingProfile scaling;
  KernelField K;
  KernelField L;
  TargetCoupling G;
  LyapunovDesign lyap;
  TransformPair pair;
};

struct RunSettings {
  SimMode mode = SimMode::Linear;
  LoopMode loop = LoopMode::Closed;
  double t_final = 1.0;
  double output_dt = 0.1;
  double cfl_safety = kDefaultCfl;
  double guard = 1.0;
  std::optional<DynamicExtension> extension;
};

/// Steps the chosen model from `initial` (state for plant modes, gamma for target modes),
/// recording norms every step and snapshots every output interval.
inline Trajectory run_closed_loop(const Design& d, const StateField& initial, const RunSettings& s) {
  const int n = d.linear.channels(), m = d.linear.negative();
  const SpatialGrid& grid = d.linear.grid();
  const auto& sp = d.linear.speeds();
  if (!(initial.grid() == grid)) throw NumericalError("initial data lives on a different grid");
  if (s.mode == SimMode::Quasilinear && !d.quasilinear) throw ConfigError("system", "quasilinear mode needs a quasilinear plant");

  Trajectory tr;
  double speed = sp.max_speed();
  if (s.mode == SimMode::Quasilinear) speed = std::max(speed, quasilinear_speed_bound(*d.quasilinear, initial) * 1.05);
  const double dt = cfl_dt(speed, grid, s.cfl_safety);
  tr.dt = dt;
  const long steps = std::max(1L, std::lround(std::ceil(s.t_final / dt - 1e-9)));
  if (!(s.output_dt > 0.0)) throw ConfigError("discretization.output_dt", "must be positive");

  auto to_gamma = [&](const StateField& st) {
    switch (s.mode) {
      case SimMode::Linear:
        return forward_transform(d.K, st);
      case SimMode::Quasilinear: {
        StateField w = st;
        for (int i = 0; i < n; ++i)
          for (int k = 0; k < grid.size(); ++k) w(i, k) = d.scaling.sample(i, k) * st(i, k);
        return forward_transform(d.K, w);
      }
      default:
        return st;
    }
  };
  auto D = detail::d_table(d.lyap, sp, grid);
  std::vector<StateField> window;  // last three gammas
  auto record = [&](const StateField& st) {
    StateField g = to_gamma(st);
    NormRecord r;
    r.t = st.t;
    r.l2 = st.l2();
    r.h1 = st.h1();
    r.h2 = st.h2();
    r.v0 = detail::weighted_energy(D, g);
    r.trace.resize(m);
    for (int j = 0; j < m; ++j) r.trace[j] = g(j, 0);
    window.push_back(std::move(g));
    if (window.size() > 3) window.erase(window.begin());
    r.v1 = r.v0;
    if (window.size() == 3) {
      auto f = derivative_functionals(window, d.lyap, sp);
      r.v1 += f.v2[2] + f.v3[2];
      if (tr.records.size() == 2) {
        for (auto& old : tr.records) old.v1 = old.v0 + f.v2[2] + f.v3[2];
      }
    }
    tr.records.push_back(std::move(r));
  };

  StateField state = initial;
  state.t = 0.0;
  tr.snapshots.push_back(state);
  record(state);
  long next_output = 1;
  for (long k = 1; k <= steps; ++k) {
    std::vector<double> control(m, 0.0), offset(m, 0.0);
    try {
      switch (s.mode) {
        case SimMode::Linear:
          if (s.loop == LoopMode::Closed) control = linear_feedback(d.K, state);
          state = step_linear(state, d.linear, control, dt);
          break;
        case SimMode::Quasilinear: {
          if (s.loop == LoopMode::Closed) control = nonlinear_feedback(d.pair, d.scaling, state);
          if (s.extension) offset = extension_value(*s.extension, state.t);
          std::vector<double> H(m);
          for (int r = 0; r < m; ++r) H[r] = control[r] + offset[r];
          state = step_quasilinear(state, *d.quasilinear, H, dt, s.guard);
          break;
        }
        case SimMode::Target:
          state = step_target(state, sp, d.G, d.linear.reflection(), dt);
          break;
        case SimMode::TargetExact: {
          StateField g0 = tr.snapshots.front();
          state = simulate_target_exact(g0, sp, d.G, d.linear.reflection(), k * dt);
          state.t = k * dt;
          break;
        }
      }
    } catch (const NumericalError& e) {
      tr.aborted = true;
      tr.abort_reason = e.what();
      break;
    }
    state.t = k * dt;
    tr.controls.push_back({(k - 1) * dt, control, offset});
    record(state);
    // first step at or past each output time, plus the final state
    bool due = state.t >= next_output * s.output_dt - 1e-9 * dt;
    if (due) next_output = std::lround(std::floor(state.t / s.output_dt + 1e-9)) + 1;
    if (due || k == steps) tr.snapshots.push_back(state);
  }
  return tr;
}

}  // namespace bstep
