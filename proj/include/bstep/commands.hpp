#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bstep/config.hpp"
#include "bstep/csv.hpp"
#include "bstep/error.hpp"
#include "bstep/pipeline.hpp"

namespace bstep {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;
inline constexpr int config = 2;
inline constexpr int numerical = 3;
inline constexpr int check_failed = 4;
}  // namespace exit_code

struct CommandOptions {
  std::string config;
  std::optional<std::string> out;
  std::optional<int> grid_n;
  std::optional<double> t_final;
  std::optional<std::string> mode;
  std::optional<std::string> loop;
  bool full_precision = false;
};

/// Config with command-line overrides applied.
inline ExperimentConfig resolve_config(const CommandOptions& o) {
  ExperimentConfig c = load_config(o.config);
  if (o.out) c.output_dir = *o.out;
  if (o.grid_n) {
    if (*o.grid_n < 16) throw ConfigError("--grid-n", "need N >= 16");
    c.grid_n = *o.grid_n;
  }
  if (o.t_final) {
    if (!(*o.t_final > 0.0)) throw ConfigError("--t-final", "must be positive");
    c.t_final = *o.t_final;
  }
  if (o.mode) {
    if (*o.mode == "linear") c.mode = SimMode::Linear;
    else if (*o.mode == "quasilinear") c.mode = SimMode::Quasilinear;
    else if (*o.mode == "target") c.mode = SimMode::Target;
    else if (*o.mode == "target-exact") c.mode = SimMode::TargetExact;
    else throw ConfigError("--mode", "expected linear, quasilinear, target or target-exact");
  }
  if (o.loop) {
    if (*o.loop == "open") c.loop = LoopMode::Open;
    else if (*o.loop == "closed") c.loop = LoopMode::Closed;
    else throw ConfigError("--loop", "expected open or closed");
  }
  return c;
}

inline DesignOptions design_options(const ExperimentConfig& c) {
  return DesignOptions{c.lambda_design, c.mu_mode, c.p_mode, KernelOptions{c.kernel_tol, c.kernel_max_iter}};
}

inline Design build_design(const ExperimentConfig& c) {
  SpatialGrid grid(c.grid_n);
  if (c.quasilinear) return build_design(make_quasilinear_plant(c, grid), grid, design_options(c));
  return build_design(make_linear_plant(c, grid), design_options(c));
}

/// sin(pi x)^4 bump in every channel with alternating weights; smooth and compatible at both corners.
inline StateField default_target_data(const SpatialGrid& grid, int n) {
  StateField g(grid, n);
  for (int i = 0; i < n; ++i) {
    double c = (i % 2 ? -0.5 : 1.0) / (1 + i / 2);
    for (int k = 0; k < grid.size(); ++k) g(i, k) = c * std::pow(std::sin(M_PI * grid.node(k)), 4);
  }
  return g;
}

namespace detail {

inline bool has_initial(const ExperimentConfig& c) {
  for (const auto& e : c.initial)
    if (e) return true;
  return false;
}

inline StateField scaled_state(const Design& d, const StateField& u) {
  StateField w = u;
  for (int i = 0; i < w.channels(); ++i)
    for (int k = 0; k < w.grid().size(); ++k) w(i, k) *= d.scaling.sample(i, k);
  return w;
}

/// Initial data for the configured mode: u for quasilinear, w for linear, gamma for target modes.
inline StateField initial_for_mode(const ExperimentConfig& c, const Design& d, SimMode mode) {
  const SpatialGrid& grid = d.linear.grid();
  const bool quasi = mode == SimMode::Quasilinear;
  bool in_target = c.initial_in_target;
  StateField given = has_initial(c) ? initial_field(c, grid) : default_target_data(grid, c.n);
  if (!has_initial(c)) in_target = true;
  StateField out;
  if (mode == SimMode::Target || mode == SimMode::TargetExact) {
    out = in_target ? given : forward_transform(d.K, c.quasilinear ? scaled_state(d, given) : given);
  } else {
    out = in_target ? state_from_target(d, given, quasi) : given;
  }
  if (c.initial_h2) out = scale_to_h2(std::move(out), *c.initial_h2);
  return out;
}

inline void write_manifest(const std::filesystem::path& dir, const std::string& command, const ExperimentConfig& c,
                           const std::vector<std::string>& files) {
  ReportWriter r(dir / "manifest.txt");
  r.put("tool", "bstep").put("version", "1.0.0").put("command", command);
  r.put("n", static_cast<double>(c.n)).put("m", static_cast<double>(c.m)).put("grid_n", static_cast<double>(c.grid_n));
  for (std::size_t k = 0; k < files.size(); ++k) r.put("file." + std::to_string(k + 1), files[k]);
}

}  // namespace detail

inline int cmd_solve_kernel(const ExperimentConfig& c, const CommandOptions& o, std::ostream& log) {
  SpatialGrid grid(c.grid_n);
  LinearPlant plant = c.quasilinear
                          ? linearize(make_quasilinear_plant(c, grid), diagonal_scaling(make_quasilinear_plant(c, grid), grid))
                          : make_linear_plant(c, grid);
  auto data = default_artificial_data(plant);
  auto compat = compatibility_check(data, plant);
  KernelField K = solve_kernel(plant, TriangleGrid(grid), data, KernelOptions{c.kernel_tol, c.kernel_max_iter});
  KernelField L = inverse_kernel(K);
  TargetCoupling G = target_coupling(K, plant);
  auto res = kernel_residual(K, plant);
  auto vr = volterra_residuals(K, L);

  std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  write_kernel(dir / "kernel.csv", K, o.full_precision);
  write_kernel(dir / "inverse_kernel.csv", L, o.full_precision);
  write_curves(dir / "curves.csv", K);
  write_coupling(dir / "coupling.csv", G);
  ReportWriter r(dir / "kernel_report.txt");
  r.put("iterations", static_cast<double>(K.iterations)).put("final_update", K.final_update);
  r.put("pde_residual_max", res.pde_max_all).put("diagonal_residual", res.diagonal_max);
  r.put("relation_residual", res.relation_max).put("excluded_nodes", static_cast<double>(res.excluded));
  r.put("compat_c0", compat.max_c0).put("compat_c1", compat.max_c1);
  r.put("coupling_M", G.M).put("coupling_structure", G.structure_residual);
  r.put("inverse_iterations", static_cast<double>(L.iterations));
  r.put("volterra_forward", vr.forward).put("volterra_reciprocal", vr.reciprocal);
  r.put("curves", static_cast<double>(K.curves.size()));
  detail::write_manifest(dir, "solve-kernel", c,
                         {"kernel.csv", "inverse_kernel.csv", "curves.csv", "coupling.csv", "kernel_report.txt"});
  log << "kernel converged in " << K.iterations << " sweeps; relation residual " << format_number(res.relation_max)
      << '\n';
  return exit_code::ok;
}

inline int cmd_design(const ExperimentConfig& c, std::ostream& log) {
  Design d = build_design(c);
  std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  write_design(dir / "design.txt", d.lyap);
  detail::write_manifest(dir, "design", c, {"design.txt"});
  if (d.lyap.p_fallback) log << "warning: p_mode minus needs n - m = m; used plus\n";
  if (!d.lyap.certified()) {
    log << "design certificate failed\n";
    return exit_code::check_failed;
  }
  return exit_code::ok;
}

inline int cmd_simulate(const ExperimentConfig& c, std::ostream& log) {
  Design d = build_design(c);
  RunSettings s;
  s.mode = c.mode;
  s.loop = c.loop;
  s.t_final = c.t_final;
  s.output_dt = c.output_dt;
  s.cfl_safety = c.cfl_safety;
  s.guard = c.guard;
  StateField init = detail::initial_for_mode(c, d, c.mode);
  if (c.mode == SimMode::Quasilinear) {
    auto origin = check_compat_origin(*d.quasilinear, init);
    if (origin.max_value > 1e-9 || origin.max_slope > 1e-6)
      log << "warning: initial data violates the x = 0 corner relations by " << format_number(origin.max_value)
          << " / " << format_number(origin.max_slope) << '\n';
    if (c.extension) s.extension = extension_init(*d.quasilinear, d.pair, init, c.ext_d, c.ext_dt);
  }
  Trajectory tr = run_closed_loop(d, init, s);
  std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  write_trajectory(dir / "trajectory.csv", tr, c.m);
  write_snapshots(dir / "snapshots.csv", tr, c.n);
  write_controls(dir / "controls.csv", tr, c.m);
  detail::write_manifest(dir, "simulate", c, {"trajectory.csv", "snapshots.csv", "controls.csv"});
  if (tr.aborted) {
    log << "simulation aborted at t = " << format_number(tr.records.back().t) << ": " << tr.abort_reason << '\n';
    return exit_code::numerical;
  }
  return exit_code::ok;
}

struct CheckItem {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  bool pass = false;
};

/// Every invariant suite on the configured plant (linearized when quasilinear).
inline std::vector<CheckItem> run_checks(const ExperimentConfig& c, const Design& d, Trajectory* target_out = nullptr) {
  std::vector<CheckItem> items;
  auto below = [&](std::string name, double v, double lim) { items.push_back({std::move(name), v, lim, v <= lim}); };
  auto above = [&](std::string name, double v, double lim) { items.push_back({std::move(name), v, lim, v >= lim}); };
  const SpatialGrid& grid = d.linear.grid();
  const double h = grid.spacing();

  auto res = kernel_residual(d.K, d.linear);
  auto compat = compatibility_check(default_artificial_data(d.linear), d.linear);
  below("kernel.converged", d.K.final_update, c.kernel_tol);
  below("kernel.diagonal", res.diagonal_max, 1e-12);
  below("kernel.relation", res.relation_max, 1e-8);
  below("kernel.compat_c0", compat.max_c0, 1e-9);
  below("coupling.structure", d.G.structure_residual, 1e-8);

  auto vr = volterra_residuals(d.K, d.L);
  below("inverse.volterra", vr.forward, 10.0 * h * d.K.sup_norm() * d.L.sup_norm());
  StateField w(grid, c.n);
  for (int i = 0; i < c.n; ++i)
    for (int k = 0; k < grid.size(); ++k) w(i, k) = std::sin(M_PI * grid.node(k));
  StateField back = inverse_transform(d.L, forward_transform(d.K, w));
  for (int i = 0; i < c.n; ++i)
    for (int k = 0; k < grid.size(); ++k) back(i, k) -= w(i, k);
  below("inverse.roundtrip", back.l2(), 1e-3 * w.l2());

  above("design.margin.delta", d.lyap.delta_margin, 0.0);
  above("design.margin.b", d.lyap.b_margin, 0.0);
  above("design.margin.gershgorin", d.lyap.gershgorin_margin, 0.0);
  above("design.margin.sp_min_eigenvalue", d.lyap.sp_min_eigenvalue, 0.0);

  const double tF = finite_time(d.linear.speeds());
  StateField g0 = default_target_data(grid, c.n);
  RunSettings s;
  s.mode = SimMode::Target;
  s.t_final = tF;
  s.output_dt = c.output_dt;
  s.cfl_safety = c.cfl_safety;
  Trajectory tr = run_closed_loop(d, g0, s);
  auto T = tr.times();
  auto V = tr.column(&NormRecord::v0);
  below("lyapunov.derivative", lyapunov_derivative_check(T, V, d.lyap.lambda), 0.1 * d.lyap.lambda * V.front());
  auto fit = decay_rate_fit(T, V, 0.2 * tF, 0.9 * tF);
  above("lyapunov.decay_rate", fit.rate, d.lyap.lambda - fit.residual);
  StateField ex = simulate_target_exact(g0, d.linear.speeds(), d.G, d.linear.reflection(), tF);
  below("target.exact_vanishing", ex.sup(), 0.0);

  RunSettings cl;
  cl.mode = SimMode::Linear;
  cl.t_final = tF + 0.1;
  cl.output_dt = c.output_dt;
  cl.cfl_safety = c.cfl_safety;
  StateField w0 = state_from_target(d, g0, false);
  Trajectory ctr = run_closed_loop(d, w0, cl);
  below("closed_loop.vanishing", ctr.aborted ? INFINITY : ctr.records.back().l2, 1e-2 * w0.l2());

  if (target_out) *target_out = std::move(tr);
  return items;
}

inline int cmd_check(const ExperimentConfig& c, std::ostream& log) {
  Design d = build_design(c);
  Trajectory tr;
  auto items = run_checks(c, d, &tr);
  std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  bool ok = true;
  {
    std::ofstream out(dir / "check_report.txt", std::ios::binary);
    for (const auto& it : items) {
      out << it.name << ' ' << format_number(it.value) << ' ' << format_number(it.limit) << ' '
          << (it.pass ? "PASS" : "FAIL") << '\n';
      if (!it.pass) {
        ok = false;
        log << "check failed: " << it.name << " = " << format_number(it.value) << " (limit " << format_number(it.limit)
            << ")\n";
      }
    }
  }
  write_design(dir / "design.txt", d.lyap);
  write_coupling(dir / "coupling.csv", d.G);
  write_trajectory(dir / "trajectory.csv", tr, c.m);
  detail::write_manifest(dir, "check", c, {"check_report.txt", "design.txt", "coupling.csv", "trajectory.csv"});
  return ok ? exit_code::ok : exit_code::check_failed;
}

/// Runs one subcommand, mapping failures to exit codes; diagnostics go to `log`.
inline int run_command(const std::string& sub, const CommandOptions& o, std::ostream& log) {
  try {
    ExperimentConfig c = resolve_config(o);
    if (sub == "solve-kernel") return cmd_solve_kernel(c, o, log);
    if (sub == "design") return cmd_design(c, log);
    if (sub == "simulate") return cmd_simulate(c, log);
    if (sub == "check") return cmd_check(c, log);
    log << "unknown subcommand '" << sub << "'\n";
    return exit_code::usage;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const PlantError& e) {
    log << "plant error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const SyntaxError& e) {
    log << "syntax error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const Error& e) {
    log << "numerical failure: " << e.what() << '\n';
    return exit_code::numerical;
  }
}

}  // namespace bstep
