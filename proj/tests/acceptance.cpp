// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "bstep/commands.hpp"

using namespace bstep;
namespace fs = std::filesystem;

namespace {

std::string config(const char* name) { return std::string(BSTEP_CONFIG_DIR) + "/" + name; }

LinearPlant fixture_2x2(int N) {
  SpatialGrid g(N);
  Eigen::MatrixXd s(2, 2);
  s << 0, 0.5, 0.5, 0;
  Eigen::MatrixXd Q(1, 1);
  Q << 0.8;
  return LinearPlant(SpeedProfile::constant(g, 1, {-1, 1}), CouplingProfile::constant(g, s), Q);
}

LinearPlant fixture_3x3(int N) { return make_linear_plant(load_config(config("fixture_3x3.cfg")), SpatialGrid(N)); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

StateField difference(StateField a, const StateField& b) {
  for (int i = 0; i < a.channels(); ++i)
    for (int k = 0; k < a.grid().size(); ++k) a(i, k) -= b(i, k);
  return a;
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [miss]");
  }
};

std::string num(double v) { return format_number(v, 4); }

Outcome criterion_1() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> pde;
  double relation = 0.0, diagonal = 0.0;
  for (int N : {50, 100, 200}) {
    LinearPlant p = fixture_2x2(N);
    KernelField K = solve_kernel(p, TriangleGrid(p.grid()), default_artificial_data(p));
    auto r = kernel_residual(K, p);
    pde.push_back(r.pde_max_all);
    relation = std::max(relation, r.relation_max);
    diagonal = std::max(diagonal, r.diagonal_max);
  }
  double elapsed = seconds_since(t0);
  for (std::size_t k = 1; k < pde.size(); ++k) {
    double ratio = pde[k - 1] / pde[k];
    o.require(ratio >= 1.5 && ratio <= 3.0, "ratio " + num(ratio));
  }
  o.require(diagonal == 0.0, "diagonal residual " + num(diagonal));
  o.require(relation <= 1e-8, "relation residual " + num(relation));
  o.require(elapsed < 30.0, "runtime " + num(elapsed) + " s");
  return o;
}

double structure_violation(const TargetCoupling& G) {
  double worst = 0.0;
  for (int k = 0; k <= G.grid.cells(); ++k)
    for (int i = 0; i < G.n; ++i)
      for (int j = 0; j < G.n; ++j)
        if (j >= G.m || i <= j) worst = std::max(worst, std::abs(G.at(i, j, k)));
  return worst;
}

Outcome criterion_2() {
  Outcome o;
  for (auto [name, p] : {std::pair{"2x2", fixture_2x2(200)}, {"3x3", fixture_3x3(100)}}) {
    KernelField K = solve_kernel(p, TriangleGrid(p.grid()), default_artificial_data(p));
    double v = structure_violation(target_coupling(K, p));
    o.require(v <= 1e-8, std::string(name) + " max zero-pattern entry " + num(v));
  }
  return o;
}

Outcome criterion_3(const Design& d) {
  Outcome o;
  const double h = d.linear.grid().spacing();
  auto r = volterra_residuals(d.K, d.L);
  double bound = 10.0 * h * d.K.sup_norm() * d.L.sup_norm();
  o.require(r.forward <= bound, "volterra " + num(r.forward) + " <= " + num(bound));
  StateField w(d.linear.grid(), 2);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < w.grid().size(); ++k) w(i, k) = std::sin(M_PI * w.grid().node(k));
  double err = difference(inverse_transform(d.L, forward_transform(d.K, w)), w).l2();
  o.require(err <= 1e-3 * w.l2(), "roundtrip " + num(err / w.l2()) + " relative");
  return o;
}

Outcome criterion_4(const Design& d) {
  Outcome o;
  const SpatialGrid& g = d.linear.grid();
  StateField gamma0 = default_target_data(g, 2);
  StateField w0 = state_from_target(d, gamma0, false);
  RunSettings s;
  s.t_final = 3.0;
  Trajectory tr = run_closed_loop(d, w0, s);
  double worst = 0.0;
  for (const auto& r : tr.records)
    if (r.t >= 2.1) worst = std::max(worst, r.l2 / w0.l2());
  o.require(!tr.aborted && worst <= 1e-2, "max ||w||/||w0|| for t >= 2.1: " + num(worst));
  double exact = 0.0;
  for (double t : {2.0, 2.05, 2.5, 3.0})
    exact = std::max(exact, simulate_target_exact(gamma0, d.linear.speeds(), d.G, d.linear.reflection(), t).sup());
  o.require(exact == 0.0, "exact cascade sup for t >= 2: " + num(exact));
  return o;
}

Outcome criterion_5(const Design& d) {
  Outcome o;
  const double tF = finite_time(d.linear.speeds());
  RunSettings s;
  s.mode = SimMode::Target;
  s.t_final = tF;
  Trajectory tr = run_closed_loop(d, default_target_data(d.linear.grid(), 2), s);
  auto t = tr.times();
  auto V = tr.column(&NormRecord::v0);
  double excess = lyapunov_derivative_check(t, V, d.lyap.lambda);
  double band = 0.1 * d.lyap.lambda * V.front();
  o.require(excess <= band, "max(dV/dt + lambda V) " + num(excess) + " <= band " + num(band));
  auto fit = decay_rate_fit(t, V, 0.2 * tF, 0.9 * tF);
  o.require(fit.rate >= d.lyap.lambda - fit.residual, "fitted rate " + num(fit.rate) + " (residual " + num(fit.residual) + ")");
  return o;
}

Outcome criterion_6() {
  Outcome o;
  for (auto [name, p] : {std::pair{"2x2", fixture_2x2(100)}, {"3x3", fixture_3x3(100)}}) {
    KernelField K = solve_kernel(p, TriangleGrid(p.grid()), default_artificial_data(p));
    TargetCoupling G = target_coupling(K, p);
    for (double lambda : {0.5, 1.0, 2.0}) {
      auto d = select_parameters(lambda, p, G);
      o.require(d.certified(), std::string(name) + " lambda " + num(lambda) + " margins " + num(d.delta_margin) + "/" +
                                   num(d.b_margin) + "/" + num(d.sp_min_eigenvalue));
    }
  }
  return o;
}

struct QuasiRun {
  bool aborted = false;
  std::string reason;
  double rate = 0.0;
  double residual = 0.0;
};

QuasiRun quasi_run(const Design& d, const StateField& u0, double t_final, std::optional<DynamicExtension> ext) {
  RunSettings s;
  s.mode = SimMode::Quasilinear;
  s.t_final = t_final;
  s.extension = std::move(ext);
  Trajectory tr = run_closed_loop(d, u0, s);
  QuasiRun q;
  q.aborted = tr.aborted;
  q.reason = tr.abort_reason;
  if (tr.aborted) return q;
  const double tF = finite_time(d.linear.speeds());
  auto fit = decay_rate_fit(tr.times(), tr.column(&NormRecord::v1), 0.2 * tF, 0.9 * tF);
  q.rate = fit.rate;
  q.residual = fit.residual;
  return q;
}

Outcome criterion_7(const ExperimentConfig& c, const Design& d) {
  Outcome o;
  StateField u0 = detail::initial_for_mode(c, d, SimMode::Quasilinear);
  auto q = quasi_run(d, u0, c.t_final, std::nullopt);
  o.require(!q.aborted && q.rate >= 0.5 * d.lyap.lambda,
            "||phi||_H2 " + num(u0.h2()) + ", fitted H2-surrogate rate " + num(q.rate) + " >= " + num(0.5 * d.lyap.lambda));
  StateField big = scale_to_h2(u0, 0.3);
  auto neg = quasi_run(d, big, c.t_final, std::nullopt);
  o.detail << "; negative control at H2 0.3: "
           << (neg.aborted ? "aborted (" + neg.reason + ")" : "rate " + num(neg.rate)) << " (not asserted)";
  return o;
}

Outcome criterion_8(const ExperimentConfig& c, const Design& d) {
  Outcome o;
  const SpatialGrid& g = d.linear.grid();
  StateField phi(g, 2);
  for (int k = 0; k < g.size(); ++k) {
    double x = g.node(k);
    phi(0, k) = 0.3 + std::cos(2.0 * x) - 0.2 * x * x;
    phi(1, k) = 0.5 * x + std::sin(3.0 * x) + 0.4;
  }
  phi = scale_to_h2(phi, 1e-3);
  auto before = check_compat_control(*d.quasilinear, d.pair, phi);
  auto ext = extension_init(*d.quasilinear, d.pair, phi, {1.0}, {2.0});
  auto after = check_compat_control(*d.quasilinear, d.pair, phi, &ext);
  o.require(before.max_value > 1e-6, "mismatch without extension " + num(before.max_value));
  o.require(after.max_value <= 1e-12 && after.max_slope <= 1e-12,
            "residuals with extension " + num(after.max_value) + "/" + num(after.max_slope));
  auto q = quasi_run(d, phi, c.t_final, ext);
  o.require(!q.aborted && q.rate >= 0.5 * d.lyap.lambda, "closed loop with extension rate " + num(q.rate));
  return o;
}

Outcome criterion_9(const Design& d) {
  Outcome o;
  const SpatialGrid& g = d.linear.grid();
  QuasilinearPlant ql = QuasilinearPlant::from_linear(d.linear);
  StateField a = state_from_target(d, default_target_data(g, 2), false);
  StateField b = a;
  const double dt = cfl_dt(d.linear.speeds(), g);
  bool identical = true;
  for (int k = 0; k < 400 && identical; ++k) {
    auto U = linear_feedback(d.K, a);
    a = step_linear(a, d.linear, U, dt);
    b = step_quasilinear(b, ql, U, dt);
    for (int i = 0; i < 2; ++i)
      for (int n = 0; n < g.size(); ++n)
        if (a(i, n) != b(i, n)) identical = false;
  }
  o.require(identical, identical ? "steppers bitwise identical over 400 steps" : "steppers differ");

  StateField g0 = default_target_data(g, 2);
  StateField ex = simulate_target_exact(g0, d.linear.speeds(), d.G, d.linear.reflection(), 1.0);
  long steps = std::lround(std::ceil(1.0 / dt));
  StateField num_sol = g0;
  for (long k = 0; k < steps; ++k) num_sol = step_target(num_sol, d.linear.speeds(), d.G, d.linear.reflection(), 1.0 / steps);
  double diff = difference(ex, num_sol).l2();
  o.require(diff <= 5.0 * g.spacing(), "exact vs upwind L2 at t = 1: " + num(diff) + " <= " + num(5.0 * g.spacing()));
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome criterion_10() {
  Outcome o;
  fs::path root = fs::current_path() / "acceptance_determinism";
  fs::remove_all(root);
  std::vector<fs::path> dirs{root / "run1", root / "run2"};
  for (const auto& dir : dirs) {
    std::string cmd = std::string(BSTEP_CLI) + " check --config " + config("fixture_2x2.cfg") + " --out " + dir.string();
    int rc = std::system(cmd.c_str());
    o.require(rc == 0, "check exit status " + std::to_string(rc));
  }
  int files = 0;
  bool same = true;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    ++files;
    fs::path other = dirs[1] / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
      same = false;
      o.detail << "; differs: " << entry.path().filename().string();
    }
  }
  o.require(same && files > 0, std::to_string(files) + " artifacts byte-identical");
  return o;
}

}  // namespace

int main() {
  bool all = true;
  auto report = [&all](int id, const std::function<Outcome()>& run) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    all = all && o.pass;
    std::printf("CRITERION %d %s: %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", o.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, criterion_1);
  report(2, criterion_2);
  Design linear = build_design(fixture_2x2(200));
  report(3, [&] { return criterion_3(linear); });
  report(4, [&] { return criterion_4(linear); });
  report(5, [&] { return criterion_5(linear); });
  report(6, criterion_6);
  ExperimentConfig qc = load_config(config("quasilinear_2x2.cfg"));
  Design quasi = build_design(qc);
  report(7, [&] { return criterion_7(qc, quasi); });
  report(8, [&] { return criterion_8(qc, quasi); });
  report(9, [&] { return criterion_9(linear); });
  report(10, criterion_10);
  return all ? 0 : 1;
}
