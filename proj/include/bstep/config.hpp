#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bstep/error.hpp"
#include "bstep/expression.hpp"
#include "bstep/lyapunov.hpp"
#include "bstep/plant.hpp"
#include "bstep/simulator.hpp"

namespace bstep {

/// A parsed coefficient together with the key it came from.
struct Coefficient {
  std::string key;
  std::shared_ptr<const Expression> expr;

  explicit operator bool() const noexcept { return static_cast<bool>(expr); }
  const Expression& operator*() const { return *expr; }
};

struct ExperimentConfig {
  // system
  int n = 0;
  int m = 0;
  std::vector<Coefficient> lambda;  // n
  std::vector<Coefficient> sigma;   // n*n, linear form
  std::vector<Coefficient> q;       // (n-m)*m, linear form
  std::vector<Coefficient> a;       // n*n, quasilinear form
  std::vector<Coefficient> f;       // n
  std::vector<Coefficient> g;       // n-m
  std::vector<Coefficient> df;      // n*n
  std::vector<Coefficient> dg;      // (n-m)*m
  bool quasilinear = false;

  // discretization
  int grid_n = 200;
  double cfl_safety = kDefaultCfl;
  double t_final = 3.0;
  double output_dt = 0.1;
  double guard = 1.0;

  // design
  double lambda_design = 1.0;
  MuMode mu_mode = MuMode::AsWritten;
  PMode p_mode = PMode::Minus;
  bool extension = false;
  std::vector<double> ext_d;
  std::vector<double> ext_dt;
  double kernel_tol = 1e-10;
  int kernel_max_iter = 200;

  // initial data
  std::vector<Coefficient> initial;  // n, empty = 0
  bool initial_in_target = false;
  std::optional<double> initial_h2;

  // simulation
  SimMode mode = SimMode::Linear;
  LoopMode loop = LoopMode::Closed;
  bool mode_set = false;

  std::string output_dir = "out";
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// Raw key/value map, with the line each key came from.
inline std::map<std::string, std::string> read_pairs(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    std::size_t cut = line.size();
    for (std::size_t k = 0; k < line.size(); ++k) {
      if (line[k] == '"') quoted = !quoted;
      if (line[k] == '#' && !quoted) {
        cut = k;
        break;
      }
    }
    std::string body = trim(std::string_view(line).substr(0, cut));
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    else if (value.find('"') != std::string::npos) throw ConfigError(key, "unbalanced quotes");
    if (!kv.emplace(key, value).second) throw ConfigError(key, "duplicate key");
  }
  return kv;
}

class KeyReader {
 public:
  explicit KeyReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  std::optional<std::string> take(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }
  std::string require(const std::string& key) {
    auto v = take(key);
    if (!v) throw ConfigError(key, "missing required key");
    return *v;
  }
  double number(const std::string& key, double fallback) {
    auto v = take(key);
    return v ? parse_number(key, *v) : fallback;
  }
  int integer(const std::string& key, std::optional<int> fallback = std::nullopt) {
    auto v = fallback ? take(key) : std::optional<std::string>(require(key));
    if (!v) return *fallback;
    int out = 0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size()) throw ConfigError(key, "expected an integer, got '" + *v + "'");
    return out;
  }
  Coefficient expression(const std::string& key, bool required) {
    auto v = required ? std::optional<std::string>(require(key)) : take(key);
    if (!v) return {key, nullptr};
    try {
      return {key, std::make_shared<const Expression>(Expression::parse(*v))};
    } catch (const SyntaxError& e) {
      throw ConfigError(key, e.what());
    }
  }
  void finish() const {
    if (!kv_.empty()) throw ConfigError(kv_.begin()->first, "unknown key");
  }

  static double parse_number(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
};

inline void check_state_use(const Coefficient& c, int limit, const char* what) {
  if (c && c.expr->max_state_index() > limit)
    throw ConfigError(c.key, std::string("refers to a state beyond ") + what);
}

inline std::vector<double> number_list(KeyReader& r, const std::string& prefix, int count, double fallback) {
  std::vector<double> v;
  for (int k = 1; k <= count; ++k) v.push_back(r.number(prefix + "." + std::to_string(k), fallback));
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  using detail::check_state_use;
  detail::KeyReader r(detail::read_pairs(in));
  ExperimentConfig c;
  c.n = r.integer("system.n");
  c.m = r.integer("system.m");
  if (!(c.n > c.m)) throw ConfigError("system.m", "need n > m");
  if (!(c.m >= 1)) throw ConfigError("system.m", "need m >= 1");
  const int n = c.n, m = c.m;
  auto idx = [](std::string p, int i) { return p + "." + std::to_string(i + 1); };
  auto idx2 = [](std::string p, int i, int j) { return p + "." + std::to_string(i + 1) + "." + std::to_string(j + 1); };

  for (int i = 0; i < n; ++i) {
    c.lambda.push_back(r.expression(idx("system.lambda", i), true));
    check_state_use(c.lambda.back(), 0, "the speeds' reach (speeds depend on x only)");
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      c.sigma.push_back(r.expression(idx2("system.sigma", i, j), false));
      c.a.push_back(r.expression(idx2("system.a", i, j), false));
      c.df.push_back(r.expression(idx2("system.df", i, j), false));
      check_state_use(c.sigma.back(), 0, "the linear form");
      check_state_use(c.a.back(), n, "n");
      check_state_use(c.df.back(), 0, "u = 0");
      if (i == j && c.sigma.back()) throw ConfigError(c.sigma.back().key, "diagonal coupling must be absent");
    }
  for (int i = 0; i < n; ++i) {
    c.f.push_back(r.expression(idx("system.f", i), false));
    check_state_use(c.f.back(), n, "n");
  }
  for (int s = 0; s < n - m; ++s) {
    c.g.push_back(r.expression(idx("system.g", m + s), false));
    check_state_use(c.g.back(), m, "the incoming channels u1..um");
    for (int j = 0; j < m; ++j) {
      c.q.push_back(r.expression(idx2("system.q", s, j), false));
      c.dg.push_back(r.expression(idx2("system.dg", m + s, j), false));
      check_state_use(c.q.back(), 0, "the linear form");
      if (c.q.back() && c.q.back().expr->depends_on_x()) throw ConfigError(c.q.back().key, "must be a constant");
    }
  }
  auto any = [](const std::vector<Coefficient>& v) {
    for (const auto& e : v)
      if (e) return &e;
    return static_cast<const Coefficient*>(nullptr);
  };
  c.quasilinear = any(c.a) || any(c.f) || any(c.g);
  if (c.quasilinear) {
    if (auto s = any(c.sigma)) throw ConfigError(s->key, "conflicts with the quasilinear form (use system.f)");
    if (auto s = any(c.q)) throw ConfigError(s->key, "conflicts with the quasilinear form (use system.g)");
    for (int i = 0; i < n; ++i)
      if (!c.f[i]) throw ConfigError(idx("system.f", i), "missing required key");
    for (int s = 0; s < n - m; ++s)
      if (!c.g[s]) throw ConfigError(idx("system.g", m + s), "missing required key");
  } else {
    if (auto s = any(c.df)) throw ConfigError(s->key, "only meaningful with the quasilinear form");
    if (auto s = any(c.dg)) throw ConfigError(s->key, "only meaningful with the quasilinear form");
  }

  c.grid_n = r.integer("discretization.n", 200);
  if (c.grid_n < 16) throw ConfigError("discretization.n", "need N >= 16");
  c.cfl_safety = r.number("discretization.cfl_safety", kDefaultCfl);
  if (!(c.cfl_safety > 0.0 && c.cfl_safety <= 1.0)) throw ConfigError("discretization.cfl_safety", "must lie in (0, 1]");
  c.t_final = r.number("discretization.t_final", 3.0);
  if (!(c.t_final > 0.0)) throw ConfigError("discretization.t_final", "must be positive");
  c.output_dt = r.number("discretization.output_dt", 0.1);
  if (!(c.output_dt > 0.0)) throw ConfigError("discretization.output_dt", "must be positive");
  c.guard = r.number("discretization.guard", 1.0);
  if (!(c.guard > 0.0)) throw ConfigError("discretization.guard", "must be positive");

  c.lambda_design = r.number("design.lambda", 1.0);
  if (!(c.lambda_design > 0.0)) throw ConfigError("design.lambda", "must be positive");
  if (auto v = r.take("design.mu_mode")) {
    if (*v == "as_written") c.mu_mode = MuMode::AsWritten;
    else if (*v == "conservative") c.mu_mode = MuMode::Conservative;
    else throw ConfigError("design.mu_mode", "expected as_written or conservative");
  }
  if (auto v = r.take("design.p_mode")) {
    if (*v == "minus") c.p_mode = PMode::Minus;
    else if (*v == "plus") c.p_mode = PMode::Plus;
    else throw ConfigError("design.p_mode", "expected minus or plus");
  }
  if (auto v = r.take("design.extension")) {
    if (*v == "on") c.extension = true;
    else if (*v == "off") c.extension = false;
    else throw ConfigError("design.extension", "expected on or off");
  }
  c.ext_d = detail::number_list(r, "design.d", m, 1.0);
  c.ext_dt = detail::number_list(r, "design.dt", m, 2.0);
  for (int k = 0; k < m; ++k) {
    if (!(c.ext_d[k] > 0.0)) throw ConfigError(idx("design.d", k), "must be positive");
    if (!(c.ext_dt[k] > 0.0)) throw ConfigError(idx("design.dt", k), "must be positive");
    if (c.ext_d[k] == c.ext_dt[k]) throw ConfigError(idx("design.dt", k), "must differ from design.d");
  }
  c.kernel_tol = r.number("design.kernel_tol", 1e-10);
  if (!(c.kernel_tol > 0.0)) throw ConfigError("design.kernel_tol", "must be positive");
  c.kernel_max_iter = r.integer("design.kernel_max_iter", 200);
  if (c.kernel_max_iter < 1) throw ConfigError("design.kernel_max_iter", "must be at least 1");

  for (int i = 0; i < n; ++i) {
    c.initial.push_back(r.expression(idx("initial", i), false));
    check_state_use(c.initial.back(), 0, "initial data (functions of x only)");
  }
  if (auto v = r.take("initial.space")) {
    if (*v == "state") c.initial_in_target = false;
    else if (*v == "target") c.initial_in_target = true;
    else throw ConfigError("initial.space", "expected state or target");
  }
  if (auto v = r.take("initial.h2")) {
    c.initial_h2 = detail::KeyReader::parse_number("initial.h2", *v);
    if (!(*c.initial_h2 > 0.0)) throw ConfigError("initial.h2", "must be positive");
  }

  c.mode = c.quasilinear ? SimMode::Quasilinear : SimMode::Linear;
  if (auto v = r.take("simulation.mode")) {
    if (*v == "linear") c.mode = SimMode::Linear;
    else if (*v == "quasilinear") c.mode = SimMode::Quasilinear;
    else if (*v == "target") c.mode = SimMode::Target;
    else if (*v == "target-exact") c.mode = SimMode::TargetExact;
    else throw ConfigError("simulation.mode", "expected linear, quasilinear, target or target-exact");
    c.mode_set = true;
  }
  if (auto v = r.take("simulation.loop")) {
    if (*v == "open") c.loop = LoopMode::Open;
    else if (*v == "closed") c.loop = LoopMode::Closed;
    else throw ConfigError("simulation.loop", "expected open or closed");
  }
  if (auto v = r.take("output.dir")) c.output_dir = *v;
  r.finish();
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  return parse_config(in);
}

namespace detail {

/// Wraps an expression; constants fold to a captured value.
inline ScalarFn scalar_fn(const Coefficient& c) {
  if (!c.expr->depends_on_x()) {
    double v = c.expr->evaluate(0.0);
    return [v](double) { return v; };
  }
  return [e = c.expr](double x) { return e->evaluate(x); };
}

inline StateFn state_fn(const Coefficient& c) {
  if (!c) return {};
  return [e = c.expr](double x, std::span<const double> u) { return e->evaluate(x, u); };
}

template <class F>
auto evaluating(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const EvaluationError& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace detail

inline SpeedProfile make_speeds(const ExperimentConfig& c, const SpatialGrid& grid) {
  std::vector<ScalarFn> fns;
  for (const auto& l : c.lambda) fns.push_back(detail::scalar_fn(l));
  return detail::evaluating("system.lambda", [&] { return SpeedProfile(grid, c.m, std::move(fns)); });
}

inline LinearPlant make_linear_plant(const ExperimentConfig& c, const SpatialGrid& grid) {
  if (c.quasilinear) throw ConfigError("system", "the plant is quasilinear");
  const int n = c.n, m = c.m;
  std::vector<ScalarFn> sig(n * n);
  for (int k = 0; k < n * n; ++k)
    if (c.sigma[k]) sig[k] = detail::scalar_fn(c.sigma[k]);
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n - m, m);
  for (int s = 0; s < n - m; ++s)
    for (int j = 0; j < m; ++j) {
      const auto& e = c.q[s * m + j];
      if (e) Q(s, j) = detail::evaluating(e.key, [&] { return e.expr->evaluate(0.0); });
    }
  return detail::evaluating("system", [&] {
    return LinearPlant(make_speeds(c, grid), CouplingProfile(grid, n, std::move(sig)), std::move(Q));
  });
}

/// The quasilinear form; a_ii defaults to lambda_i and must agree with it at u = 0.
inline QuasilinearPlant make_quasilinear_plant(const ExperimentConfig& c, const SpatialGrid& grid) {
  if (!c.quasilinear) return QuasilinearPlant::from_linear(make_linear_plant(c, grid));
  const int n = c.n, m = c.m;
  QuasilinearPlant::Data d;
  d.n = n;
  d.m = m;
  d.a.resize(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) d.a[i * n + j] = detail::state_fn(c.a[i * n + j]);
  for (int i = 0; i < n; ++i) {
    if (!d.a[i * n + i]) {
      auto l = detail::scalar_fn(c.lambda[i]);
      d.a[i * n + i] = [l](double x, std::span<const double>) { return l(x); };
      continue;
    }
    const std::vector<double> zero(n, 0.0);
    for (int k = 0; k <= grid.cells(); ++k) {
      double x = grid.node(k);
      double diff = detail::evaluating(c.a[i * n + i].key, [&] {
        return std::abs(c.a[i * n + i].expr->evaluate(x, zero) - c.lambda[i].expr->evaluate(x));
      });
      if (diff > 1e-12) throw ConfigError(c.a[i * n + i].key, "disagrees with system.lambda." + std::to_string(i + 1) + " at u = 0");
    }
  }
  for (const auto& f : c.f) d.f.push_back(detail::state_fn(f));
  for (const auto& g : c.g) d.g.push_back(detail::state_fn(g));
  for (const auto& e : c.df) d.df.push_back(detail::state_fn(e));
  for (const auto& e : c.dg) d.dg.push_back(detail::state_fn(e));
  QuasilinearPlant plant(std::move(d));
  detail::evaluating("system", [&] {
    plant.validate(grid, 1e-9);
    return 0;
  });
  return plant;
}

/// Initial data at the nodes of the grid, in whichever space the config names.
inline StateField initial_field(const ExperimentConfig& c, const SpatialGrid& grid) {
  StateField s(grid, c.n);
  for (int i = 0; i < c.n; ++i) {
    if (!c.initial[i]) continue;
    for (int k = 0; k < grid.size(); ++k)
      s(i, k) = detail::evaluating(c.initial[i].key, [&] { return c.initial[i].expr->evaluate(grid.node(k)); });
  }
  return s;
}

}  // namespace bstep
