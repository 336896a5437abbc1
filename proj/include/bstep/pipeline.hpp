#pragma once

#include <optional>
#include <vector>

#include "bstep/controller.hpp"
#include "bstep/kernel.hpp"
#include "bstep/lyapunov.hpp"
#include "bstep/plant.hpp"
#include "bstep/simulator.hpp"
#include "bstep/state.hpp"

namespace bstep {

struct DesignOptions {
  double lambda = 1.0;
  MuMode mu_mode = MuMode::AsWritten;
  PMode p_mode = PMode::Minus;
  KernelOptions kernel{};
};

namespace detail {

inline Design assemble(LinearPlant linear, std::optional<QuasilinearPlant> ql, ScalingProfile scaling,
                       const DesignOptions& opt) {
  TriangleGrid tg(linear.grid());
  KernelField K = solve_kernel(linear, tg, default_artificial_data(linear), opt.kernel);
  KernelField L = inverse_kernel(K);
  TargetCoupling G = target_coupling(K, linear);
  LyapunovDesign lyap = select_parameters(opt.lambda, linear, G, opt.mu_mode, opt.p_mode);
  TransformPair pair = make_transform_pair(K, L, scaling);
  return Design{std::move(linear), std::move(ql), std::move(scaling), std::move(K), std::move(L),
                std::move(G),      std::move(lyap), std::move(pair)};
}

}  // namespace detail

inline Design build_design(const LinearPlant& plant, const DesignOptions& opt = {}) {
  auto scaling = ScalingProfile::identity(plant.grid(), plant.channels(), plant.negative());
  return detail::assemble(plant, QuasilinearPlant::from_linear(plant), std::move(scaling), opt);
}

inline Design build_design(const QuasilinearPlant& plant, const SpatialGrid& grid, const DesignOptions& opt = {}) {
  auto scaling = diagonal_scaling(plant, grid);
  auto linear = linearize(plant, scaling);
  return detail::assemble(std::move(linear), plant, std::move(scaling), opt);
}

/// Plant-coordinate state whose target image is gamma: w = L[gamma], u = w / phi.
inline StateField state_from_target(const Design& d, const StateField& gamma, bool scaled) {
  StateField w = inverse_transform(d.L, gamma);
  if (scaled)
    for (int i = 0; i < w.channels(); ++i)
      for (int k = 0; k < w.grid().size(); ++k) w(i, k) /= d.scaling.sample(i, k);
  return w;
}

/// Rescales a state so that its H2 norm equals `target`.
inline StateField scale_to_h2(StateField u, double target) {
  double h = u.h2();
  if (!(h > 0.0)) throw NumericalError("cannot rescale a zero state");
  double c = target / h;
  for (int i = 0; i < u.channels(); ++i)
    for (double& v : u.channel(i)) v *= c;
  return u;
}

}  // namespace bstep
