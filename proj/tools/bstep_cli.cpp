#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bstep/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Boundary stabilization of hyperbolic systems: kernel solver, design and simulation"};
  app.require_subcommand(1);
  bstep::CommandOptions opt;

  auto common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory (overrides output.dir)");
    sub->add_option("--grid-n", opt.grid_n, "number of grid cells");
    sub->add_option("--t-final", opt.t_final, "final simulation time");
  };
  auto* solve = app.add_subcommand("solve-kernel", "solve the kernel equations and write kernel, coupling and residuals");
  common(solve);
  solve->add_flag("--full-precision", opt.full_precision, "write kernel values with round-trip precision");
  auto* design = app.add_subcommand("design", "select Lyapunov parameters and write the design report");
  common(design);
  auto* sim = app.add_subcommand("simulate", "simulate the plant or the target system");
  common(sim);
  sim->add_option("--mode", opt.mode, "linear | quasilinear | target | target-exact")
      ->check(CLI::IsMember({"linear", "quasilinear", "target", "target-exact"}));
  sim->add_option("--loop", opt.loop, "open | closed")->check(CLI::IsMember({"open", "closed"}));
  auto* check = app.add_subcommand("check", "run every invariant suite; exit 0 iff all pass");
  common(check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : bstep::exit_code::usage;
  }
  return bstep::run_command(app.get_subcommands().front()->get_name(), opt, std::cerr);
}
