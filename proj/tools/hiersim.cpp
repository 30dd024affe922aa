// Command-line driver for the glacier experiments.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "hiersim/experiments.hpp"

int main(int argc, char** argv) {
  using namespace hiersim;

  std::string names;
  for (const auto& n : experiment_names()) names += (names.empty() ? "" : ", ") + n;

  CLI::App app{"Hierarchical spatio-temporal calibration experiments for the shallow-ice test glacier"};
  ExperimentSpec spec;
  bool use_emulator = false, use_solver = false;
  app.add_option("experiment", spec.name, "One of: " + names)->required();
  app.add_option("--config", spec.config_path, "Settings file (key = value); defaults if omitted");
  app.add_option("--out", spec.out_dir, "Output directory")->required();
  app.add_option("--seed", spec.seed, "Master random seed")->default_val(1);
  auto* emu = app.add_flag("--emulator", use_emulator, "Use the SVD emulator for simulator output");
  app.add_flag("--solver", use_solver, "Use the finite-difference solver for simulator output")->excludes(emu);
  app.add_option("--likelihood", spec.likelihood, "exact or approx")->check(CLI::IsMember({"exact", "approx"}));
  app.footer("Threads: set HIERSIM_THREADS (default: hardware concurrency).");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  bool known = false;
  for (const auto& n : experiment_names()) known = known || n == spec.name;
  if (!known) {
    std::cerr << "unknown experiment '" << spec.name << "'\n" << app.help();
    return 2;
  }
  if (use_emulator) spec.backend = "emulator";
  if (use_solver) spec.backend = "solver";

  const ExperimentOutcome outcome = run_experiment(spec, default_threads());
  if (outcome.status != 0) {
    std::cerr << "hiersim: " << spec.name << " failed during " << outcome.failed_stage << ": " << outcome.error
              << "\n";
    return 1;
  }
  std::cout << spec.name << " finished; outputs in " << spec.out_dir << "\n";
  return 0;
}
