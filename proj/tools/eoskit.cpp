#include "eoskit/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace eoskit;

int main(int argc, char** argv) {
  CLI::App app{"eoskit: finite-width kernel equations of state, analytic two-layer solution and Langevin oracle"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out_dir, "output directory (overrides outputs.directory)");
  };
  auto* solve = app.add_subcommand("eos-solve", "solve the equations of state (with annealing)");
  add_common(solve);
  auto* analytic = app.add_subcommand("analytic", "two-layer CNN analytic solution over a list of C");
  add_common(analytic);
  auto* lang = app.add_subcommand("langevin", "noisy gradient descent equilibrium sampler");
  add_common(lang);

  std::string dir_a, dir_b, tol_file, report;
  auto* compare = app.add_subcommand("compare", "compare two result directories");
  compare->add_option("-a", dir_a, "predicted (theory) results")->required()->check(CLI::ExistingDirectory);
  compare->add_option("-b", dir_b, "empirical results")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--tol-file", tol_file, "relative tolerances (JSON)")->check(CLI::ExistingFile);
  compare->add_option("-o,--out", report, "write the CSV report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto load = [&] {
    cli::ExperimentConfig cfg = cli::load_config(config_path);
    if (!out_dir.empty()) cfg.outputs.directory = out_dir;
    return cfg;
  };
  return cli::run_guarded(
      [&] {
        if (solve->parsed()) {
          cli::cmd_eos_solve(load());
        } else if (analytic->parsed()) {
          cli::cmd_analytic(load(), std::cerr);
        } else if (lang->parsed()) {
          cli::cmd_langevin(load());
        } else if (compare->parsed()) {
          cli::Tolerances tol = cli::load_tolerances(tol_file);
          if (report.empty()) {
            cli::cmd_compare(dir_a, dir_b, tol, std::cout);
          } else {
            std::ofstream out(report, std::ios::trunc);
            if (!out) throw ConfigError("cannot open " + report);
            cli::cmd_compare(dir_a, dir_b, tol, out);
          }
        }
      },
      std::cerr);
}
