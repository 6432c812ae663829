#include <iostream>

#include <CLI11.hpp>

#include "intocp/cli.hpp"

namespace cli = intocp::cli;

int main(int argc, char** argv) {
  CLI::App app{"Runs one integral-equation control task from a JSON config"};
  std::string config;
  cli::Overrides o;
  std::string preset, command, out;
  int grid_n = 0;
  std::uint64_t seed = 0;
  bool list = false;
  app.add_option("--config", config, "JSON run configuration");
  auto* p = app.add_option("--preset", preset, "problem preset (overrides problem.preset)");
  auto* c = app.add_option("--command", command, "one of: solve, optimize, grad-check, second-variation-check, "
                                                 "sufficiency-check, lqc-solve, bilinear-solve");
  auto* n = app.add_option("--grid-n", grid_n, "grid resolution (overrides grid.N)");
  auto* d = app.add_option("--out", out, "output directory (overrides output)");
  auto* s = app.add_option("--seed", seed, "seed for random probe directions (overrides seed)");
  app.add_flag("--list-presets", list, "print the preset names and exit");
  CLI11_PARSE(app, argc, argv);

  if (list) {
    for (const auto& e : intocp::presets::catalog()) std::cout << e.name << "  " << e.summary << '\n';
    for (const auto& name : intocp::lqc::preset_names()) std::cout << name << '\n';
    for (const auto& name : intocp::bilinear_control::preset_names()) std::cout << name << '\n';
    return 0;
  }

  if (*p) o.preset = preset;
  if (*c) o.command = command;
  if (*n) o.N = grid_n;
  if (*d) o.out = out;
  if (*s) o.seed = seed;

  cli::RunConfig rc;
  try {
    if (!config.empty()) rc = cli::load_config(config);
  } catch (const intocp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return static_cast<int>(cli::Exit::config_error);
  }
  cli::apply(o, rc);
  return cli::execute(rc, std::cout, std::cerr);
}
