#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gvi/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Variational integrators on Lie groupoids"};
  app.require_subcommand(1, 1);
  std::string config, out;
  for (const auto& name : gvi::cli::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory")->required();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : gvi::cli::kConfigError;
  }
  return gvi::cli::run(app.get_subcommands().front()->get_name(), config, out);
}
