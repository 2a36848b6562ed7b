// hetmed: heterogeneous mediation analysis from the command line.

#include "hetmed/cli_io.hpp"
#include "hetmed/errors.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

namespace {

struct Flags {
  std::string config;
  std::map<std::string, std::string> values;
  bool standardize = false;
  bool bonferroni = false;
};

// Registers the flags shared by every subcommand. Values are stored as
// config pairs and applied after the config file, so the command line wins.
void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "flat key = value configuration file");
  const std::vector<std::pair<std::string, std::string>> opts = {
      {"input", "CSV dataset"},
      {"method", "auto, ols or genlasso"},
      {"level", "confidence level"},
      {"B", "number of sample splits"},
      {"seed", "random seed"},
      {"out-dir", "output directory"},
      {"treatment", "treatment column"},
      {"mediator", "mediator column"},
      {"outcome", "outcome column"},
      {"treated-level", "treatment value coded as the intervention arm"},
      {"covariates", "comma-separated covariate columns (default: all others)"},
      {"ignore", "comma-separated columns to drop"},
      {"t", "arm at which effects are evaluated (treated or control)"},
      {"arm", "restrict output rows to one arm (treated, control, all)"},
      {"inference", "auto, wald, split or none"},
      {"theta", "reuse a theta.json instead of refitting"},
      {"effects", "reuse an effects.csv (subgroups)"},
  };
  for (const auto& [name, help] : opts) sub->add_option("--" + name, f.values[name], help);
  sub->add_flag("--standardize", f.standardize, "standardize continuous covariates");
  sub->add_flag("--bonferroni", f.bonferroni, "Bonferroni-adjust subgroup intervals");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous causal mediation analysis"};
  app.require_subcommand(1);
  Flags flags;
  std::map<std::string, std::vector<std::filesystem::path> (*)(const hetmed::RunConfig&)> commands = {
      {"fit", hetmed::cmd_fit},
      {"effects", hetmed::cmd_effects},
      {"subgroups", hetmed::cmd_subgroups},
      {"simulate", hetmed::cmd_simulate},
      {"split-infer", hetmed::cmd_split_infer},
  };
  const std::map<std::string, std::string> descriptions = {
      {"fit", "fit both structural equations, write theta.json and fit.json"},
      {"effects", "per-unit cAIE/cADE with intervals, write effects.csv"},
      {"subgroups", "profile units with significant cAIE, write subgroups.csv/json"},
      {"simulate", "run the simulation study, write sim_report.json/csv"},
      {"split-infer", "multiple sample splitting, write split_effects.csv"},
  };
  for (const auto& [name, desc] : descriptions) add_common(app.add_subcommand(name, desc), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    hetmed::RunConfig cfg;
    if (!flags.config.empty()) hetmed::apply_config_file(cfg, flags.config);
    for (const auto& [key, value] : flags.values) {
      if (!value.empty()) hetmed::apply_config_value(cfg, key, value);
    }
    if (flags.standardize) cfg.standardize = true;
    if (flags.bonferroni) cfg.bonferroni = true;
    for (const auto& path : commands.at(name)(cfg)) std::cout << path.string() << '\n';
    return 0;
  } catch (const hetmed::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hetmed::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
