#include <cstdio>
#include <functional>
#include <string>

#include "CLI11.hpp"

#include "crivet/errors.hpp"
#include "crivet/pipeline.hpp"

namespace {

// Exit codes: 0 success, 1 I/O, 2 validation, 3 numerical failure.
int dispatch(const std::function<void()>& command) {
  try {
    command();
    return 0;
  } catch (const crivet::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 1;
  } catch (const crivet::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const crivet::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"competing-risks hospital outcome pipeline"};
  app.require_subcommand(1);

  std::string config_path, input, out_dir, preset, spec_path;
  std::uint64_t seed = 0;
  int bootstrap = -1;
  bool have_seed = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration JSON");
    cmd->add_option("--input", input, "input file (overrides config)");
    cmd->add_option("--out", out_dir, "output directory (overrides config)");
    cmd->add_option("--seed", seed, "RNG seed (overrides config)")
        ->each([&have_seed](const std::string&) { have_seed = true; });
    cmd->add_option("--bootstrap", bootstrap, "bootstrap replicates (overrides config)");
    cmd->add_option("--preset", preset, "regression preset: month | vaccination");
  };

  CLI::App* cmd_preprocess = app.add_subcommand("preprocess", "derive the analysis table");
  CLI::App* cmd_cif = app.add_subcommand("cif", "grouped cumulative incidence tables");
  CLI::App* cmd_fit = app.add_subcommand("fit", "stratified Fine-Gray regression");
  CLI::App* cmd_sens = app.add_subcommand("sensitivity", "epidemic-phase-bias shifts");
  CLI::App* cmd_sim = app.add_subcommand("simulate", "generate a synthetic cohort");
  for (CLI::App* cmd : {cmd_preprocess, cmd_cif, cmd_fit, cmd_sens, cmd_sim}) {
    add_common(cmd);
  }
  cmd_sim->add_option("--spec", spec_path, "cohort spec JSON")->required();

  CLI11_PARSE(app, argc, argv);

  return dispatch([&] {
    crivet::RunConfig cfg;
    if (!config_path.empty()) cfg = crivet::run_config_from_json_file(config_path);
    if (!input.empty()) cfg.input = input;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (have_seed) cfg.seed = seed;
    if (bootstrap >= 0) cfg.bootstrap_b = bootstrap;
    if (!preset.empty()) cfg.preset = preset;

    if (app.got_subcommand(cmd_preprocess)) {
      crivet::run_preprocess(cfg);
    } else if (app.got_subcommand(cmd_cif)) {
      crivet::run_cif(cfg);
    } else if (app.got_subcommand(cmd_fit)) {
      crivet::run_fit(cfg);
    } else if (app.got_subcommand(cmd_sens)) {
      crivet::run_sensitivity_cmd(cfg);
    } else if (app.got_subcommand(cmd_sim)) {
      crivet::run_simulate(cfg, spec_path);
    }
  });
}
