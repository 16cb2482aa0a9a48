#include <iostream>

#include <CLI11.hpp>

#include "snf/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Sylvester normalizing flows: property checks, target fits, toy VAE"};
  app.require_subcommand(1);

  snf::CliOptions opt;

  CLI::App* check = app.add_subcommand("check", "Run seeded property-check suites");
  check->add_option("--suite", opt.suite, "all|logdet|inverse|ortho|made|grad")
      ->capture_default_str();
  check->add_option("--dims", opt.dims, "Largest ambient dimension in the grid")
      ->capture_default_str();
  check->add_option("--seed", opt.seed, "RNG seed");
  check->add_option("--out", opt.out_dir, "Directory for report.json (stdout always)");
  check->add_flag("--force", opt.force, "Overwrite existing outputs");

  CLI::App* fit = app.add_subcommand("fit-target", "Fit a flow posterior to an analytic target");
  fit->add_option("--config", opt.config_path, "JSON experiment config");
  fit->add_option("--out", opt.out_dir, "Directory for trace.csv and params.json");
  fit->add_option("--seed", opt.seed, "Override the config seed");
  fit->add_flag("--force", opt.force, "Overwrite existing outputs");

  CLI::App* vae = app.add_subcommand("train-vae", "Train the toy VAE on synthetic bars");
  vae->add_option("--config", opt.config_path, "JSON experiment config");
  vae->add_option("--out", opt.out_dir, "Directory for trace.csv, model.json, nll.json");
  vae->add_option("--seed", opt.seed, "Override the config seed");
  vae->add_option("--importance-samples", opt.importance_samples,
                  "Override the importance-sample count for the NLL estimate");
  vae->add_flag("--force", opt.force, "Overwrite existing outputs");

  CLI::App* params = app.add_subcommand("params", "Parameter accounting per flow variant");
  params->add_option("--config", opt.config_path, "JSON experiment config");
  params->add_option("--seed", opt.seed, "Override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? snf::kExitOk : snf::kExitConfigError;
  }

  CLI::App* sub = app.get_subcommands().front();
  opt.command = sub->get_name();
  opt.seed_set = sub->count("--seed") > 0;
  return snf::run_cli(opt, std::cout, std::cerr);
}
