// Command-line laboratory for score-distillation unlearning on 2D Gaussian
// mixture teachers.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sfd/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"score forgetting distillation laboratory"};
  app.require_subcommand(1);

  // verify
  bool verify_json = false;
  std::uint64_t verify_seed = 0;
  CLI::App* verify = app.add_subcommand("verify", "self-check closed forms and gradients");
  verify->add_flag("--json", verify_json, "emit a JSON report on stdout");
  verify->add_option("--seed", verify_seed, "probe RNG seed");

  // common run/eval/pretrain options
  std::string config_path;
  std::vector<std::string> overrides;

  // pretrain
  std::string pretrain_out;
  bool pretrain_quiet = false;
  CLI::App* pretrain = app.add_subcommand("pretrain", "fit a teacher network by denoising regression");
  pretrain->add_option("-c,--config", config_path, "config file (INI)")->check(CLI::ExistingFile);
  pretrain->add_option("--set", overrides, "override, e.g. --set teacher.pretrain.steps=1000");
  pretrain->add_option("-o,--out", pretrain_out, "output network file");
  pretrain->add_flag("-q,--quiet", pretrain_quiet, "suppress progress output");

  // run
  sfd::cli::RunOptions run_opt;
  CLI::App* run = app.add_subcommand("run", "train a one-step generator with unlearning");
  run->add_option("-c,--config", run_opt.config_path, "config file (INI)")->check(CLI::ExistingFile);
  run->add_option("--set", run_opt.overrides, "override, e.g. --set train.steps=1000");
  run->add_option("--mode", run_opt.mode_flag, "joint | two-stage | kl | distill-only");
  run->add_option("--resume", run_opt.resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  run->add_flag("-q,--quiet", run_opt.quiet, "suppress progress output");

  // eval
  std::string eval_checkpoint;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("-c,--config", config_path, "config file (INI)")->check(CLI::ExistingFile);
  eval->add_option("--set", overrides, "config override");
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);

  // export-plots
  std::vector<std::string> plot_runs;
  std::string plot_out;
  CLI::App* plots = app.add_subcommand("export-plots", "export metric curves as CSV");
  plots->add_option("--run", plot_runs, "run directory (repeatable)")->required();
  plots->add_option("-o,--out", plot_out, "output directory (default: <run>/plots)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) {
      return sfd::cli::cmd_verify(verify_json, verify_seed);
    }
    if (*pretrain) {
      return sfd::cli::cmd_pretrain(config_path, overrides, pretrain_out, pretrain_quiet);
    }
    if (*run) {
      return sfd::cli::cmd_run(run_opt);
    }
    if (*eval) {
      return sfd::cli::cmd_eval(config_path, overrides, eval_checkpoint);
    }
    if (*plots) {
      return sfd::cli::cmd_export_plots(plot_runs, plot_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
