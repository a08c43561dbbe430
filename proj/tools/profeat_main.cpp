#include "profeat/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool dry_run = false;
  bool resume = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "override the global seed");
  cmd->add_option("--out", args.out, "override the output directory");
  cmd->add_flag("--dry-run", args.dry_run,
                "print the fully resolved config and exit");
  cmd->add_flag("--resume", args.resume,
                "resume a partial run from its last per-epoch checkpoint");
}

profeat::runner::RunOptions to_options(const CommonArgs& args) {
  profeat::runner::RunOptions opts;
  opts.seed = args.seed;
  opts.out_dir = args.out;
  opts.dry_run = args.dry_run;
  opts.resume = args.resume;
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "profeat: projected-feature adversarial self-supervised distillation"};
  app.require_subcommand(1);

  CommonArgs pretrain_args, distill_args, eval_args, grid_args;
  std::string grid_name;
  std::vector<std::string> report_dirs;
  std::string report_csv;

  CLI::App* cmd_pretrain =
      app.add_subcommand("pretrain", "train the SSL teacher only");
  add_common(cmd_pretrain, pretrain_args);

  CLI::App* cmd_distill = app.add_subcommand(
      "distill", "full pipeline: teacher (or checkpoint), distillation, eval");
  add_common(cmd_distill, distill_args);

  CLI::App* cmd_eval =
      app.add_subcommand("eval", "re-run evaluation from existing checkpoints");
  add_common(cmd_eval, eval_args);

  CLI::App* cmd_grid =
      app.add_subcommand("grid", "run an ablation grid with a shared teacher");
  add_common(cmd_grid, grid_args);
  cmd_grid->add_option("--grid", grid_name, "registered or config-defined grid")
      ->required();

  CLI::App* cmd_report =
      app.add_subcommand("report", "comparison table across finished runs");
  cmd_report->add_option("dirs", report_dirs, "run directories")->required();
  cmd_report->add_option("--csv", report_csv, "also write the table as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_pretrain->parsed())
      return profeat::runner::pretrain(
          profeat::config::load_json_file(pretrain_args.config),
          to_options(pretrain_args));
    if (cmd_distill->parsed())
      return profeat::runner::run(
          profeat::config::load_json_file(distill_args.config),
          to_options(distill_args));
    if (cmd_eval->parsed())
      return profeat::runner::evaluate(
          profeat::config::load_json_file(eval_args.config),
          to_options(eval_args));
    if (cmd_grid->parsed())
      return profeat::runner::run_grid(
          profeat::config::load_json_file(grid_args.config), grid_name,
          to_options(grid_args));
    if (cmd_report->parsed())
      return profeat::runner::report(report_dirs, report_csv);
  } catch (const profeat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
