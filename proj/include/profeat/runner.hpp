#pragma once

#include "profeat/config.hpp"

#include <optional>
#include <string>
#include <vector>

namespace profeat::runner {

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool dry_run = false;
  bool resume = false;
  bool quiet = false;
};

/// Train/val/test fixture for an experiment's data section.
struct DataBundle {
  data::LabeledDataset train;
  data::LabeledDataset val;
  data::LabeledDataset test;
};
DataBundle build_datasets(const config::Experiment& e);

/// Full pipeline: teacher pretrain (or checkpoint reuse), distillation (or
/// TRADES), evaluation, artifact persistence. Idempotent: finished stages are
/// loaded from their artifacts instead of re-run.
int run(const nlohmann::json& user_config, const RunOptions& opts);
int run_file(const std::string& config_path, const RunOptions& opts);

/// Teacher-only stage (the `pretrain` verb).
int pretrain(const nlohmann::json& user_config, const RunOptions& opts);

/// Evaluation-only stage from existing checkpoints (the `eval` verb).
int evaluate(const nlohmann::json& user_config, const RunOptions& opts);

/// Runs every cell of a registered or config-defined grid with a shared
/// teacher and seed, consolidating results into <out>/<grid>/grid.csv.
int run_grid(const nlohmann::json& user_config, const std::string& grid_name,
             const RunOptions& opts);

/// Aligned comparison table across finished run directories.
int report(const std::vector<std::string>& run_dirs, const std::string& csv_out,
           bool quiet = false);

}  // namespace profeat::runner
