#pragma once

#include "profeat/eval.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace profeat::config {

using nlohmann::json;

/// Materializes every default, checks every key and alias, and returns the
/// fully resolved config. Resolution is total and idempotent: feeding the
/// result back in reproduces it exactly.
json resolve(const json& user);

json load_json_file(const std::string& path);

std::uint64_t config_hash(const json& resolved);

/// Everything the runner needs, decoded from a resolved config.
struct Experiment {
  json resolved;
  std::uint64_t hash = 0;

  std::string name;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string method;  // profeat | deacl | trades

  // data
  std::string data_kind;  // toy | cifar10 | cifar100
  data::ToySpec toy;
  int toy_test_per_class = 32;
  std::string cifar_dir;
  int val_total = 0;

  std::string teacher_checkpoint;  // reuse path, empty = train
  train::TrainConfig teacher;
  train::TrainConfig student;

  eval::LpConfig lp;
  int knn_k = 10;
  std::vector<std::string> probes;  // linear | mlp | knn
  int mlp_hidden = 32;
};

Experiment parse(const json& resolved_config);

/// AG1..AG5 / "ours" rows plus the raw mode names.
aug::PairingMode pairing_from_alias(const std::string& name);
/// AP1..AP7 / "ours" / "none" rows.
models::ProjectorConfig projector_from_alias(const std::string& name);
const std::vector<std::string>& pairing_alias_names();
const std::vector<std::string>& projector_alias_names();

/// Registered grid names (beta, lambda, components, projector, augmentations,
/// attack_loss, defense_loss, steps).
const std::vector<std::string>& grid_names();
/// Cell list for a registered or config-defined grid: (cell name, overrides).
std::vector<std::pair<std::string, json>> grid_cells(const json& resolved,
                                                     const std::string& grid);

}  // namespace profeat::config
