#pragma once

#include "profeat/models.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

namespace profeat::train {

/// Model snapshot plus everything needed to resume or re-evaluate a run:
/// the build spec, parameter bytes, config snapshot, seed, epoch counter,
/// per-epoch metric records, and auxiliary tensors (optimizer momentum).
struct Checkpoint {
  models::ModelTriple model;
  nlohmann::json config_snapshot;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::vector<nlohmann::json> metric_history;
  std::map<std::string, Matrix> extra;
  bool collapsed = false;  // collapse detector fired during training
};

/// Binary container: magic + version, JSON header, raw little-endian doubles.
/// Loading re-checks magic and version and rebuilds the nets from the header.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace profeat::train
