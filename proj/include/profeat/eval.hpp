#pragma once

#include "profeat/training.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <optional>

namespace profeat::eval {

using data::LabeledDataset;

struct CollapseMetrics {
  double mean_row_norm = 0.0;
  double effective_rank = 0.0;
  bool flagged = false;
};

/// Mean l2 row norm and exp(entropy of normalized singular values); flags
/// when the effective rank drops below 1.05 or the norms vanish.
CollapseMetrics collapse_metrics(const Matrix& reps);

struct Alignment {
  double cos_feature = 0.0;
  std::optional<double> cos_projector;
};

/// Dataset-mean row-wise cosine between teacher and student representations
/// on unaugmented inputs, at the feature space and (when both models have
/// one) the projector space.
Alignment alignment_report(models::ModelTriple& teacher,
                           models::ModelTriple& student,
                           const LabeledDataset& ds);

struct EvalReport {
  double SA = 0.0;
  std::map<std::string, double> RA_by_attack;
  std::optional<double> masking_gap;  // RA[pgd20_ce] - RA[margin_pgd]
  std::optional<Alignment> alignment;
  std::optional<CollapseMetrics> collapse;
  nlohmann::json protocol;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

inline constexpr int kReportSchemaVersion = 1;

struct LpConfig {
  // The written grid lists 0.1 twice; deduplicated here.
  std::vector<double> lr_grid{0.05, 0.1, 0.5, 1.0, 5.0};
  int epochs = 25;
  std::vector<int> milestones{15, 20};
  double gamma = 0.1;
  double weight_decay = 2e-4;
  double momentum = 0.9;
  int batch_size = 128;
  std::uint64_t seed = 0;
  std::vector<std::string> eval_attacks{"pgd20_ce", "margin_pgd"};
  double epsilon = 8.0 / 255.0;
};

struct ProbeResult {
  std::shared_ptr<nn::Net> head;
  EvalReport report;
  double selected_lr = 0.0;
};

/// Trains a linear head on frozen-backbone features for every learning-rate
/// candidate with the step schedule, early-stops on validation clean
/// accuracy, and reports test SA/RA with the selected head.
ProbeResult linear_probe(models::ModelTriple& model, const LabeledDataset& train,
                         const LabeledDataset& val, const LabeledDataset& test,
                         const LpConfig& cfg);

/// Same protocol with a 2-layer MLP head.
ProbeResult mlp_probe(models::ModelTriple& model, const LabeledDataset& train,
                      const LabeledDataset& val, const LabeledDataset& test,
                      const LpConfig& cfg, int hidden);

/// Cosine-distance k-nearest-neighbour vote in feature space. Ties are broken
/// toward the class of the nearest neighbour among the tied classes. When an
/// attack head and spec are given, also reports robust accuracy on
/// adversarial inputs generated against that head.
EvalReport knn_eval(models::ModelTriple& model, const LabeledDataset& train,
                    const LabeledDataset& test, int k,
                    const std::shared_ptr<nn::Net>& attack_head = nullptr,
                    const attacks::AttackSpec* attack = nullptr,
                    std::uint64_t seed = 0);

/// TRADES full-network finetune on the transfer set, followed by linear
/// probing on the same set.
std::pair<train::Checkpoint, EvalReport> adversarial_full_finetune(
    const train::Checkpoint& init, const LabeledDataset& train,
    const LabeledDataset& val, const LabeledDataset& test,
    const train::TrainConfig& aff_cfg, const LpConfig& lp_cfg);

/// Backbone features for a whole dataset, computed in inference mode.
Matrix features_of(models::ModelTriple& model, const LabeledDataset& ds);

/// Robust accuracy helper: a sample counts as robust only if the model is
/// correct on both the clean input and the attacked input.
double robust_accuracy(models::ModelTriple& model_with_head,
                       const LabeledDataset& test, attacks::EvalAttackKind kind,
                       const attacks::AttackSpec& spec, std::uint64_t seed);

double clean_accuracy(models::ModelTriple& model_with_head,
                      const LabeledDataset& test);

}  // namespace profeat::eval
