#pragma once

#include "profeat/attacks.hpp"
#include "profeat/checkpoint.hpp"
#include "profeat/losses.hpp"

#include <functional>
#include <optional>

namespace profeat::train {

struct LrSchedule {
  enum class Kind { cosine_warmup, step };
  Kind kind = Kind::cosine_warmup;
  double max_lr = 0.5;
  double warmup_frac = 0.1;             // cosine_warmup
  std::vector<double> milestones_frac;  // step
  double gamma = 0.1;
};

/// Linear warmup to max_lr over the warmup window, then half-cosine decay to
/// zero; the step schedule multiplies by gamma at each passed milestone.
double lr_at(const LrSchedule& schedule, double epoch_fraction);

struct ModelSpec {
  models::Arch arch = models::Arch::tiny_cnn;
  int feature_dim = 64;
  models::ProjectorConfig projector;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  nn::SgdConfig optimizer{0.9, 3e-4};
  LrSchedule schedule;
  double beta = 8.0;
  double lambda = 0.5;
  aug::PairingMode pairing = aug::PairingMode::weak_teacher_strong_student;
  aug::ViewPolicies policies;
  attacks::AttackSpec attack;
  attacks::AdversarialObjectiveSpec attack_objective;
  losses::DefenseLossSpec defense;
  ModelSpec model;
  double ntxent_temperature = 0.5;
  std::uint64_t seed = 0;
  // Whether the training attack perturbs the augmented student view (default)
  // or the raw batch.
  bool attack_on_view = true;
  int collapse_patience = 3;

  void validate() const;
};

struct TrainHooks {
  std::function<void(const Checkpoint&)> on_epoch_end;
  const Checkpoint* resume = nullptr;
};

/// Standard SSL pretraining of backbone + projector with the NT-Xent loss on
/// two independently augmented views. Labels are never read.
Checkpoint train_simclr(const TrainConfig& cfg, const data::LabeledDataset& ds,
                        const TrainHooks& hooks = {});

/// Adversarial self-supervised distillation: per batch, builds the view pair,
/// runs the training attack from the student view, and takes one step on the
/// configured defense loss. Teacher parameters (and any frozen projector)
/// are untouched throughout.
Checkpoint train_profeat(const TrainConfig& cfg, const Checkpoint& teacher,
                         const data::LabeledDataset& ds,
                         const TrainHooks& hooks = {});

/// Supervised baseline: KL-maximizing inner attack followed by a TRADES step.
Checkpoint train_trades(const TrainConfig& cfg, const data::LabeledDataset& ds,
                        const TrainHooks& hooks = {});

}  // namespace profeat::train
