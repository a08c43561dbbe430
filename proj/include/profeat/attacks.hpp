#pragma once

#include "profeat/augment.hpp"
#include "profeat/models.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace profeat::attacks {

using data::ImageBatch;

enum class AttackInit { zero, uniform_ball };

struct AttackSpec {
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 5;
  int restarts = 1;
  AttackInit init = AttackInit::uniform_ball;
  std::string objective = "ours";

  void validate() const;
};

/// A scalar-per-sample objective the PGD engine maximizes.
class AttackObjective {
 public:
  virtual ~AttackObjective() = default;
  virtual Vector value(const Matrix& x_adv) = 0;
  /// Per-sample values plus the gradient of their sum w.r.t. the input.
  virtual void value_and_grad(const Matrix& x_adv, Vector& v, Matrix& g) = 0;
};

using StepObserver = std::function<void(int step, const Matrix& x_adv)>;

/// l-inf PGD: sign-gradient ascent with projection onto the epsilon ball and
/// [0,1] after every step. Among restarts, keeps the per-sample iterate with
/// the highest objective. Deterministic in (inputs, spec, seed).
ImageBatch pgd(AttackObjective& objective, const ImageBatch& x,
               const AttackSpec& spec, std::uint64_t seed,
               const StepObserver& observer = nullptr);

enum class UnsupTerm { none, min_cos_SS, min_cos_TS };
enum class SupervisedKind { none, max_CE, max_KL, max_margin };

struct AdversarialObjectiveSpec {
  std::vector<UnsupTerm> feature_terms;
  std::vector<UnsupTerm> projector_terms;
  SupervisedKind supervised = SupervisedKind::none;
  // Eq. 4 sums the similarity terms unweighted; the weights are exposed for
  // study and default to 1.
  double feature_weight = 1.0;
  double projector_weight = 1.0;
  std::string alias;

  bool needs_projector() const { return !projector_terms.empty(); }
  void validate() const;
};

/// Builds the distillation attack objective. Clean-side representations are
/// computed once at construction and detached from the attack gradient.
std::unique_ptr<AttackObjective> make_attack_objective(
    const AdversarialObjectiveSpec& spec, models::ModelTriple& teacher,
    models::ModelTriple& student, const ImageBatch& x_clean);

/// Registered rows: AT1..AT7, "ours", "deacl".
AdversarialObjectiveSpec attack_spec_from_alias(const std::string& name);
const std::vector<std::string>& attack_alias_names();

std::unique_ptr<AttackObjective> make_supervised_objective(
    SupervisedKind kind, models::ModelTriple& model_with_head,
    const std::vector<int>& labels, const Matrix* clean_logits = nullptr);

enum class EvalAttackKind { pgd20_ce, margin_pgd };

EvalAttackKind eval_attack_from_string(const std::string& s);
std::string to_string(EvalAttackKind k);
/// pgd20_ce: 20 steps of CE ascent; margin_pgd: 100 steps / 2 restarts of
/// margin ascent (the stand-in for the stronger external attack suites).
AttackSpec default_eval_spec(EvalAttackKind kind, double epsilon = 8.0 / 255.0);

ImageBatch eval_attack(models::ModelTriple& model_with_head,
                       const ImageBatch& batch, EvalAttackKind kind,
                       const AttackSpec& spec, std::uint64_t seed);

enum class AugMode { none, weak, strong };

struct RestartReport {
  int n_restarts = 0;
  std::vector<double> union_ra;  // percent, after 1..n restarts
};

/// Per restart: augment the inputs per `mode`, attack, and accumulate the
/// worst case; reports the union robust-accuracy decline curve.
RestartReport restart_diversity(models::ModelTriple& model_with_head,
                                const data::LabeledDataset& ds, int n_restarts,
                                AugMode mode, const AttackSpec& spec,
                                std::uint64_t seed);

}  // namespace profeat::attacks
