#pragma once

#include "profeat/models.hpp"

#include <string>
#include <vector>

namespace profeat::losses {

using data::ImageBatch;

/// Mean over rows of cos(a_i, b_i). Rows with norm below 1e-12 contribute
/// similarity 0 (gradient 0) and bump the collapse counter instead of
/// producing NaNs.
double cosine_rowmean(const Matrix& A, const Matrix& B, Matrix* gA = nullptr,
                      Matrix* gB = nullptr, int* collapse_rows = nullptr);

enum class DefTerm { clean, adv_SS, adv_TS };

/// Declarative defense loss: which cosine terms act at which space.
/// Every cosine enters with a negative sign; adversarial terms are scaled by
/// beta; when both spaces carry terms they are combined as
/// lambda * L_feature + (1 - lambda) * L_projector.
struct DefenseLossSpec {
  std::vector<DefTerm> feature_terms;
  std::vector<DefTerm> projector_terms;
  double beta = 8.0;
  double lambda = 0.5;
  std::string alias;

  bool uses_projector() const { return !projector_terms.empty(); }
  bool needs_adv() const;
  bool needs_teacher_projector() const;
  void validate() const;
};

/// Representations entering a defense loss. Teacher entries are detached by
/// convention; their gradients are still reported so a trainable shared
/// projector (and the gradient-check tests) can consume them.
struct RepSet {
  Matrix Tf, Tp;          // teacher on the clean (teacher-view) batch
  Matrix Sf, Sp;          // student on the clean (student-view) batch
  Matrix Sf_adv, Sp_adv;  // student on the adversarial batch
};

struct RepGrads {
  Matrix Tf, Tp, Sf, Sp, Sf_adv, Sp_adv;
  int collapse_rows = 0;
};

class DefenseLoss {
 public:
  explicit DefenseLoss(DefenseLossSpec spec);
  double operator()(const RepSet& reps, RepGrads* grads = nullptr) const;
  const DefenseLossSpec& spec() const { return spec_; }

 private:
  DefenseLossSpec spec_;
};

DefenseLoss make_defense_loss(const DefenseLossSpec& spec);
/// Registered rows: AD1..AD9, "ours", "deacl".
DefenseLossSpec defense_spec_from_alias(const std::string& name);
const std::vector<std::string>& defense_alias_names();

/// Defense loss at the projector space only (clean distillation + beta-scaled
/// smoothness), evaluated through inference-mode forwards.
double loss_fp(models::ModelTriple& teacher, models::ModelTriple& student,
               const ImageBatch& x, const ImageBatch& x_adv, double beta);
/// Same terms at the feature space; with a feature-space attack this is the
/// DeACL objective.
double loss_f(models::ModelTriple& teacher, models::ModelTriple& student,
              const ImageBatch& x, const ImageBatch& x_adv, double beta);
/// lambda * L_f + (1 - lambda) * L_fp; lambda = 0.5 gives the equal-weight
/// combination used by the proposed defense.
double loss_profeat(models::ModelTriple& teacher, models::ModelTriple& student,
                    const ImageBatch& x, const ImageBatch& x_adv, double beta,
                    double lambda);

/// Cross-entropy on clean logits plus beta-weighted KL(clean || adv),
/// computed with log-sum-exp stabilization.
double loss_trades(const Matrix& logits_clean, const Matrix& logits_adv,
                   const std::vector<int>& labels, double beta,
                   Matrix* g_clean = nullptr, Matrix* g_adv = nullptr);

/// Normalized-temperature cross-entropy over the 2N-view similarity matrix
/// with self pairs masked.
double loss_ntxent(const Matrix& z1, const Matrix& z2, double temperature,
                   Matrix* g1 = nullptr, Matrix* g2 = nullptr);

}  // namespace profeat::losses
