#include "profeat/attacks.hpp"

#include "profeat/losses.hpp"

#include <algorithm>
#include <cmath>

namespace profeat::attacks {

void AttackSpec::validate() const {
  if (epsilon < 0.0 || epsilon > 1.0)
    throw ConfigError("attack: epsilon must be in [0,1] pixel units");
  if (steps < 0) throw ConfigError("attack: steps must be >= 0");
  if (steps > 0 && step_size <= 0.0)
    throw ConfigError("attack: step_size must be > 0 when steps > 0");
  if (restarts < 1) throw ConfigError("attack: restarts must be >= 1");
}

void AdversarialObjectiveSpec::validate() const {
  const bool unsup = !feature_terms.empty() || !projector_terms.empty();
  const bool sup = supervised != SupervisedKind::none;
  if (!unsup && !sup) throw ConfigError("attack objective has no terms");
  if (unsup && sup)
    throw ConfigError("attack objective mixes supervised and unsupervised terms");
  for (const auto* terms : {&feature_terms, &projector_terms})
    for (UnsupTerm t : *terms)
      if (t == UnsupTerm::none)
        throw ConfigError("attack objective lists an empty term");
}

ImageBatch pgd(AttackObjective& objective, const ImageBatch& x,
               const AttackSpec& spec, std::uint64_t seed,
               const StepObserver& observer) {
  spec.validate();
  const Matrix lo = (x.pixels.array() - spec.epsilon).matrix();
  const Matrix hi = (x.pixels.array() + spec.epsilon).matrix();
  auto project = [&](Matrix& m) {
    m = m.cwiseMax(lo).cwiseMin(hi).cwiseMax(0.0).cwiseMin(1.0);
  };

  const Eigen::Index n = x.pixels.rows();
  Matrix best = x.pixels;
  Vector best_value = Vector::Constant(n, -std::numeric_limits<double>::infinity());

  for (int r = 0; r < spec.restarts; ++r) {
    Matrix xa = x.pixels;
    if (spec.init == AttackInit::uniform_ball && spec.epsilon > 0.0) {
      auto rng = make_rng(mix_seed(seed, 0xada0 + static_cast<std::uint64_t>(r)));
      std::uniform_real_distribution<double> u(-spec.epsilon, spec.epsilon);
      for (Eigen::Index i = 0; i < xa.rows(); ++i)
        for (Eigen::Index j = 0; j < xa.cols(); ++j) xa(i, j) += u(rng);
      project(xa);
    }
    if (observer) observer(-1, xa);

    Vector v;
    Matrix g;
    for (int step = 0; step < spec.steps; ++step) {
      objective.value_and_grad(xa, v, g);
      if (!g.allFinite())
        throw TrainingError("pgd: non-finite gradient at step " +
                            std::to_string(step) + " of restart " +
                            std::to_string(r));
      xa += spec.step_size * g.array().sign().matrix();
      project(xa);
      if (observer) observer(step, xa);
    }

    const Vector final_value = objective.value(xa);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (final_value(i) > best_value(i)) {
        best_value(i) = final_value(i);
        best.row(i) = xa.row(i);
      }
    }
  }

  ImageBatch out = x;
  out.pixels = best;
  return out;
}

namespace {

// Eq.-4 style objective: negated sum of cosines between detached clean-side
// representations and the student's representations of the perturbed input.
class DistillationObjective final : public AttackObjective {
 public:
  DistillationObjective(const AdversarialObjectiveSpec& spec,
                        models::ModelTriple& teacher,
                        models::ModelTriple& student, const ImageBatch& x_clean)
      : spec_(spec), student_(student) {
    spec_.validate();
    if (spec_.needs_projector() && !student.projector)
      throw ConfigError("attack objective '" + spec_.alias +
                        "' references the projector space, but the student has "
                        "no projector");
    const bool proj_ts =
        std::find(spec_.projector_terms.begin(), spec_.projector_terms.end(),
                  UnsupTerm::min_cos_TS) != spec_.projector_terms.end();
    // absent teacher projector: the projector-space teacher target is the
    // teacher's features (requires matching widths)
    if (proj_ts && !teacher.projector &&
        student.projector->out_dim() != teacher.backbone->out_dim())
      throw ConfigError("attack objective '" + spec_.alias +
                        "' references the teacher projector space, but the "
                        "teacher has no projector and the widths differ");

    for (UnsupTerm t : spec_.feature_terms)
      clean_feat_.push_back(
          t == UnsupTerm::min_cos_SS
              ? models::forward(models::Space::feature, student, x_clean)
              : models::forward(models::Space::feature, teacher, x_clean));
    for (UnsupTerm t : spec_.projector_terms) {
      if (t == UnsupTerm::min_cos_SS)
        clean_proj_.push_back(
            models::forward(models::Space::projector, student, x_clean));
      else
        clean_proj_.push_back(
            teacher.projector
                ? models::forward(models::Space::projector, teacher, x_clean)
                : models::forward(models::Space::feature, teacher, x_clean));
    }
  }

  Vector value(const Matrix& x_adv) override {
    Vector v;
    eval(x_adv, v, nullptr);
    return v;
  }

  void value_and_grad(const Matrix& x_adv, Vector& v, Matrix& g) override {
    eval(x_adv, v, &g);
  }

 private:
  static void per_row_cosine(const Matrix& clean, const Matrix& adv, Vector& acc,
                             double weight, Matrix* g_adv) {
    const Eigen::Index n = clean.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto a = clean.row(i);
      const auto b = adv.row(i);
      const double na = a.norm();
      const double nb = b.norm();
      if (na < 1e-12 || nb < 1e-12) continue;  // contributes 0
      const double c = a.dot(b) / (na * nb);
      acc(i) -= weight * c;
      if (g_adv)
        g_adv->row(i) -= weight * (a / (na * nb) - b * (c / (nb * nb)));
    }
  }

  void eval(const Matrix& x_adv, Vector& v, Matrix* g) {
    nn::Trace bb_tr, proj_tr;
    const Matrix feat = student_.backbone->forward(x_adv, bb_tr, false);
    v = Vector::Zero(x_adv.rows());

    Matrix gfeat;
    if (g) gfeat = Matrix::Zero(feat.rows(), feat.cols());

    for (std::size_t t = 0; t < clean_feat_.size(); ++t)
      per_row_cosine(clean_feat_[t], feat, v, spec_.feature_weight,
                     g ? &gfeat : nullptr);

    if (!clean_proj_.empty()) {
      const Matrix proj = student_.projector->forward(feat, proj_tr, false);
      Matrix gproj;
      if (g) gproj = Matrix::Zero(proj.rows(), proj.cols());
      for (std::size_t t = 0; t < clean_proj_.size(); ++t)
        per_row_cosine(clean_proj_[t], proj, v, spec_.projector_weight,
                       g ? &gproj : nullptr);
      if (g) gfeat += student_.projector->backward(gproj, proj_tr, false);
    }

    if (g) *g = student_.backbone->backward(gfeat, bb_tr, false);
  }

  AdversarialObjectiveSpec spec_;
  models::ModelTriple& student_;
  std::vector<Matrix> clean_feat_, clean_proj_;
};

class SupervisedObjective final : public AttackObjective {
 public:
  SupervisedObjective(SupervisedKind kind, models::ModelTriple& model,
                      std::vector<int> labels, const Matrix* clean_logits)
      : kind_(kind), model_(model), labels_(std::move(labels)) {
    if (!model.head) throw ConfigError("supervised attack needs a head");
    if (kind == SupervisedKind::max_KL) {
      if (!clean_logits)
        throw ConfigError("max_KL attack needs detached clean logits");
      clean_logp_ = log_softmax(*clean_logits);
      clean_p_ = clean_logp_.array().exp();
    }
  }

  Vector value(const Matrix& x_adv) override {
    Vector v;
    eval(x_adv, v, nullptr);
    return v;
  }
  void value_and_grad(const Matrix& x_adv, Vector& v, Matrix& g) override {
    eval(x_adv, v, &g);
  }

 private:
  static Matrix log_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
      out.row(i) = logits.row(i).array() - lse;
    }
    return out;
  }

  void eval(const Matrix& x_adv, Vector& v, Matrix* g) {
    nn::Trace bb_tr, head_tr;
    const Matrix feat = model_.backbone->forward(x_adv, bb_tr, false);
    const Matrix logits = model_.head->forward(feat, head_tr, false);
    const Eigen::Index n = logits.rows();
    v = Vector::Zero(n);
    Matrix glogits;
    if (g) glogits = Matrix::Zero(logits.rows(), logits.cols());

    switch (kind_) {
      case SupervisedKind::max_CE: {
        const Matrix logp = log_softmax(logits);
        for (Eigen::Index i = 0; i < n; ++i) {
          v(i) = -logp(i, labels_[i]);
          if (g) {
            glogits.row(i) = logp.row(i).array().exp();
            glogits(i, labels_[i]) -= 1.0;
          }
        }
        break;
      }
      case SupervisedKind::max_margin: {
        for (Eigen::Index i = 0; i < n; ++i) {
          const int y = labels_[i];
          int rival = -1;
          double best = -std::numeric_limits<double>::infinity();
          for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            if (static_cast<int>(j) == y) continue;
            if (logits(i, j) > best) {
              best = logits(i, j);
              rival = static_cast<int>(j);
            }
          }
          v(i) = best - logits(i, y);
          if (g) {
            glogits(i, rival) += 1.0;
            glogits(i, y) -= 1.0;
          }
        }
        break;
      }
      case SupervisedKind::max_KL: {
        const Matrix logq = log_softmax(logits);
        for (Eigen::Index i = 0; i < n; ++i) {
          v(i) = (clean_p_.row(i).array() *
                  (clean_logp_.row(i) - logq.row(i)).array())
                     .sum();
          if (g)
            glogits.row(i) = logq.row(i).array().exp().matrix() - clean_p_.row(i);
        }
        break;
      }
      case SupervisedKind::none:
        throw ConfigError("supervised attack objective kind is 'none'");
    }

    if (g) {
      Matrix gfeat = model_.head->backward(glogits, head_tr, false);
      *g = model_.backbone->backward(gfeat, bb_tr, false);
    }
  }

  SupervisedKind kind_;
  models::ModelTriple& model_;
  std::vector<int> labels_;
  Matrix clean_logp_, clean_p_;
};

}  // namespace

std::unique_ptr<AttackObjective> make_attack_objective(
    const AdversarialObjectiveSpec& spec, models::ModelTriple& teacher,
    models::ModelTriple& student, const ImageBatch& x_clean) {
  spec.validate();
  if (spec.supervised != SupervisedKind::none)
    throw ConfigError(
        "make_attack_objective builds distillation objectives; use "
        "make_supervised_objective for CE/KL/margin attacks");
  return std::make_unique<DistillationObjective>(spec, teacher, student, x_clean);
}

std::unique_ptr<AttackObjective> make_supervised_objective(
    SupervisedKind kind, models::ModelTriple& model_with_head,
    const std::vector<int>& labels, const Matrix* clean_logits) {
  return std::make_unique<SupervisedObjective>(kind, model_with_head, labels,
                                               clean_logits);
}

const std::vector<std::string>& attack_alias_names() {
  static const std::vector<std::string> names = {
      "AT1", "AT2", "AT3", "AT4", "AT5", "AT6", "AT7",
      "ours", "deacl", "ours_no_proj"};
  return names;
}

AdversarialObjectiveSpec attack_spec_from_alias(const std::string& name) {
  using U = UnsupTerm;
  AdversarialObjectiveSpec s;
  s.alias = name;
  if (name == "AT1") {
    s.feature_terms = {U::min_cos_TS};
    s.projector_terms = {U::min_cos_TS};
  } else if (name == "AT2") {
    s.feature_terms = {U::min_cos_SS};
    s.projector_terms = {U::min_cos_SS};
  } else if (name == "AT3") {
    s.feature_terms = {U::min_cos_TS};
    s.projector_terms = {U::min_cos_SS};
  } else if (name == "AT4" || name == "deacl") {
    s.feature_terms = {U::min_cos_SS};
  } else if (name == "AT5") {
    s.projector_terms = {U::min_cos_SS};
  } else if (name == "AT6") {
    s.feature_terms = {U::min_cos_TS};
  } else if (name == "AT7") {
    s.projector_terms = {U::min_cos_TS};
  } else if (name == "ours") {
    s.feature_terms = {U::min_cos_SS};
    s.projector_terms = {U::min_cos_TS};
  } else if (name == "ours_no_proj") {
    // both attack terms at the feature space, for projector-less ablations
    s.feature_terms = {U::min_cos_SS, U::min_cos_TS};
  } else {
    std::string allowed;
    for (const auto& n : attack_alias_names())
      allowed += (allowed.empty() ? "" : ", ") + n;
    throw ConfigError("unknown attack objective alias '" + name +
                      "' (allowed: " + allowed + ")");
  }
  return s;
}

EvalAttackKind eval_attack_from_string(const std::string& s) {
  if (s == "pgd20_ce") return EvalAttackKind::pgd20_ce;
  if (s == "margin_pgd") return EvalAttackKind::margin_pgd;
  throw ConfigError("unknown eval attack '" + s +
                    "' (allowed: pgd20_ce, margin_pgd)");
}

std::string to_string(EvalAttackKind k) {
  return k == EvalAttackKind::pgd20_ce ? "pgd20_ce" : "margin_pgd";
}

AttackSpec default_eval_spec(EvalAttackKind kind, double epsilon) {
  AttackSpec s;
  s.epsilon = epsilon;
  s.step_size = 2.0 / 255.0;
  s.init = AttackInit::uniform_ball;
  if (kind == EvalAttackKind::pgd20_ce) {
    s.steps = 20;
    s.restarts = 1;
    s.objective = "pgd20_ce";
  } else {
    s.steps = 100;
    s.restarts = 2;
    s.objective = "margin_pgd";
  }
  return s;
}

ImageBatch eval_attack(models::ModelTriple& model_with_head,
                       const ImageBatch& batch, EvalAttackKind kind,
                       const AttackSpec& spec, std::uint64_t seed) {
  if (!batch.labels)
    throw ConfigError("eval_attack: batch carries no labels");
  const auto sup_kind = kind == EvalAttackKind::pgd20_ce
                            ? SupervisedKind::max_CE
                            : SupervisedKind::max_margin;
  auto obj = make_supervised_objective(sup_kind, model_with_head, *batch.labels);
  return pgd(*obj, batch, spec, seed);
}

RestartReport restart_diversity(models::ModelTriple& model_with_head,
                                const data::LabeledDataset& ds, int n_restarts,
                                AugMode mode, const AttackSpec& spec,
                                std::uint64_t seed) {
  if (n_restarts < 1) throw ConfigError("restart_diversity: n_restarts >= 1");
  const ImageBatch base = data::to_batch(ds);
  const Eigen::Index n = base.pixels.rows();

  std::vector<char> still_robust(n, 1);
  RestartReport report;
  report.n_restarts = n_restarts;

  for (int r = 0; r < n_restarts; ++r) {
    ImageBatch view = base;
    if (mode == AugMode::weak)
      view = aug::weak_augment(base, mix_seed(seed, 40 + r));
    else if (mode == AugMode::strong)
      view = aug::strong_augment(base, mix_seed(seed, 40 + r));

    auto obj = make_supervised_objective(SupervisedKind::max_CE, model_with_head,
                                         *view.labels);
    const ImageBatch adv = pgd(*obj, view, spec, mix_seed(seed, 9000 + r));
    const Matrix logits = models::forward(models::Space::logits, model_with_head, adv);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index pred;
      logits.row(i).maxCoeff(&pred);
      if (static_cast<int>(pred) != (*view.labels)[i]) still_robust[i] = 0;
    }
    int robust = 0;
    for (char c : still_robust) robust += c;
    report.union_ra.push_back(100.0 * robust / static_cast<double>(n));
  }
  return report;
}

}  // namespace profeat::attacks
