#include "profeat/losses.hpp"

#include <algorithm>
#include <cmath>

namespace profeat::losses {

namespace {
constexpr double kNormFloor = 1e-12;
}

double cosine_rowmean(const Matrix& A, const Matrix& B, Matrix* gA, Matrix* gB,
                      int* collapse_rows) {
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw ConfigError("cosine_rowmean: shape mismatch");
  const Eigen::Index n = A.rows();
  if (n == 0) throw ConfigError("cosine_rowmean: empty input");
  if (gA) gA->setZero(A.rows(), A.cols());
  if (gB) gB->setZero(B.rows(), B.cols());

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto a = A.row(i);
    const auto b = B.row(i);
    const double na = a.norm();
    const double nb = b.norm();
    if (na < kNormFloor || nb < kNormFloor) {
      if (collapse_rows) ++(*collapse_rows);
      continue;  // similarity 0, gradient 0
    }
    const double dot = a.dot(b);
    const double c = dot / (na * nb);
    total += c;
    if (gA) gA->row(i) = (b / (na * nb) - a * (c / (na * na))) / double(n);
    if (gB) gB->row(i) = (a / (na * nb) - b * (c / (nb * nb))) / double(n);
  }
  return total / double(n);
}

bool DefenseLossSpec::needs_adv() const {
  auto has_adv = [](const std::vector<DefTerm>& v) {
    return std::any_of(v.begin(), v.end(), [](DefTerm t) {
      return t == DefTerm::adv_SS || t == DefTerm::adv_TS;
    });
  };
  return has_adv(feature_terms) || has_adv(projector_terms);
}

bool DefenseLossSpec::needs_teacher_projector() const {
  return std::any_of(projector_terms.begin(), projector_terms.end(),
                     [](DefTerm t) {
                       return t == DefTerm::clean || t == DefTerm::adv_TS;
                     });
}

void DefenseLossSpec::validate() const {
  if (feature_terms.empty() && projector_terms.empty())
    throw ConfigError("defense loss spec has no terms");
  if (beta < 0.0) throw ConfigError("defense loss: beta must be >= 0");
  if (lambda < 0.0 || lambda > 1.0)
    throw ConfigError("defense loss: lambda must be in [0,1]");
  auto check_unique = [](const std::vector<DefTerm>& v, const char* where) {
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = i + 1; j < v.size(); ++j)
        if (v[i] == v[j])
          throw ConfigError(std::string("defense loss: duplicate term at ") + where);
  };
  check_unique(feature_terms, "feature space");
  check_unique(projector_terms, "projector space");
}

DefenseLoss::DefenseLoss(DefenseLossSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

namespace {

struct SpaceReps {
  const Matrix* T;
  const Matrix* S;
  const Matrix* S_adv;
  Matrix* gT;
  Matrix* gS;
  Matrix* gS_adv;
};

// L_space = -[clean + beta * adv terms], each term a row-mean cosine.
double space_loss(const std::vector<DefTerm>& terms, double beta,
                  const SpaceReps& r, double weight, int* collapse_rows) {
  double loss = 0.0;
  Matrix ga, gb;
  for (DefTerm t : terms) {
    const Matrix *A = nullptr, *B = nullptr;
    Matrix *gA = nullptr, *gB = nullptr;
    double scale = -1.0;
    switch (t) {
      case DefTerm::clean:
        A = r.T; B = r.S; gA = r.gT; gB = r.gS;
        break;
      case DefTerm::adv_SS:
        A = r.S; B = r.S_adv; gA = r.gS; gB = r.gS_adv;
        scale *= beta;
        break;
      case DefTerm::adv_TS:
        A = r.T; B = r.S_adv; gA = r.gT; gB = r.gS_adv;
        scale *= beta;
        break;
    }
    const bool want_grads = gA != nullptr;
    const double c = cosine_rowmean(*A, *B, want_grads ? &ga : nullptr,
                                    want_grads ? &gb : nullptr, collapse_rows);
    loss += scale * c;
    if (want_grads) {
      *gA += weight * scale * ga;
      *gB += weight * scale * gb;
    }
  }
  return loss;
}

}  // namespace

double DefenseLoss::operator()(const RepSet& reps, RepGrads* grads) const {
  const bool feat = !spec_.feature_terms.empty();
  const bool proj = !spec_.projector_terms.empty();
  const double wf = feat && proj ? spec_.lambda : 1.0;
  const double wp = feat && proj ? 1.0 - spec_.lambda : 1.0;

  int* collapse = grads ? &grads->collapse_rows : nullptr;
  double loss = 0.0;
  if (feat) {
    if (grads) {
      grads->Tf.setZero(reps.Tf.rows(), reps.Tf.cols());
      grads->Sf.setZero(reps.Sf.rows(), reps.Sf.cols());
      grads->Sf_adv.setZero(reps.Sf_adv.rows(), reps.Sf_adv.cols());
    }
    SpaceReps r{&reps.Tf, &reps.Sf, &reps.Sf_adv,
                grads ? &grads->Tf : nullptr, grads ? &grads->Sf : nullptr,
                grads ? &grads->Sf_adv : nullptr};
    loss += wf * space_loss(spec_.feature_terms, spec_.beta, r, wf, collapse);
  }
  if (proj) {
    if (grads) {
      grads->Tp.setZero(reps.Tp.rows(), reps.Tp.cols());
      grads->Sp.setZero(reps.Sp.rows(), reps.Sp.cols());
      grads->Sp_adv.setZero(reps.Sp_adv.rows(), reps.Sp_adv.cols());
    }
    SpaceReps r{&reps.Tp, &reps.Sp, &reps.Sp_adv,
                grads ? &grads->Tp : nullptr, grads ? &grads->Sp : nullptr,
                grads ? &grads->Sp_adv : nullptr};
    loss += wp * space_loss(spec_.projector_terms, spec_.beta, r, wp, collapse);
  }
  return loss;
}

DefenseLoss make_defense_loss(const DefenseLossSpec& spec) {
  return DefenseLoss(spec);
}

namespace {

DefenseLossSpec make_spec(std::string alias, std::vector<DefTerm> feat,
                          std::vector<DefTerm> proj) {
  DefenseLossSpec s;
  s.alias = std::move(alias);
  s.feature_terms = std::move(feat);
  s.projector_terms = std::move(proj);
  return s;
}

}  // namespace

const std::vector<std::string>& defense_alias_names() {
  static const std::vector<std::string> names = {
      "AD1", "AD2", "AD3", "AD4", "AD5", "AD6", "AD7", "AD8", "AD9",
      "ours", "deacl"};
  return names;
}

DefenseLossSpec defense_spec_from_alias(const std::string& name) {
  using T = DefTerm;
  if (name == "AD1" || name == "deacl")
    return make_spec(name, {T::clean, T::adv_SS}, {});
  if (name == "AD2") return make_spec(name, {}, {T::clean, T::adv_SS});
  if (name == "AD3") return make_spec(name, {T::clean, T::adv_SS}, {T::clean});
  if (name == "AD4") return make_spec(name, {T::clean, T::adv_SS}, {T::adv_SS});
  if (name == "AD5") return make_spec(name, {T::adv_SS}, {T::clean});
  if (name == "AD6") return make_spec(name, {T::adv_SS}, {T::clean, T::adv_SS});
  if (name == "AD7") return make_spec(name, {T::clean}, {T::clean, T::adv_SS});
  if (name == "AD8")
    return make_spec(name, {T::clean, T::adv_SS}, {T::clean, T::adv_TS});
  if (name == "AD9")
    return make_spec(name, {T::clean, T::adv_TS}, {T::clean, T::adv_TS});
  if (name == "ours")
    return make_spec(name, {T::clean, T::adv_SS}, {T::clean, T::adv_SS});
  std::string allowed;
  for (const auto& n : defense_alias_names()) allowed += (allowed.empty() ? "" : ", ") + n;
  throw ConfigError("unknown defense loss alias '" + name + "' (allowed: " +
                    allowed + ")");
}

namespace {

RepSet reps_for(models::ModelTriple& teacher, models::ModelTriple& student,
                const ImageBatch& x, const ImageBatch& x_adv, bool projector) {
  RepSet r;
  r.Tf = models::forward(models::Space::feature, teacher, x);
  r.Sf = models::forward(models::Space::feature, student, x);
  r.Sf_adv = models::forward(models::Space::feature, student, x_adv);
  if (projector) {
    r.Tp = models::forward(models::Space::projector, teacher, x);
    r.Sp = models::forward(models::Space::projector, student, x);
    r.Sp_adv = models::forward(models::Space::projector, student, x_adv);
  }
  return r;
}

}  // namespace

double loss_fp(models::ModelTriple& teacher, models::ModelTriple& student,
               const ImageBatch& x, const ImageBatch& x_adv, double beta) {
  if (x_adv.pixels.rows() != x.pixels.rows() ||
      x_adv.pixels.cols() != x.pixels.cols())
    throw ConfigError("loss_fp: x_adv shape differs from x");
  DefenseLossSpec spec = make_spec("fp", {}, {DefTerm::clean, DefTerm::adv_SS});
  spec.beta = beta;
  return DefenseLoss(spec)(reps_for(teacher, student, x, x_adv, true));
}

double loss_f(models::ModelTriple& teacher, models::ModelTriple& student,
              const ImageBatch& x, const ImageBatch& x_adv, double beta) {
  if (x_adv.pixels.rows() != x.pixels.rows() ||
      x_adv.pixels.cols() != x.pixels.cols())
    throw ConfigError("loss_f: x_adv shape differs from x");
  DefenseLossSpec spec = make_spec("f", {DefTerm::clean, DefTerm::adv_SS}, {});
  spec.beta = beta;
  return DefenseLoss(spec)(reps_for(teacher, student, x, x_adv, false));
}

double loss_profeat(models::ModelTriple& teacher, models::ModelTriple& student,
                    const ImageBatch& x, const ImageBatch& x_adv, double beta,
                    double lambda) {
  DefenseLossSpec spec = defense_spec_from_alias("ours");
  spec.beta = beta;
  spec.lambda = lambda;
  spec.validate();
  return DefenseLoss(spec)(reps_for(teacher, student, x, x_adv, true));
}

namespace {

// Row-wise log-softmax with log-sum-exp stabilization.
Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

}  // namespace

double loss_trades(const Matrix& logits_clean, const Matrix& logits_adv,
                   const std::vector<int>& labels, double beta, Matrix* g_clean,
                   Matrix* g_adv) {
  if (!logits_clean.allFinite() || !logits_adv.allFinite())
    throw TrainingError("loss_trades: non-finite logits");
  const Eigen::Index n = logits_clean.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw ConfigError("loss_trades: label count mismatch");

  const Matrix logp = log_softmax(logits_clean);
  const Matrix logq = log_softmax(logits_adv);
  const Matrix p = logp.array().exp();
  const Matrix q = logq.array().exp();

  double ce = 0.0, kl = 0.0;
  Vector kl_row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ce -= logp(i, labels[i]);
    kl_row(i) = (p.row(i).array() * (logp.row(i) - logq.row(i)).array()).sum();
    kl += kl_row(i);
  }
  ce /= double(n);
  kl /= double(n);

  if (g_clean) {
    *g_clean = p;
    for (Eigen::Index i = 0; i < n; ++i) {
      (*g_clean)(i, labels[i]) -= 1.0;
      // d KL / d z_clean = p .* ((logp - logq) - kl_row)
      g_clean->row(i) += beta * (p.row(i).array() *
                                 ((logp.row(i) - logq.row(i)).array() - kl_row(i)))
                                    .matrix();
    }
    *g_clean /= double(n);
  }
  if (g_adv) {
    *g_adv = beta * (q - p) / double(n);
  }
  return ce + beta * kl;
}

double loss_ntxent(const Matrix& z1, const Matrix& z2, double temperature,
                   Matrix* g1, Matrix* g2) {
  const Eigen::Index n = z1.rows();
  if (n < 2)
    throw ConfigError("loss_ntxent: need N >= 2 (no negatives otherwise)");
  if (z2.rows() != n || z2.cols() != z1.cols())
    throw ConfigError("loss_ntxent: view shape mismatch");
  if (temperature <= 0.0) throw ConfigError("loss_ntxent: temperature must be > 0");

  const Eigen::Index m = 2 * n;
  Matrix z(m, z1.cols());
  z.topRows(n) = z1;
  z.bottomRows(n) = z2;

  Matrix zn(m, z.cols());
  Vector norms(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    norms(i) = z.row(i).norm();
    if (norms(i) < kNormFloor)
      zn.row(i).setZero();
    else
      zn.row(i) = z.row(i) / norms(i);
  }

  Matrix sim = (zn * zn.transpose()) / temperature;
  auto positive = [n](Eigen::Index i) { return i < n ? i + n : i - n; };

  double loss = 0.0;
  Matrix dsim = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) mx = std::max(mx, sim(i, j));
    double denom = 0.0;
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) denom += std::exp(sim(i, j) - mx);
    const double lse = mx + std::log(denom);
    loss += lse - sim(i, positive(i));
    if (g1 || g2) {
      for (Eigen::Index j = 0; j < m; ++j)
        if (j != i) dsim(i, j) = std::exp(sim(i, j) - lse);
      dsim(i, positive(i)) -= 1.0;
    }
  }
  loss /= double(m);

  if (g1 || g2) {
    dsim /= double(m);
    // sim = zn zn^T / tau; combine row and column contributions.
    Matrix gzn = (dsim + dsim.transpose()) * zn / temperature;
    Matrix gz(m, z.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      if (norms(i) < kNormFloor) {
        gz.row(i).setZero();
        continue;
      }
      const double dot = gzn.row(i).dot(zn.row(i));
      gz.row(i) = (gzn.row(i) - dot * zn.row(i)) / norms(i);
    }
    if (g1) *g1 = gz.topRows(n);
    if (g2) *g2 = gz.bottomRows(n);
  }
  return loss;
}

}  // namespace profeat::losses
