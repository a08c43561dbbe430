#include "profeat/attacks.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace profeat;
using namespace profeat::attacks;

namespace {

// Linear per-sample objective w . x
class LinearObjective final : public AttackObjective {
 public:
  explicit LinearObjective(Matrix w) : w_(std::move(w)) {}
  Vector value(const Matrix& x) override {
    return (x.array() * w_.array()).rowwise().sum();
  }
  void value_and_grad(const Matrix& x, Vector& v, Matrix& g) override {
    v = value(x);
    g = w_;
  }

 private:
  Matrix w_;
};

// Monotone-per-coordinate 2-pixel objective f = a0 x0 + a1 x1 + b x0 x1 with
// |b| small enough that the signs of the partials never flip on the box.
class TwoPixelObjective final : public AttackObjective {
 public:
  TwoPixelObjective(double a0, double a1, double b) : a0_(a0), a1_(a1), b_(b) {}
  double scalar(double x0, double x1) const {
    return a0_ * x0 + a1_ * x1 + b_ * x0 * x1;
  }
  Vector value(const Matrix& x) override {
    Vector v(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) v(i) = scalar(x(i, 0), x(i, 1));
    return v;
  }
  void value_and_grad(const Matrix& x, Vector& v, Matrix& g) override {
    v = value(x);
    g.resize(x.rows(), 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      g(i, 0) = a0_ + b_ * x(i, 1);
      g(i, 1) = a1_ + b_ * x(i, 0);
    }
  }

 private:
  double a0_, a1_, b_;
};

data::ImageBatch pixels_batch(const Matrix& px, int channels, int h, int w) {
  data::ImageBatch b;
  b.pixels = px;
  b.channels = channels;
  b.height = h;
  b.width = w;
  return b;
}

}  // namespace

TEST_CASE("zero steps with zero init returns the input exactly") {
  const data::ImageBatch x = helpers::random_batch(3, 4, 1);
  LinearObjective obj(helpers::random_matrix(3, x.dim(), 2));
  AttackSpec spec;
  spec.steps = 0;
  spec.init = AttackInit::zero;
  const data::ImageBatch out = pgd(obj, x, spec, 0);
  CHECK(out.pixels == x.pixels);
}

TEST_CASE("epsilon zero is neutral regardless of steps and init") {
  const data::ImageBatch x = helpers::random_batch(3, 4, 3);
  LinearObjective obj(helpers::random_matrix(3, x.dim(), 4));
  AttackSpec spec;
  spec.epsilon = 0.0;
  spec.steps = 7;
  spec.init = AttackInit::uniform_ball;
  const data::ImageBatch out = pgd(obj, x, spec, 5);
  CHECK(out.pixels == x.pixels);
}

TEST_CASE("linear objective reaches the corner exactly") {
  // interior point: eps-ball fits inside [0,1]
  data::ImageBatch x = helpers::random_batch(4, 4, 6);
  x.pixels = x.pixels.unaryExpr(
      [](double v) { return 0.3 + 0.4 * v; });  // in [0.3, 0.7]
  const Matrix w = helpers::random_matrix(4, x.dim(), 7);
  LinearObjective obj(w);

  AttackSpec spec;
  spec.epsilon = 0.05;
  spec.step_size = 0.02;
  spec.steps = 5;  // steps * step >= eps
  spec.init = AttackInit::zero;

  const data::ImageBatch out = pgd(obj, x, spec, 8);
  const Matrix expect =
      (x.pixels + spec.epsilon * w.array().sign().matrix())
          .cwiseMax(0.0)
          .cwiseMin(1.0);
  CHECK((out.pixels - expect).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("two-pixel brute-force corner enumeration equivalence") {
  auto rng = make_rng(9);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  std::uniform_real_distribution<double> pix(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double a0 = coef(rng), a1 = coef(rng);
    double b = coef(rng) * 0.1;
    // keep the partials sign-stable over the box
    if (std::abs(a0) < 0.3 || std::abs(a1) < 0.3) continue;
    b = std::clamp(b, -0.25, 0.25);

    Matrix px(1, 2);
    px << pix(rng), pix(rng);
    const data::ImageBatch x = pixels_batch(px, 1, 1, 2);

    TwoPixelObjective obj(a0, a1, b);
    AttackSpec spec;
    spec.epsilon = 0.1;
    spec.step_size = 0.04;
    spec.steps = 6;
    spec.init = AttackInit::zero;
    const data::ImageBatch out = pgd(obj, x, spec, trial);

    const double got = obj.value(out.pixels)(0);
    const double want = oracles::corner_max(
        [&](double u, double v) { return obj.scalar(u, v); }, px(0, 0), px(0, 1),
        spec.epsilon);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("ball and range containment after every inner step") {
  const data::ImageBatch x = helpers::random_batch(4, 3, 10);
  LinearObjective obj(helpers::random_matrix(4, x.dim(), 11));
  AttackSpec spec;
  spec.epsilon = 0.07;
  spec.step_size = 0.05;
  spec.steps = 8;
  spec.restarts = 2;

  int observed = 0;
  const StepObserver observer = [&](int, const Matrix& xa) {
    ++observed;
    CHECK((xa - x.pixels).cwiseAbs().maxCoeff() <= spec.epsilon + 1e-9);
    CHECK(xa.minCoeff() >= 0.0);
    CHECK(xa.maxCoeff() <= 1.0);
  };
  pgd(obj, x, spec, 12, observer);
  CHECK(observed == spec.restarts * (spec.steps + 1));
}

TEST_CASE("pgd is deterministic in inputs, spec and seed") {
  const data::ImageBatch x = helpers::random_batch(3, 4, 13);
  LinearObjective obj(helpers::random_matrix(3, x.dim(), 14));
  AttackSpec spec;
  spec.steps = 4;
  spec.restarts = 3;
  const data::ImageBatch a = pgd(obj, x, spec, 15);
  const data::ImageBatch b = pgd(obj, x, spec, 15);
  CHECK(a.pixels == b.pixels);
  const data::ImageBatch c = pgd(obj, x, spec, 16);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("returned objective equals the max over restart candidates") {
  auto teacher = helpers::dense_triple(20, true);
  auto student = helpers::dense_triple(21, true);
  const data::ImageBatch x = helpers::random_batch(5, 4, 22);
  auto obj = make_attack_objective(attack_spec_from_alias("ours"), teacher,
                                   student, x);

  AttackSpec spec;
  spec.steps = 3;
  spec.restarts = 4;
  spec.init = AttackInit::uniform_ball;

  std::vector<Matrix> finals;
  Matrix current;
  const StepObserver observer = [&](int step, const Matrix& xa) {
    if (step == -1 && current.size() > 0) finals.push_back(current);
    current = xa;
  };
  const data::ImageBatch out = pgd(*obj, x, spec, 23, observer);
  finals.push_back(current);
  REQUIRE(finals.size() == 4);

  Vector best = Vector::Constant(x.size(), -1e300);
  for (const Matrix& cand : finals) {
    const Vector v = obj->value(cand);
    for (Eigen::Index i = 0; i < v.size(); ++i) best(i) = std::max(best(i), v(i));
  }
  const Vector got = obj->value(out.pixels);
  for (Eigen::Index i = 0; i < got.size(); ++i)
    CHECK(got(i) == doctest::Approx(best(i)).epsilon(1e-12));
}

TEST_CASE("aligned models at the clean point give objective -2") {
  auto teacher = helpers::dense_triple(30, true);
  auto student = helpers::copy_triple(teacher, 31);
  const data::ImageBatch x = helpers::random_batch(4, 4, 32);
  auto obj = make_attack_objective(attack_spec_from_alias("ours"), teacher,
                                   student, x);
  const Vector v = obj->value(x.pixels);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    CHECK(v(i) == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("AT4 equals the deacl attack objective") {
  const auto at4 = attack_spec_from_alias("AT4");
  const auto deacl = attack_spec_from_alias("deacl");
  CHECK(at4.feature_terms == deacl.feature_terms);
  CHECK(at4.projector_terms == deacl.projector_terms);
  CHECK(at4.feature_terms == std::vector<UnsupTerm>{UnsupTerm::min_cos_SS});
  CHECK(at4.projector_terms.empty());

  CHECK_THROWS_AS(attack_spec_from_alias("AT8"), ConfigError);
}

TEST_CASE("attack objective gradients match finite differences") {
  for (const char* alias : {"ours", "AT1", "AT4", "AT7", "ours_no_proj"}) {
    auto teacher = helpers::dense_triple(40 + hash_bytes(alias) % 7, true);
    auto student = helpers::dense_triple(50 + hash_bytes(alias) % 7, true);
    const data::ImageBatch x = helpers::random_batch(3, 4, 60);
    auto obj =
        make_attack_objective(attack_spec_from_alias(alias), teacher, student, x);

    Matrix xa = helpers::random_batch(3, 4, 61).pixels;
    Vector v;
    Matrix g;
    obj->value_and_grad(xa, v, g);

    auto rng = make_rng(62);
    std::uniform_int_distribution<Eigen::Index> pick(0, xa.size() - 1);
    for (int t = 0; t < 6; ++t) {
      const Eigen::Index i = pick(rng);
      const Eigen::Index r = i / xa.cols(), c = i % xa.cols();
      auto f = [&](const Vector& vv) {
        Matrix m = xa;
        m(r, c) = vv(0);
        return obj->value(m).sum();
      };
      Vector x0(1);
      x0(0) = xa(r, c);
      CHECK(g(r, c) == doctest::Approx(oracles::central_diff(f, x0, 0))
                           .epsilon(1e-4)
                           .scale(1.0));
    }
  }
}

TEST_CASE("projector-space attack on a projector-less model is an error") {
  auto teacher = helpers::dense_triple(70, false);
  auto student = helpers::dense_triple(71, false);
  const data::ImageBatch x = helpers::random_batch(2, 4, 72);
  CHECK_THROWS_AS(make_attack_objective(attack_spec_from_alias("AT5"), teacher,
                                        student, x),
                  ConfigError);
}

TEST_CASE("supervised attacks: zero radius keeps accuracy unchanged") {
  auto model = helpers::dense_triple(80, false);
  model.head = models::build_linear_head(model.feature_dim, 3, 81);
  data::ImageBatch x = helpers::random_batch(12, 4, 82);
  x.labels.emplace(12);
  for (int i = 0; i < 12; ++i) (*x.labels)[i] = i % 3;

  AttackSpec spec = default_eval_spec(EvalAttackKind::pgd20_ce, 0.0);
  const data::ImageBatch adv = eval_attack(model, x, EvalAttackKind::pgd20_ce,
                                           spec, 83);
  CHECK(adv.pixels == x.pixels);
}

TEST_CASE("linear robustness certificate: attack cannot cross a wide margin") {
  // identity backbone (1x1 image, 4 channels) + fixed linear head
  models::ModelTriple m;
  m.feature_dim = 4;
  m.in_shape = {4, 1, 1};
  auto rng = make_rng(90);
  auto net = std::make_shared<nn::Net>(m.in_shape);
  net->add(nn::make_dense(net->out_shape(), 4, rng));
  m.backbone = net;
  {
    auto params = net->params();
    params[0]->value = Matrix::Identity(4, 4);
    params[1]->value.setZero();
  }
  m.head = models::build_linear_head(4, 2, 91);
  Matrix w(4, 2);
  w << 1, -1, 1, -1, -1, 1, -1, 1;
  {
    auto params = m.head->params();
    params[0]->value = w;
    params[1]->value.setZero();
  }

  // logit margin = |2 (x0+x1-x2-x3)|; L1 norm of each weight column is 4.
  // Certified when margin > 2 * eps * L = 2 * (8/255) * 4 = 0.251
  const int n = 10;
  Matrix px(n, 4);
  std::vector<int> labels(n);
  auto rng2 = make_rng(92);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const bool positive = i % 2 == 0;
    labels[i] = positive ? 0 : 1;
    for (;;) {
      for (int j = 0; j < 4; ++j) px(i, j) = u(rng2);
      const double margin = 2.0 * (px(i, 0) + px(i, 1) - px(i, 2) - px(i, 3));
      if (positive && margin > 0.3) break;
      if (!positive && margin < -0.3) break;
    }
  }
  data::ImageBatch x = pixels_batch(px, 4, 1, 1);
  x.labels = labels;

  auto check_attack = [&](EvalAttackKind kind) {
    const AttackSpec spec = default_eval_spec(kind, 8.0 / 255.0);
    const data::ImageBatch adv = eval_attack(m, x, kind, spec, 93);
    const Matrix logits = models::forward(models::Space::logits, m, adv);
    for (int i = 0; i < n; ++i) {
      Eigen::Index pred;
      logits.row(i).maxCoeff(&pred);
      CHECK(static_cast<int>(pred) == labels[i]);
    }
  };
  check_attack(EvalAttackKind::margin_pgd);
  check_attack(EvalAttackKind::pgd20_ce);
}

TEST_CASE("restart diversity: union robust accuracy is non-increasing") {
  data::ToySpec spec;
  spec.num_classes = 2;
  spec.samples_per_class = 12;
  const auto ds = data::make_toy_dataset(spec, 100);

  auto model = helpers::dense_triple(101, false, 16);
  model.head = models::build_linear_head(model.feature_dim, 2, 102);

  AttackSpec aspec;
  aspec.steps = 3;
  aspec.epsilon = 0.05;
  const RestartReport rep =
      restart_diversity(model, ds, 4, AugMode::none, aspec, 103);
  REQUIRE(rep.union_ra.size() == 4);
  for (std::size_t i = 1; i < rep.union_ra.size(); ++i)
    CHECK(rep.union_ra[i] <= rep.union_ra[i - 1] + 1e-12);

  const RestartReport single =
      restart_diversity(model, ds, 1, AugMode::none, aspec, 103);
  CHECK(single.union_ra[0] == rep.union_ra[0]);
}
