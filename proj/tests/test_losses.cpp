#include "profeat/losses.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace profeat;
using namespace profeat::losses;

namespace {

RepSet random_reps(std::uint64_t seed, int n = 5, int df = 6, int dp = 4) {
  RepSet r;
  r.Tf = helpers::random_matrix(n, df, mix_seed(seed, 1));
  r.Sf = helpers::random_matrix(n, df, mix_seed(seed, 2));
  r.Sf_adv = helpers::random_matrix(n, df, mix_seed(seed, 3));
  r.Tp = helpers::random_matrix(n, dp, mix_seed(seed, 4));
  r.Sp = helpers::random_matrix(n, dp, mix_seed(seed, 5));
  r.Sp_adv = helpers::random_matrix(n, dp, mix_seed(seed, 6));
  return r;
}

}  // namespace

TEST_CASE("cosine_rowmean closed forms") {
  Matrix a(1, 2), b(1, 2);
  a << 1, 1;
  b << 1, 0;
  CHECK(cosine_rowmean(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_rowmean(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

  Matrix c(1, 2);
  c << 0, 1;
  Matrix d(1, 2);
  d << 1, 0;
  CHECK(cosine_rowmean(c, d) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero-norm rows count as similarity 0 and bump the collapse counter") {
  Matrix a = Matrix::Zero(2, 3);
  a.row(1) << 1, 2, 3;
  Matrix b = Matrix::Ones(2, 3);
  int collapsed = 0;
  const double v = cosine_rowmean(a, b, nullptr, nullptr, &collapsed);
  CHECK(collapsed == 1);
  const double expect = a.row(1).dot(b.row(1)) / (a.row(1).norm() * b.row(1).norm());
  CHECK(v == doctest::Approx(expect / 2.0).epsilon(1e-12));
}

TEST_CASE("cosine_rowmean gradients match finite differences") {
  const Matrix a = helpers::random_matrix(4, 5, 31);
  const Matrix b = helpers::random_matrix(4, 5, 32);
  Matrix ga, gb;
  cosine_rowmean(a, b, &ga, &gb);

  auto rng = make_rng(33);
  std::uniform_int_distribution<Eigen::Index> pick(0, a.size() - 1);
  for (int t = 0; t < 8; ++t) {
    const Eigen::Index i = pick(rng);
    auto fa = [&](const Vector& flat) {
      Matrix ap = a;
      ap(i / a.cols(), i % a.cols()) = flat(0);
      return cosine_rowmean(ap, b);
    };
    Vector x0(1);
    x0(0) = a(i / a.cols(), i % a.cols());
    const double fd = oracles::central_diff(fa, x0, 0);
    CHECK(ga(i / a.cols(), i % a.cols()) ==
          doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("loss_fp and loss_f identities with a copied student") {
  auto teacher = helpers::dense_triple(40, true);
  auto student = helpers::copy_triple(teacher, 41);
  const data::ImageBatch x = helpers::random_batch(5, 4, 42);

  // S == T, x_adv == x, beta = 8: every cosine is 1, loss = -(1 + 8)
  CHECK(loss_fp(teacher, student, x, x, 8.0) == doctest::Approx(-9.0).epsilon(1e-9));
  CHECK(loss_f(teacher, student, x, x, 8.0) == doctest::Approx(-9.0).epsilon(1e-9));
  CHECK(loss_profeat(teacher, student, x, x, 8.0, 0.5) ==
        doctest::Approx(-9.0).epsilon(1e-9));
}

TEST_CASE("orthogonal clean projector reps isolate the smoothness term") {
  // projector-space spec evaluated directly on representations
  DefenseLossSpec spec = defense_spec_from_alias("AD2");  // clean+adv_SS @ proj
  spec.beta = 8.0;
  RepSet r;
  r.Tp = Matrix::Zero(2, 2);
  r.Tp << 1, 0, 0, 1;
  r.Sp = Matrix::Zero(2, 2);
  r.Sp << 0, 1, 1, 0;  // orthogonal to Tp row-wise
  r.Sp_adv = r.Sp;     // x_adv == x
  CHECK(make_defense_loss(spec)(r) == doctest::Approx(-8.0).epsilon(1e-12));
}

TEST_CASE("defense losses match the per-sample brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto teacher = helpers::dense_triple(mix_seed(seed, 100), true);
    auto student = helpers::dense_triple(mix_seed(seed, 200), true);
    const data::ImageBatch x = helpers::random_batch(4, 4, mix_seed(seed, 300));
    const data::ImageBatch xa = helpers::random_batch(4, 4, mix_seed(seed, 301));

    RepSet reps;
    reps.Tf = models::forward(models::Space::feature, teacher, x);
    reps.Tp = models::forward(models::Space::projector, teacher, x);
    reps.Sf = models::forward(models::Space::feature, student, x);
    reps.Sp = models::forward(models::Space::projector, student, x);
    reps.Sf_adv = models::forward(models::Space::feature, student, xa);
    reps.Sp_adv = models::forward(models::Space::projector, student, xa);

    for (const auto& alias : defense_alias_names()) {
      DefenseLossSpec spec = defense_spec_from_alias(alias);
      spec.beta = 3.5;
      spec.lambda = 0.4;
      const double got = make_defense_loss(spec)(reps);
      const double want = oracles::defense_loss(spec, reps);
      CHECK(got == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("lambda endpoints and interpolation") {
  auto teacher = helpers::dense_triple(50, true);
  auto student = helpers::dense_triple(51, true);
  const data::ImageBatch x = helpers::random_batch(5, 4, 52);
  const data::ImageBatch xa = helpers::random_batch(5, 4, 53);

  const double lf = loss_f(teacher, student, x, xa, 8.0);
  const double lfp = loss_fp(teacher, student, x, xa, 8.0);
  CHECK(loss_profeat(teacher, student, x, xa, 8.0, 1.0) ==
        doctest::Approx(lf).epsilon(1e-12));
  CHECK(loss_profeat(teacher, student, x, xa, 8.0, 0.0) ==
        doctest::Approx(lfp).epsilon(1e-12));
  CHECK(loss_profeat(teacher, student, x, xa, 8.0, 0.25) ==
        doctest::Approx(0.25 * lf + 0.75 * lfp).epsilon(1e-12));
}

TEST_CASE("alias definitions: AD1 is loss_f, ours is loss_profeat") {
  auto teacher = helpers::dense_triple(60, true);
  auto student = helpers::dense_triple(61, true);
  const data::ImageBatch x = helpers::random_batch(4, 4, 62);
  const data::ImageBatch xa = helpers::random_batch(4, 4, 63);

  RepSet reps;
  reps.Tf = models::forward(models::Space::feature, teacher, x);
  reps.Tp = models::forward(models::Space::projector, teacher, x);
  reps.Sf = models::forward(models::Space::feature, student, x);
  reps.Sp = models::forward(models::Space::projector, student, x);
  reps.Sf_adv = models::forward(models::Space::feature, student, xa);
  reps.Sp_adv = models::forward(models::Space::projector, student, xa);

  DefenseLossSpec ad1 = defense_spec_from_alias("AD1");
  ad1.beta = 8.0;
  CHECK(make_defense_loss(ad1)(reps) ==
        doctest::Approx(loss_f(teacher, student, x, xa, 8.0)).epsilon(1e-12));

  DefenseLossSpec ours = defense_spec_from_alias("ours");
  ours.beta = 8.0;
  ours.lambda = 0.5;
  CHECK(make_defense_loss(ours)(reps) ==
        doctest::Approx(loss_profeat(teacher, student, x, xa, 8.0, 0.5))
            .epsilon(1e-12));
}

TEST_CASE("AD9 differs from ours on unaligned models, equal when aligned") {
  auto teacher = helpers::dense_triple(70, true);
  auto student = helpers::dense_triple(71, true);
  const data::ImageBatch x = helpers::random_batch(4, 4, 72);
  const data::ImageBatch xa = helpers::random_batch(4, 4, 73);

  DefenseLossSpec ad9 = defense_spec_from_alias("AD9");
  DefenseLossSpec ours = defense_spec_from_alias("ours");

  auto eval = [&](models::ModelTriple& T, models::ModelTriple& S,
                  const data::ImageBatch& clean, const data::ImageBatch& adv,
                  const DefenseLossSpec& spec) {
    RepSet reps;
    reps.Tf = models::forward(models::Space::feature, T, clean);
    reps.Tp = models::forward(models::Space::projector, T, clean);
    reps.Sf = models::forward(models::Space::feature, S, clean);
    reps.Sp = models::forward(models::Space::projector, S, clean);
    reps.Sf_adv = models::forward(models::Space::feature, S, adv);
    reps.Sp_adv = models::forward(models::Space::projector, S, adv);
    return make_defense_loss(spec)(reps);
  };

  CHECK(eval(teacher, student, x, xa, ad9) != eval(teacher, student, x, xa, ours));

  auto aligned = helpers::copy_triple(teacher, 74);
  CHECK(eval(teacher, aligned, x, x, ad9) ==
        doctest::Approx(eval(teacher, aligned, x, x, ours)).epsilon(1e-12));
}

TEST_CASE("empty defense spec is rejected") {
  DefenseLossSpec empty;
  CHECK_THROWS_AS(make_defense_loss(empty), ConfigError);
  CHECK_THROWS_AS(defense_spec_from_alias("AD10"), ConfigError);
  try {
    defense_spec_from_alias("AD10");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("AD1") != std::string::npos);
    CHECK(msg.find("AD9") != std::string::npos);
  }
}

TEST_CASE("scale invariance of cosine-based losses") {
  const RepSet base = random_reps(80);
  DefenseLossSpec spec = defense_spec_from_alias("ours");
  spec.beta = 4.0;
  const double v0 = make_defense_loss(spec)(base);

  RepSet scaled = base;
  scaled.Sf *= 3.7;
  scaled.Tp *= 0.2;
  scaled.Sp_adv *= 11.0;
  CHECK(make_defense_loss(spec)(scaled) == doctest::Approx(v0).epsilon(1e-6));
}

TEST_CASE("beta monotonicity and linear gradient scaling") {
  RepSet reps = random_reps(81);
  DefenseLossSpec spec = defense_spec_from_alias("AD1");  // clean + adv_SS at feature
  spec.beta = 2.0;

  // moving Sf_adv toward Sf raises cos(S, S_adv) and must lower the loss
  const double before = make_defense_loss(spec)(reps);
  RepSet closer = reps;
  closer.Sf_adv = 0.5 * (reps.Sf_adv + 10.0 * reps.Sf);
  const double after = make_defense_loss(spec)(closer);
  CHECK(after < before);

  // doubling beta doubles the adversarial term's gradient
  RepGrads g2, g4;
  make_defense_loss(spec)(reps, &g2);
  spec.beta = 4.0;
  make_defense_loss(spec)(reps, &g4);
  CHECK(g4.Sf_adv.norm() == doctest::Approx(2.0 * g2.Sf_adv.norm()).epsilon(1e-9));
}

TEST_CASE("defense gradients match finite differences on representations") {
  for (const auto& alias : {"AD1", "AD5", "AD8", "ours"}) {
    RepSet reps = random_reps(hash_bytes(alias));
    DefenseLossSpec spec = defense_spec_from_alias(alias);
    spec.beta = 2.5;
    spec.lambda = 0.3;
    const DefenseLoss loss = make_defense_loss(spec);
    RepGrads grads;
    loss(reps, &grads);

    auto check_block = [&](Matrix RepSet::*field, const Matrix& grad) {
      if (grad.size() == 0) return;
      auto rng = make_rng(hash_bytes(alias) + 9);
      std::uniform_int_distribution<Eigen::Index> pick(0, grad.size() - 1);
      for (int t = 0; t < 5; ++t) {
        const Eigen::Index i = pick(rng);
        const Eigen::Index r = i / grad.cols(), c = i % grad.cols();
        auto f = [&](const Vector& v) {
          RepSet rp = reps;
          (rp.*field)(r, c) = v(0);
          return loss(rp);
        };
        Vector x0(1);
        x0(0) = (reps.*field)(r, c);
        const double fd = oracles::central_diff(f, x0, 0);
        CHECK(grad(r, c) == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
      }
    };
    check_block(&RepSet::Sf, grads.Sf);
    check_block(&RepSet::Sp, grads.Sp);
    check_block(&RepSet::Sf_adv, grads.Sf_adv);
    check_block(&RepSet::Sp_adv, grads.Sp_adv);
    check_block(&RepSet::Tp, grads.Tp);
  }
}

TEST_CASE("trades loss closed forms and oracle") {
  const int n = 4, k = 5;
  const Matrix clean = helpers::random_matrix(n, k, 90);
  std::vector<int> labels = {0, 3, 2, 4};

  // adv == clean: KL term vanishes
  const double ce_only = loss_trades(clean, clean, labels, 6.0);
  const Matrix uniform = Matrix::Zero(n, k);
  CHECK(loss_trades(uniform, uniform, labels, 6.0) ==
        doctest::Approx(std::log(double(k))).epsilon(1e-12));

  const Matrix adv = helpers::random_matrix(n, k, 91);
  const double got = loss_trades(clean, adv, labels, 6.0);
  CHECK(got == doctest::Approx(oracles::trades(clean, adv, labels, 6.0))
                   .epsilon(1e-10));
  CHECK(got > ce_only - 1e-12);  // KL >= 0

  // gradients
  Matrix gc, ga;
  loss_trades(clean, adv, labels, 6.0, &gc, &ga);
  auto rng = make_rng(92);
  std::uniform_int_distribution<Eigen::Index> pick(0, clean.size() - 1);
  for (int t = 0; t < 6; ++t) {
    const Eigen::Index i = pick(rng);
    const Eigen::Index r = i / k, c = i % k;
    auto fc = [&](const Vector& v) {
      Matrix m = clean;
      m(r, c) = v(0);
      return loss_trades(m, adv, labels, 6.0);
    };
    auto fa = [&](const Vector& v) {
      Matrix m = adv;
      m(r, c) = v(0);
      return loss_trades(clean, m, labels, 6.0);
    };
    Vector x0(1);
    x0(0) = clean(r, c);
    CHECK(gc(r, c) ==
          doctest::Approx(oracles::central_diff(fc, x0, 0)).epsilon(1e-5).scale(1.0));
    x0(0) = adv(r, c);
    CHECK(ga(r, c) ==
          doctest::Approx(oracles::central_diff(fa, x0, 0)).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("ntxent matches enumeration and limits") {
  const Matrix z1 = helpers::random_matrix(2, 3, 93);
  const Matrix z2 = helpers::random_matrix(2, 3, 94);
  CHECK(loss_ntxent(z1, z2, 0.5) ==
        doctest::Approx(oracles::ntxent(z1, z2, 0.5)).epsilon(1e-10));

  // duplicated batch still matches the enumeration oracle
  Matrix d1(4, 3), d2(4, 3);
  d1 << z1, z1;
  d2 << z2, z2;
  CHECK(loss_ntxent(d1, d2, 0.5) ==
        doctest::Approx(oracles::ntxent(d1, d2, 0.5)).epsilon(1e-10));

  // temperature -> infinity: loss -> ln(2N - 1)
  const Matrix big1 = helpers::random_matrix(6, 4, 95);
  const Matrix big2 = helpers::random_matrix(6, 4, 96);
  CHECK(loss_ntxent(big1, big2, 1e9) ==
        doctest::Approx(std::log(2.0 * 6 - 1)).epsilon(1e-6));

  CHECK_THROWS_AS(loss_ntxent(z1.topRows(1), z2.topRows(1), 0.5), ConfigError);
  CHECK_THROWS_AS(loss_ntxent(z1, z2, 0.0), ConfigError);
}

TEST_CASE("ntxent gradients match finite differences") {
  const Matrix z1 = helpers::random_matrix(3, 4, 97);
  const Matrix z2 = helpers::random_matrix(3, 4, 98);
  Matrix g1, g2;
  loss_ntxent(z1, z2, 0.7, &g1, &g2);

  auto rng = make_rng(99);
  std::uniform_int_distribution<Eigen::Index> pick(0, z1.size() - 1);
  for (int t = 0; t < 6; ++t) {
    const Eigen::Index i = pick(rng);
    const Eigen::Index r = i / z1.cols(), c = i % z1.cols();
    auto f1 = [&](const Vector& v) {
      Matrix m = z1;
      m(r, c) = v(0);
      return loss_ntxent(m, z2, 0.7);
    };
    Vector x0(1);
    x0(0) = z1(r, c);
    CHECK(g1(r, c) ==
          doctest::Approx(oracles::central_diff(f1, x0, 0)).epsilon(1e-5).scale(1.0));
  }
}
