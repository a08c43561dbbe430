#include "profeat/eval.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace profeat;
using namespace profeat::eval;

namespace {

// Identity backbone over flat "images" (C channels, 1x1): features == pixels.
models::ModelTriple identity_model(int dim) {
  models::ModelTriple m;
  m.feature_dim = dim;
  m.in_shape = {dim, 1, 1};
  auto rng = make_rng(0);
  auto net = std::make_shared<nn::Net>(m.in_shape);
  net->add(nn::make_dense(net->out_shape(), dim, rng));
  auto params = net->params();
  params[0]->value = Matrix::Identity(dim, dim);
  params[1]->value.setZero();
  m.backbone = net;
  return m;
}

// Dataset whose pixels one-hot encode the label (a planted solution).
data::LabeledDataset planted_dataset(int classes, int per_class,
                                     std::uint64_t seed) {
  data::LabeledDataset ds;
  ds.name = "planted";
  ds.channels = classes;
  ds.height = 1;
  ds.width = 1;
  ds.num_classes = classes;
  auto rng = make_rng(seed);
  std::uniform_int_distribution<int> level(0, 40);  // small per-pixel jitter
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      ds.labels.push_back(c);
      for (int j = 0; j < classes; ++j) {
        const int v = (j == c ? 200 : 0) + level(rng);
        ds.pixels.push_back(static_cast<std::uint8_t>(v));
      }
    }
  }
  return ds;
}

// XOR-structured features: not linearly separable, easy for a small MLP.
data::LabeledDataset xor_dataset(int n, std::uint64_t seed) {
  data::LabeledDataset ds;
  ds.name = "xor";
  ds.channels = 8;
  ds.height = 1;
  ds.width = 1;
  ds.num_classes = 2;
  auto rng = make_rng(seed);
  std::uniform_int_distribution<int> bit(0, 1);
  std::uniform_int_distribution<int> jitter(0, 30);
  for (int i = 0; i < n; ++i) {
    const int a = bit(rng), b = bit(rng);
    ds.labels.push_back(a ^ b);
    for (int j = 0; j < 8; ++j) {
      int v = jitter(rng);
      if (j < 4 && a) v += 180;
      if (j >= 4 && b) v += 180;
      ds.pixels.push_back(static_cast<std::uint8_t>(std::min(v, 255)));
    }
  }
  return ds;
}

LpConfig fast_lp() {
  LpConfig cfg;
  cfg.epochs = 12;
  cfg.milestones = {8, 10};
  cfg.lr_grid = {0.1, 0.5, 1.0};
  cfg.eval_attacks = {};  // accuracy-only unless a test asks for attacks
  return cfg;
}

}  // namespace

TEST_CASE("collapse metrics closed forms") {
  Matrix identical(4, 3);
  identical << 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3;
  const auto rank1 = collapse_metrics(identical);
  CHECK(rank1.effective_rank == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rank1.flagged);

  const auto ortho = collapse_metrics(Matrix::Identity(5, 5));
  CHECK(ortho.effective_rank == doctest::Approx(5.0).epsilon(1e-9));
  CHECK_FALSE(ortho.flagged);

  const auto zero = collapse_metrics(Matrix::Zero(4, 3));
  CHECK(zero.flagged);
  CHECK(zero.mean_row_norm == 0.0);
}

TEST_CASE("effective rank agrees with the eigen-decomposition oracle") {
  const Matrix g = helpers::random_matrix(128, 64, 7);
  const auto got = collapse_metrics(g);
  const double want = oracles::effective_rank(g);
  CHECK(std::abs(got.effective_rank - want) / want < 0.05);
  CHECK(got.effective_rank == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("knn closed cases") {
  auto model = identity_model(4);

  data::LabeledDataset train;
  train.name = "knn-train";
  train.channels = 4;
  train.height = train.width = 1;
  train.num_classes = 2;
  // two reference points
  train.pixels = {200, 10, 10, 10, 10, 200, 10, 10};
  train.labels = {0, 1};

  SUBCASE("k=1 with a test point equal to a train point") {
    data::LabeledDataset test = train;
    test.pixels = {200, 10, 10, 10};
    test.labels = {0};
    const EvalReport rep = knn_eval(model, train, test, 1);
    CHECK(rep.SA == 100.0);
  }
  SUBCASE("vote tie at k=2 goes to the nearest neighbour") {
    data::LabeledDataset test = train;
    // much closer to the label-0 reference
    test.pixels = {190, 30, 10, 10};
    test.labels = {0};
    const EvalReport rep = knn_eval(model, train, test, 2);
    CHECK(rep.SA == 100.0);
  }
  SUBCASE("k bounds") {
    CHECK_THROWS_AS(knn_eval(model, train, train, 0), ConfigError);
    CHECK_THROWS_AS(knn_eval(model, train, train, 3), ConfigError);
  }
}

TEST_CASE("knn matches the brute-force oracle on 200 samples") {
  data::ToySpec spec;
  spec.num_classes = 4;
  spec.samples_per_class = 50;
  auto split = helpers::toy_split(spec, 25, 30);
  const auto& train = split.train;
  const auto& test = split.test;

  auto model = helpers::dense_triple(32, false, 16, 12);
  model.in_shape = {3, 16, 16};

  const EvalReport rep = knn_eval(model, train, test, 10);

  const Matrix f_train = features_of(model, train);
  const Matrix f_test = features_of(model, test);
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    const int pred = oracles::knn_predict(f_train, train.labels, 4,
                                          f_test.row(i).transpose(), 10);
    if (pred == test.labels[i]) ++correct;
  }
  CHECK(rep.SA == doctest::Approx(100.0 * correct / test.size()).epsilon(1e-12));
}

TEST_CASE("knn is invariant to training-set permutation") {
  data::ToySpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 30;
  const auto train = data::make_toy_dataset(spec, 33);
  spec.samples_per_class = 10;
  const auto test = data::make_toy_dataset(spec, 34);

  data::LabeledDataset shuffled = train;
  auto rng = make_rng(35);
  std::vector<int> perm(train.size());
  for (int i = 0; i < train.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int i = 0; i < train.size(); ++i) {
    shuffled.labels[i] = train.labels[perm[i]];
    for (int j = 0; j < train.image_dim(); ++j)
      shuffled.pixels[std::size_t(i) * train.image_dim() + j] =
          train.pixels[std::size_t(perm[i]) * train.image_dim() + j];
  }

  auto model = helpers::dense_triple(36, false, 16, 12);
  model.in_shape = {3, 16, 16};
  CHECK(knn_eval(model, train, test, 7).SA ==
        knn_eval(model, shuffled, test, 7).SA);
}

TEST_CASE("linear probe solves planted features perfectly") {
  const auto full = planted_dataset(3, 40, 40);
  auto [train, val] = data::balanced_split(full, 18, 41);
  const auto test = planted_dataset(3, 15, 42);

  auto model = identity_model(3);
  const auto res = linear_probe(model, train, val, test, fast_lp());
  CHECK(res.report.SA == 100.0);
}

TEST_CASE("linear probe is within 2 points of the convex solver oracle") {
  data::ToySpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 60;
  spec.margin = 0.85;
  auto split = helpers::toy_split(spec, 30, 43);
  auto [train, val] = data::balanced_split(split.train, 30, 44);
  const auto& test = split.test;

  auto model = helpers::dense_triple(46, false, 16, 24);
  model.in_shape = {3, 16, 16};

  LpConfig cfg = fast_lp();
  cfg.epochs = 25;
  cfg.milestones = {15, 20};
  cfg.lr_grid = {0.05, 0.1, 0.5, 1.0, 5.0};
  const auto res = linear_probe(model, train, val, test, cfg);

  const double oracle = oracles::logistic_regression_accuracy(
      features_of(model, train), train.labels, features_of(model, test),
      test.labels, 3, cfg.weight_decay);
  CHECK(std::abs(res.report.SA - oracle) <= 2.0);
}

TEST_CASE("linear probe selection is deterministic") {
  const auto full = planted_dataset(3, 30, 47);
  auto [train, val] = data::balanced_split(full, 9, 48);
  const auto test = planted_dataset(3, 10, 49);
  auto model = identity_model(3);

  const auto a = linear_probe(model, train, val, test, fast_lp());
  const auto b = linear_probe(model, train, val, test, fast_lp());
  CHECK(a.selected_lr == b.selected_lr);
  CHECK(a.head->param_hash() == b.head->param_hash());
}

TEST_CASE("empty validation split is an error") {
  const auto full = planted_dataset(3, 10, 50);
  auto [train, val] = data::balanced_split(full, 0, 51);
  auto model = identity_model(3);
  CHECK_THROWS_AS(linear_probe(model, train, val, full, fast_lp()), ConfigError);
}

TEST_CASE("mlp probe: planted solution and containment at init") {
  const auto full = planted_dataset(3, 40, 52);
  auto [train, val] = data::balanced_split(full, 18, 53);
  const auto test = planted_dataset(3, 15, 54);
  auto model = identity_model(3);

  const auto lp = linear_probe(model, train, val, test, fast_lp());
  const auto mlp = mlp_probe(model, train, val, test, fast_lp(), 3);
  CHECK(mlp.report.SA == 100.0);

  // hidden width == class count, first layer = trained LP head, second layer
  // identity: the MLP representation contains the trained linear probe
  auto head = models::build_mlp_head(3, 3, 3, 0);
  auto params = head->params();
  auto lp_params = lp.head->params();
  params[0]->value = lp_params[0]->value;
  params[1]->value = lp_params[1]->value;
  params[2]->value = Matrix::Identity(3, 3);
  params[3]->value.setZero();

  const Matrix feats = features_of(model, test);
  const Matrix logits = head->forward(feats);
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index pred;
    logits.row(i).maxCoeff(&pred);
    if (static_cast<int>(pred) == test.labels[i]) ++correct;
  }
  CHECK(100.0 * correct / test.size() >= lp.report.SA);
}

TEST_CASE("mlp probe beats the linear probe on xor features") {
  int mlp_wins = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto full = xor_dataset(240, 60 + seed);
    auto [train, val] = data::balanced_split(full, 24, 61 + seed);
    const auto test = xor_dataset(100, 70 + seed);
    auto model = identity_model(8);

    LpConfig cfg = fast_lp();
    cfg.seed = seed;
    cfg.epochs = 30;
    cfg.milestones = {20, 26};
    const auto lp = linear_probe(model, train, val, test, cfg);
    const auto mlp = mlp_probe(model, train, val, test, cfg, 16);
    if (mlp.report.SA >= lp.report.SA) ++mlp_wins;
  }
  CHECK(mlp_wins >= 2);  // median of 3 seeds
}

TEST_CASE("alignment report: copies and independent nets") {
  data::ToySpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 200;
  const auto ds = data::make_toy_dataset(spec, 80);

  auto teacher = helpers::dense_triple(81, true, 16, 64);
  teacher.in_shape = {3, 16, 16};
  auto copy = helpers::copy_triple(teacher, 82);
  copy.in_shape = teacher.in_shape;

  const auto same = alignment_report(teacher, copy, ds);
  CHECK(same.cos_feature == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(same.cos_projector.has_value());
  CHECK(*same.cos_projector == doctest::Approx(1.0).epsilon(1e-12));

  auto other = helpers::dense_triple(83, true, 16, 64);
  other.in_shape = teacher.in_shape;
  const auto diff = alignment_report(teacher, other, ds);
  CHECK(std::abs(diff.cos_feature) <= 0.2);
}

TEST_CASE("masking gap is the difference of the two attacks' accuracies") {
  data::ToySpec spec;
  spec.num_classes = 2;
  spec.samples_per_class = 16;
  spec.image_size = 8;
  const auto full = data::make_toy_dataset(spec, 84);
  auto [train, val] = data::balanced_split(full, 4, 85);
  spec.samples_per_class = 8;
  const auto test = data::make_toy_dataset(spec, 86);

  auto model = helpers::dense_triple(87, false, 8, 8);
  model.in_shape = {3, 8, 8};

  LpConfig cfg = fast_lp();
  cfg.eval_attacks = {"pgd20_ce", "margin_pgd"};
  const auto res = linear_probe(model, train, val, test, cfg);
  REQUIRE(res.report.masking_gap.has_value());
  CHECK(*res.report.masking_gap ==
        doctest::Approx(res.report.RA_by_attack.at("pgd20_ce") -
                        res.report.RA_by_attack.at("margin_pgd"))
            .epsilon(1e-12));
  // RA <= SA under either attack (clean correctness is part of the check)
  for (const auto& [name, ra] : res.report.RA_by_attack) {
    (void)name;
    CHECK(ra <= res.report.SA + 1e-12);
  }
}

TEST_CASE("adversarial full finetune with zero epochs equals plain probing") {
  data::ToySpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 30;
  const auto full = data::make_toy_dataset(spec, 88);
  auto [train, val] = data::balanced_split(full, 9, 89);
  spec.samples_per_class = 12;
  const auto test = data::make_toy_dataset(spec, 90);

  train::TrainConfig aff;
  aff.epochs = 0;
  aff.model.arch = models::Arch::tiny_cnn;
  aff.model.feature_dim = 16;
  aff.seed = 91;

  train::Checkpoint init;
  init.model.arch = models::Arch::tiny_cnn;
  init.model.feature_dim = 16;
  init.model.in_shape = {3, 16, 16};
  init.model.backbone =
      models::build_backbone(models::Arch::tiny_cnn, 16, {3, 16, 16}, 92);

  auto [tuned, report] = adversarial_full_finetune(init, train, val, test, aff,
                                                   fast_lp());
  CHECK(tuned.model.backbone->param_hash() == init.model.backbone->param_hash());

  models::ModelTriple frozen = init.model;
  const auto plain = linear_probe(frozen, train, val, test, fast_lp());
  CHECK(report.SA == plain.report.SA);
}

TEST_CASE("finetuning helps over probing a random backbone") {
  int aff_wins = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    data::ToySpec spec;
    spec.num_classes = 3;
    spec.samples_per_class = 40;
    spec.image_size = 12;
    auto split = helpers::toy_split(spec, 16, 93 + seed);
    auto [train, val] = data::balanced_split(split.train, 9, 94 + seed);
    const auto& test = split.test;

    train::Checkpoint init;
    init.model.arch = models::Arch::tiny_cnn;
    init.model.feature_dim = 16;
    init.model.in_shape = {3, 12, 12};
    init.model.backbone =
        models::build_backbone(models::Arch::tiny_cnn, 16, {3, 12, 12}, 960 + seed);

    train::TrainConfig aff;
    aff.epochs = 6;
    aff.batch_size = 32;
    aff.beta = 4.0;
    aff.schedule.max_lr = 0.05;
    aff.schedule.warmup_frac = 0.2;
    aff.attack.steps = 3;
    aff.model.arch = models::Arch::tiny_cnn;
    aff.model.feature_dim = 16;
    aff.seed = 97 + seed;

    LpConfig lp = fast_lp();
    lp.seed = seed;
    auto [tuned, report] =
        adversarial_full_finetune(init, train, val, test, aff, lp);

    models::ModelTriple frozen = init.model;
    const auto plain = linear_probe(frozen, train, val, test, lp);
    if (report.SA >= plain.report.SA) ++aff_wins;
  }
  CHECK(aff_wins >= 2);
}

TEST_CASE("eval report json round trip and schema check") {
  EvalReport rep;
  rep.SA = 61.05;
  rep.RA_by_attack["pgd20_ce"] = 31.96;
  rep.RA_by_attack["margin_pgd"] = 27.41;
  rep.masking_gap = 31.96 - 27.41;
  Alignment a;
  a.cos_feature = 0.19;
  a.cos_projector = 0.92;
  rep.alignment = a;
  rep.protocol = {{"probe", "linear"}};

  const auto j = rep.to_json();
  const EvalReport back = EvalReport::from_json(j);
  CHECK(back.SA == rep.SA);
  CHECK(back.RA_by_attack == rep.RA_by_attack);
  CHECK(*back.masking_gap == *rep.masking_gap);
  CHECK(*back.alignment->cos_projector == 0.92);

  auto bad = j;
  bad["schema_version"] = 99;
  CHECK_THROWS_AS(EvalReport::from_json(bad), FormatError);
}
