#include "profeat/eval.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace profeat::eval {

CollapseMetrics collapse_metrics(const Matrix& reps) {
  if (reps.rows() < 2) throw ConfigError("collapse_metrics: need N >= 2 rows");
  CollapseMetrics out;
  out.mean_row_norm = reps.rowwise().norm().mean();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(reps);
  const Eigen::VectorXd sv = svd.singularValues();
  const double total = sv.sum();
  if (total < 1e-300) {
    out.effective_rank = 0.0;
  } else {
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      const double p = sv(i) / total;
      if (p > 0.0) entropy -= p * std::log(p);
    }
    out.effective_rank = std::exp(entropy);
  }
  out.flagged = out.effective_rank < 1.05 || out.mean_row_norm < 1e-6;
  return out;
}

Matrix features_of(models::ModelTriple& model, const LabeledDataset& ds) {
  Matrix feats(ds.size(), model.backbone->out_dim());
  const int chunk = 256;
  for (int start = 0; start < ds.size(); start += chunk) {
    const int n = std::min(chunk, ds.size() - start);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const data::ImageBatch b = data::gather_batch(ds, idx);
    feats.middleRows(start, n) = model.backbone->forward(b.pixels);
  }
  return feats;
}

Alignment alignment_report(models::ModelTriple& teacher,
                           models::ModelTriple& student,
                           const LabeledDataset& ds) {
  Alignment out;
  const Matrix tf = features_of(teacher, ds);
  const Matrix sf = features_of(student, ds);
  out.cos_feature = losses::cosine_rowmean(tf, sf);
  if (student.projector) {
    const Matrix sp = student.projector->forward(sf);
    if (teacher.projector &&
        teacher.projector->out_dim() == student.projector->out_dim()) {
      const Matrix tp = teacher.projector->forward(tf);
      out.cos_projector = losses::cosine_rowmean(tp, sp);
    } else if (sp.cols() == tf.cols()) {
      // teacher projector absent (or of another width): the projector-space
      // target is the teacher's features
      out.cos_projector = losses::cosine_rowmean(tf, sp);
    }
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["SA"] = SA;
  j["RA"] = RA_by_attack;
  if (masking_gap) j["masking_gap"] = *masking_gap;
  if (alignment) {
    j["alignment"]["cos_feature"] = alignment->cos_feature;
    if (alignment->cos_projector)
      j["alignment"]["cos_projector"] = *alignment->cos_projector;
  }
  if (collapse) {
    j["collapse"]["mean_row_norm"] = collapse->mean_row_norm;
    j["collapse"]["effective_rank"] = collapse->effective_rank;
    j["collapse"]["flagged"] = collapse->flagged;
  }
  j["protocol"] = protocol;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  if (j.value("schema_version", -1) != kReportSchemaVersion)
    throw FormatError("eval report: schema version mismatch (expected " +
                      std::to_string(kReportSchemaVersion) + ", got " +
                      std::to_string(j.value("schema_version", -1)) + ")");
  EvalReport r;
  r.SA = j.at("SA").get<double>();
  r.RA_by_attack = j.at("RA").get<std::map<std::string, double>>();
  if (j.contains("masking_gap")) r.masking_gap = j.at("masking_gap").get<double>();
  if (j.contains("alignment")) {
    Alignment a;
    a.cos_feature = j.at("alignment").at("cos_feature").get<double>();
    if (j.at("alignment").contains("cos_projector"))
      a.cos_projector = j.at("alignment").at("cos_projector").get<double>();
    r.alignment = a;
  }
  if (j.contains("collapse")) {
    CollapseMetrics c;
    c.mean_row_norm = j.at("collapse").at("mean_row_norm").get<double>();
    c.effective_rank = j.at("collapse").at("effective_rank").get<double>();
    c.flagged = j.at("collapse").at("flagged").get<bool>();
    r.collapse = c;
  }
  r.protocol = j.value("protocol", nlohmann::json::object());
  return r;
}

namespace {

double accuracy_on(const Matrix& logits, const std::vector<int>& labels) {
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index pred;
    logits.row(i).maxCoeff(&pred);
    if (static_cast<int>(pred) == labels[i]) ++correct;
  }
  return 100.0 * correct / static_cast<double>(logits.rows());
}

std::vector<char> correct_mask(const Matrix& logits, const std::vector<int>& labels) {
  std::vector<char> ok(logits.rows(), 0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index pred;
    logits.row(i).maxCoeff(&pred);
    ok[i] = static_cast<int>(pred) == labels[i];
  }
  return ok;
}

// Trains a head on precomputed features with the step schedule and
// best-validation-epoch early stopping. Returns the best head's parameter
// values and its validation accuracy.
struct HeadFit {
  std::vector<Matrix> best_params;
  double best_val_acc = -1.0;
};

double head_accuracy(nn::Net& head, const Matrix& feats,
                     const std::vector<int>& labels) {
  return accuracy_on(head.forward(feats), labels);
}

HeadFit fit_head(nn::Net& head, const Matrix& f_train,
                 const std::vector<int>& y_train, const Matrix& f_val,
                 const std::vector<int>& y_val, double lr0, const LpConfig& cfg) {
  nn::Sgd opt(head.params(), {cfg.momentum, cfg.weight_decay});
  HeadFit fit;
  const Eigen::Index n = f_train.rows();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto capture = [&] {
    fit.best_params.clear();
    for (auto* p : head.params()) fit.best_params.push_back(p->value);
  };

  for (int e = 0; e < cfg.epochs; ++e) {
    double lr = lr0;
    for (int m : cfg.milestones)
      if (e >= m) lr *= cfg.gamma;

    auto rng = make_rng(mix_seed(cfg.seed, 0x17000 + e));
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Matrix fb(bs, f_train.cols());
      std::vector<int> yb(bs);
      for (Eigen::Index i = 0; i < bs; ++i) {
        fb.row(i) = f_train.row(order[start + i]);
        yb[i] = y_train[order[start + i]];
      }
      nn::Trace tr;
      const Matrix logits = head.forward(fb, tr, true);
      // cross-entropy gradient: (softmax - onehot) / batch
      Matrix g(logits.rows(), logits.cols());
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        Eigen::RowVectorXd ex = (logits.row(i).array() - mx).exp();
        g.row(i) = ex / ex.sum();
        g(i, yb[i]) -= 1.0;
      }
      g /= static_cast<double>(bs);
      head.zero_grad();
      head.backward(g, tr, true);
      opt.step(lr);
    }

    const double val_acc = head_accuracy(head, f_val, y_val);
    if (val_acc > fit.best_val_acc) {
      fit.best_val_acc = val_acc;
      capture();
    }
  }
  if (fit.best_params.empty()) capture();  // epochs == 0
  return fit;
}

void load_head(nn::Net& head, const std::vector<Matrix>& values) {
  auto params = head.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

ProbeResult probe_impl(models::ModelTriple& model, const LabeledDataset& train,
                       const LabeledDataset& val, const LabeledDataset& test,
                       const LpConfig& cfg, int hidden) {
  if (val.size() == 0)
    throw ConfigError("probe: validation split is empty");
  const std::uint64_t backbone_before = model.backbone->param_hash();

  const Matrix f_train = features_of(model, train);
  const Matrix f_val = features_of(model, val);
  const Matrix f_test = features_of(model, test);
  const int dim = static_cast<int>(f_train.cols());

  auto fresh_head = [&]() {
    return hidden > 0
               ? models::build_mlp_head(dim, hidden, train.num_classes, cfg.seed)
               : models::build_linear_head(dim, train.num_classes, cfg.seed);
  };

  double best_val = -1.0;
  double best_lr = 0.0;
  std::vector<Matrix> best_params;
  for (double lr : cfg.lr_grid) {
    auto head = fresh_head();
    HeadFit fit = fit_head(*head, f_train, train.labels, f_val, val.labels, lr, cfg);
    if (fit.best_val_acc > best_val) {
      best_val = fit.best_val_acc;
      best_lr = lr;
      best_params = std::move(fit.best_params);
    }
  }

  ProbeResult out;
  out.head = fresh_head();
  load_head(*out.head, best_params);
  out.selected_lr = best_lr;

  models::ModelTriple probe_model = model;
  probe_model.head = out.head;
  probe_model.head_frozen = true;

  out.report.SA = accuracy_on(out.head->forward(f_test), test.labels);
  for (const auto& name : cfg.eval_attacks) {
    const auto kind = attacks::eval_attack_from_string(name);
    const auto spec = attacks::default_eval_spec(kind, cfg.epsilon);
    out.report.RA_by_attack[name] =
        robust_accuracy(probe_model, test, kind, spec, mix_seed(cfg.seed, 0xEA));
  }
  if (out.report.RA_by_attack.count("pgd20_ce") &&
      out.report.RA_by_attack.count("margin_pgd"))
    out.report.masking_gap = out.report.RA_by_attack.at("pgd20_ce") -
                             out.report.RA_by_attack.at("margin_pgd");

  out.report.protocol = {{"probe", hidden > 0 ? "mlp" : "linear"},
                         {"selected_lr", best_lr},
                         {"val_acc", best_val},
                         {"epochs", cfg.epochs},
                         {"epsilon", cfg.epsilon}};
  if (hidden > 0) out.report.protocol["hidden"] = hidden;

  if (model.backbone->param_hash() != backbone_before)
    throw TrainingError("probe mutated backbone parameters");
  return out;
}

}  // namespace

ProbeResult linear_probe(models::ModelTriple& model, const LabeledDataset& train,
                         const LabeledDataset& val, const LabeledDataset& test,
                         const LpConfig& cfg) {
  return probe_impl(model, train, val, test, cfg, 0);
}

ProbeResult mlp_probe(models::ModelTriple& model, const LabeledDataset& train,
                      const LabeledDataset& val, const LabeledDataset& test,
                      const LpConfig& cfg, int hidden) {
  if (hidden < 1) throw ConfigError("mlp_probe: hidden width must be >= 1");
  return probe_impl(model, train, val, test, cfg, hidden);
}

double clean_accuracy(models::ModelTriple& model_with_head,
                      const LabeledDataset& test) {
  const data::ImageBatch b = data::to_batch(test);
  return accuracy_on(models::forward(models::Space::logits, model_with_head, b),
                     test.labels);
}

double robust_accuracy(models::ModelTriple& model_with_head,
                       const LabeledDataset& test, attacks::EvalAttackKind kind,
                       const attacks::AttackSpec& spec, std::uint64_t seed) {
  const int chunk = 256;
  int robust = 0;
  for (int start = 0; start < test.size(); start += chunk) {
    const int n = std::min(chunk, test.size() - start);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const data::ImageBatch b = data::gather_batch(test, idx);
    const auto clean_ok = correct_mask(
        models::forward(models::Space::logits, model_with_head, b), *b.labels);
    const data::ImageBatch adv =
        attacks::eval_attack(model_with_head, b, kind, spec, mix_seed(seed, start));
    const auto adv_ok = correct_mask(
        models::forward(models::Space::logits, model_with_head, adv), *b.labels);
    for (int i = 0; i < n; ++i) robust += clean_ok[i] && adv_ok[i];
  }
  return 100.0 * robust / static_cast<double>(test.size());
}

namespace {

int knn_vote(const Matrix& train_feats, const std::vector<int>& train_labels,
             int num_classes, const Eigen::RowVectorXd& query, int k) {
  const Eigen::Index n = train_feats.rows();
  const double qn = query.norm();
  std::vector<std::pair<double, int>> sims(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double tn = train_feats.row(i).norm();
    const double denom = qn * tn;
    const double s = denom < 1e-24 ? 0.0 : query.dot(train_feats.row(i)) / denom;
    sims[i] = {s, static_cast<int>(i)};
  }
  std::partial_sort(sims.begin(), sims.begin() + k, sims.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;  // stable under sim ties
                    });
  std::vector<int> votes(num_classes, 0);
  for (int j = 0; j < k; ++j) votes[train_labels[sims[j].second]]++;
  const int top = *std::max_element(votes.begin(), votes.end());
  // tie-break toward the nearest neighbour among the tied classes
  for (int j = 0; j < k; ++j) {
    const int label = train_labels[sims[j].second];
    if (votes[label] == top) return label;
  }
  return train_labels[sims[0].second];
}

}  // namespace

EvalReport knn_eval(models::ModelTriple& model, const LabeledDataset& train,
                    const LabeledDataset& test, int k,
                    const std::shared_ptr<nn::Net>& attack_head,
                    const attacks::AttackSpec* attack, std::uint64_t seed) {
  if (k == 0) throw ConfigError("knn_eval: k must be >= 1");
  if (k > train.size())
    throw ConfigError("knn_eval: k exceeds the training set size");

  const Matrix f_train = features_of(model, train);
  const Matrix f_test = features_of(model, test);

  std::vector<int> clean_pred(test.size());
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    clean_pred[i] = knn_vote(f_train, train.labels, train.num_classes,
                             f_test.row(i), k);
    if (clean_pred[i] == test.labels[i]) ++correct;
  }

  EvalReport report;
  report.SA = 100.0 * correct / static_cast<double>(test.size());
  report.protocol = {{"probe", "knn"}, {"k", k}};

  if (attack_head && attack) {
    models::ModelTriple attacked = model;
    attacked.head = attack_head;
    attacked.head_frozen = true;
    int robust = 0;
    const int chunk = 256;
    for (int start = 0; start < test.size(); start += chunk) {
      const int n = std::min(chunk, test.size() - start);
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), start);
      const data::ImageBatch b = data::gather_batch(test, idx);
      const data::ImageBatch adv =
          attacks::eval_attack(attacked, b, attacks::EvalAttackKind::margin_pgd,
                               *attack, mix_seed(seed, 0x933 + start));
      const Matrix f_adv = model.backbone->forward(adv.pixels);
      for (int i = 0; i < n; ++i) {
        const int pred = knn_vote(f_train, train.labels, train.num_classes,
                                  f_adv.row(i), k);
        if (pred == test.labels[start + i] &&
            clean_pred[start + i] == test.labels[start + i])
          ++robust;
      }
    }
    report.RA_by_attack["margin_pgd"] =
        100.0 * robust / static_cast<double>(test.size());
    report.protocol["attack_surrogate"] = "margin_pgd on linear head";
  }
  return report;
}

std::pair<train::Checkpoint, EvalReport> adversarial_full_finetune(
    const train::Checkpoint& init, const LabeledDataset& train_ds,
    const LabeledDataset& val_ds, const LabeledDataset& test_ds,
    const train::TrainConfig& aff_cfg, const LpConfig& lp_cfg) {
  train::TrainConfig cfg = aff_cfg;
  cfg.model.arch = init.model.arch;
  cfg.model.feature_dim = init.model.feature_dim;

  train::Checkpoint start;
  start.model.arch = init.model.arch;
  start.model.feature_dim = init.model.feature_dim;
  start.model.in_shape = init.model.in_shape;
  start.model.backbone = init.model.backbone;
  start.epoch = 0;

  train::TrainHooks hooks;
  hooks.resume = &start;
  train::Checkpoint tuned = train::train_trades(cfg, train_ds, hooks);

  ProbeResult probe = linear_probe(tuned.model, train_ds, val_ds, test_ds, lp_cfg);
  probe.report.protocol["finetune"] = "trades";
  probe.report.protocol["finetune_epochs"] = cfg.epochs;
  return {std::move(tuned), std::move(probe.report)};
}

}  // namespace profeat::eval
