#include "profeat/training.hpp"

#include "profeat/eval.hpp"

#include <algorithm>
#include <cmath>

namespace profeat::train {

double lr_at(const LrSchedule& s, double f) {
  f = std::clamp(f, 0.0, 1.0);
  if (s.kind == LrSchedule::Kind::cosine_warmup) {
    if (s.warmup_frac > 0.0 && f < s.warmup_frac)
      return s.max_lr * (f / s.warmup_frac);
    const double span = 1.0 - s.warmup_frac;
    if (span <= 0.0) return s.max_lr;
    const double t = (f - s.warmup_frac) / span;
    return s.max_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  }
  double lr = s.max_lr;
  for (double m : s.milestones_frac)
    if (f >= m) lr *= s.gamma;
  return lr;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (schedule.max_lr <= 0.0) throw ConfigError("train: max_lr must be > 0");
  if (schedule.kind == LrSchedule::Kind::cosine_warmup &&
      (schedule.warmup_frac < 0.0 || schedule.warmup_frac >= 1.0))
    throw ConfigError("train: warmup must cover less than the full schedule");
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("train: lambda in [0,1]");
  if (beta < 0.0) throw ConfigError("train: beta must be >= 0");
  if (ntxent_temperature <= 0.0)
    throw ConfigError("train: ntxent temperature must be > 0");
  attack.validate();
}

namespace {

nlohmann::json config_summary(const TrainConfig& cfg, const char* kind) {
  nlohmann::json j;
  j["kind"] = kind;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["beta"] = cfg.beta;
  j["lambda"] = cfg.lambda;
  j["seed"] = cfg.seed;
  j["max_lr"] = cfg.schedule.max_lr;
  j["weight_decay"] = cfg.optimizer.weight_decay;
  j["attack_steps"] = cfg.attack.steps;
  j["attack_epsilon"] = cfg.attack.epsilon;
  return j;
}

data::ImageBatch probe_batch(const data::LabeledDataset& ds) {
  const int n = std::min(64, ds.size());
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  return data::gather_batch(ds, idx);
}

// Tracks consecutive collapsed epochs; throws after `patience` of them.
class CollapseWatch {
 public:
  explicit CollapseWatch(int patience) : patience_(patience) {}

  bool update(bool collapsed_now, int epoch, const char* where) {
    consecutive_ = collapsed_now ? consecutive_ + 1 : 0;
    if (consecutive_ >= patience_)
      throw CollapseError("collapse detector fired for " +
                          std::to_string(consecutive_) +
                          " consecutive epochs at " + where + " (epoch " +
                          std::to_string(epoch) + ")");
    return collapsed_now;
  }

 private:
  int patience_;
  int consecutive_ = 0;
};

void store_optimizer_state(Checkpoint& ck, nn::Sgd& opt) {
  ck.extra.clear();
  const auto& bufs = opt.momentum_buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i)
    ck.extra["opt." + std::to_string(i)] = bufs[i];
}

void restore_optimizer_state(const Checkpoint& ck, nn::Sgd& opt) {
  auto& bufs = opt.momentum_buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i) {
    const auto it = ck.extra.find("opt." + std::to_string(i));
    if (it != ck.extra.end()) bufs[i] = it->second;
  }
}

int resume_start_epoch(const TrainHooks& hooks, Checkpoint& ck, nn::Sgd& opt) {
  if (!hooks.resume) return 0;
  const Checkpoint& prev = *hooks.resume;
  ck.model.backbone->copy_params_from(*prev.model.backbone);
  if (ck.model.projector && prev.model.projector)
    ck.model.projector->copy_params_from(*prev.model.projector);
  if (ck.model.head && prev.model.head)
    ck.model.head->copy_params_from(*prev.model.head);
  ck.metric_history = prev.metric_history;
  restore_optimizer_state(prev, opt);
  return prev.epoch;
}

}  // namespace

Checkpoint train_simclr(const TrainConfig& cfg, const data::LabeledDataset& ds,
                        const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.pairing != aug::PairingMode::independent_weak &&
      cfg.pairing != aug::PairingMode::independent_strong)
    throw ConfigError(
        "train_simclr: pairing must produce two independently augmented views "
        "(independent_weak or independent_strong)");

  Checkpoint ck;
  ck.seed = cfg.seed;
  ck.config_snapshot = config_summary(cfg, "simclr");

  models::ModelTriple& teacher = ck.model;
  teacher.arch = cfg.model.arch;
  teacher.feature_dim = cfg.model.feature_dim;
  teacher.in_shape = {ds.channels, ds.height, ds.width};
  teacher.backbone = models::build_backbone(cfg.model.arch, cfg.model.feature_dim,
                                            teacher.in_shape, cfg.seed);
  models::ProjectorConfig pcfg = cfg.model.projector;
  teacher.projector =
      models::build_projector(pcfg, cfg.model.feature_dim, mix_seed(cfg.seed, 0x51));
  teacher.apply_freeze_flags();

  nn::Sgd opt(teacher.trainable_params(), cfg.optimizer);
  const int start = resume_start_epoch(hooks, ck, opt);

  const data::ImageBatch probe = probe_batch(ds);
  CollapseWatch watch(cfg.collapse_patience);

  for (int e = start; e < cfg.epochs; ++e) {
    data::BatchIter iter(ds, cfg.batch_size, mix_seed(cfg.seed, 0xE000 + e));
    const int num_batches = iter.num_batches();
    int b = 0;
    double loss_sum = 0.0;
    double lr = 0.0;
    int seen = 0;
    while (auto batch = iter.next()) {
      if (batch->size() < 2) {  // NT-Xent has no negatives for a lone sample
        ++b;
        continue;
      }
      seen += batch->size();
      auto [v1, v2] = aug::make_view_pair(
          *batch, cfg.pairing,
          mix_seed(cfg.seed, 0x11E30000ULL + std::uint64_t(e) * 1000003 + b),
          cfg.policies);

      nn::Trace tb1, tb2, tp1, tp2;
      const Matrix f1 = teacher.backbone->forward(v1.pixels, tb1, true);
      const Matrix z1 = teacher.projector->forward(f1, tp1, true);
      const Matrix f2 = teacher.backbone->forward(v2.pixels, tb2, true);
      const Matrix z2 = teacher.projector->forward(f2, tp2, true);

      Matrix g1, g2;
      const double loss = losses::loss_ntxent(z1, z2, cfg.ntxent_temperature, &g1, &g2);
      if (!std::isfinite(loss))
        throw TrainingError("train_simclr: non-finite loss at epoch " +
                            std::to_string(e) + " batch " + std::to_string(b));
      loss_sum += loss * batch->size();

      teacher.backbone->zero_grad();
      teacher.projector->zero_grad();
      teacher.backbone->backward(teacher.projector->backward(g1, tp1, true), tb1, true);
      teacher.backbone->backward(teacher.projector->backward(g2, tp2, true), tb2, true);

      lr = lr_at(cfg.schedule,
                 (e + static_cast<double>(b) / num_batches) / std::max(1, cfg.epochs));
      opt.step(lr);
      ++b;
    }

    const Matrix pf = teacher.backbone->forward(probe.pixels);
    const auto cm = eval::collapse_metrics(teacher.projector->forward(pf));
    ck.collapsed = watch.update(cm.flagged, e, "projector output");

    nlohmann::json m;
    m["epoch"] = e;
    m["loss"] = loss_sum / std::max(1, seen);
    m["lr"] = lr;
    m["effective_rank"] = cm.effective_rank;
    ck.metric_history.push_back(m);
    ck.epoch = e + 1;
    if (hooks.on_epoch_end) {
      store_optimizer_state(ck, opt);
      hooks.on_epoch_end(ck);
    }
  }
  ck.epoch = cfg.epochs;
  store_optimizer_state(ck, opt);
  return ck;
}

namespace {

struct RepNeeds {
  bool Tf = false, Tp = false, Sf = false, Sp = false, Sfa = false, Spa = false;
};

RepNeeds scan_needs(const losses::DefenseLossSpec& spec) {
  RepNeeds n;
  using T = losses::DefTerm;
  for (T t : spec.feature_terms) {
    if (t == T::clean) n.Tf = n.Sf = true;
    if (t == T::adv_SS) n.Sf = n.Sfa = true;
    if (t == T::adv_TS) n.Tf = n.Sfa = true;
  }
  for (T t : spec.projector_terms) {
    if (t == T::clean) n.Tp = n.Sp = true;
    if (t == T::adv_SS) n.Sp = n.Spa = true;
    if (t == T::adv_TS) n.Tp = n.Spa = true;
  }
  return n;
}

}  // namespace

Checkpoint train_profeat(const TrainConfig& cfg, const Checkpoint& teacher_ckpt,
                         const data::LabeledDataset& ds, const TrainHooks& hooks) {
  cfg.validate();
  losses::DefenseLossSpec spec = cfg.defense;
  spec.beta = cfg.beta;
  spec.lambda = cfg.lambda;
  const losses::DefenseLoss defense = losses::make_defense_loss(spec);
  const RepNeeds needs = scan_needs(spec);

  models::ModelTriple teacher = teacher_ckpt.model;
  if (teacher.in_shape.c != ds.channels || teacher.in_shape.h != ds.height ||
      teacher.in_shape.w != ds.width)
    throw ConfigError("train_profeat: teacher input shape does not match dataset");

  models::ProjectorConfig pcfg = cfg.model.projector;
  pcfg.init_seed = mix_seed(cfg.seed, 0x97);

  Checkpoint ck;
  ck.seed = cfg.seed;
  ck.config_snapshot = config_summary(cfg, "profeat");
  ck.model = models::init_student_from_teacher(teacher, pcfg);
  models::ModelTriple& student = ck.model;

  if ((needs.Sp || needs.Spa) && !student.projector)
    throw ConfigError("defense spec '" + spec.alias +
                      "' needs a student projector, but the config provides none");
  // with the teacher projector absent the projector-space target is the
  // teacher's features themselves; widths must line up for that
  const bool teacher_proj_identity = needs.Tp && !teacher.projector;
  if (teacher_proj_identity &&
      student.projector->out_dim() != teacher.backbone->out_dim())
    throw ConfigError(
        "teacher projector is absent, so the student projector must map into "
        "the teacher feature space (output width " +
        std::to_string(teacher.backbone->out_dim()) + ", got " +
        std::to_string(student.projector->out_dim()) + ")");
  if (cfg.attack_objective.needs_projector() && !student.projector)
    throw ConfigError("attack objective '" + cfg.attack_objective.alias +
                      "' needs a projector, but the config provides none");

  const bool teacher_proj_trains =
      teacher.projector && !teacher.projector_frozen && needs.Tp;

  nn::Sgd opt(student.trainable_params(), cfg.optimizer);
  const int start = resume_start_epoch(hooks, ck, opt);

  const data::ImageBatch probe = probe_batch(ds);
  CollapseWatch watch(cfg.collapse_patience);
  const bool adv_needed = needs.Sfa || needs.Spa;

  for (int e = start; e < cfg.epochs; ++e) {
    data::BatchIter iter(ds, cfg.batch_size, mix_seed(cfg.seed, 0xE000 + e));
    const int num_batches = iter.num_batches();
    int b = 0;
    double loss_sum = 0.0;
    double lr = 0.0;
    int collapse_rows = 0;
    while (auto batch = iter.next()) {
      const std::uint64_t bseed =
          mix_seed(cfg.seed, 0xF0000000ULL + std::uint64_t(e) * 1000003 + b);
      auto [x_t, x_s] = aug::make_view_pair(*batch, cfg.pairing, bseed, cfg.policies);
      const data::ImageBatch& attack_base = cfg.attack_on_view ? x_s : *batch;

      data::ImageBatch x_adv = attack_base;
      if (adv_needed && cfg.attack.steps > 0 && cfg.attack.epsilon > 0.0) {
        auto obj = attacks::make_attack_objective(cfg.attack_objective, teacher,
                                                  student, attack_base);
        x_adv = attacks::pgd(*obj, attack_base, cfg.attack, mix_seed(bseed, 0xAD));
      }

      losses::RepSet reps;
      nn::Trace tr_sf, tr_sp, tr_sfa, tr_spa, tr_tp;
      const bool proj_training = student.projector && !student.projector_frozen;

      Matrix teacher_feat;
      if (needs.Tf || needs.Tp)
        teacher_feat = teacher.backbone->forward(x_t.pixels);
      if (needs.Tf) reps.Tf = teacher_feat;
      if (needs.Tp) {
        if (teacher_proj_identity)
          reps.Tp = teacher_feat;
        else
          reps.Tp = teacher_proj_trains
                        ? teacher.projector->forward(teacher_feat, tr_tp, false)
                        : teacher.projector->forward(teacher_feat);
      }

      if (needs.Sf || needs.Sp) {
        reps.Sf = student.backbone->forward(x_s.pixels, tr_sf, true);
        if (needs.Sp)
          reps.Sp = student.projector->forward(reps.Sf, tr_sp, proj_training);
      }
      if (needs.Sfa || needs.Spa) {
        reps.Sf_adv = student.backbone->forward(x_adv.pixels, tr_sfa, true);
        if (needs.Spa)
          reps.Sp_adv = student.projector->forward(reps.Sf_adv, tr_spa, proj_training);
      }

      losses::RepGrads grads;
      const double loss = defense(reps, &grads);
      if (!std::isfinite(loss))
        throw TrainingError("train_profeat: non-finite defense loss at epoch " +
                            std::to_string(e) + " batch " + std::to_string(b));
      loss_sum += loss * batch->size();
      collapse_rows += grads.collapse_rows;

      student.backbone->zero_grad();
      if (student.projector) student.projector->zero_grad();
      if (teacher_proj_trains) teacher.projector->zero_grad();

      if (needs.Sf || needs.Sp) {
        Matrix gfeat = Matrix::Zero(reps.Sf.rows(), reps.Sf.cols());
        if (grads.Sf.size() > 0) gfeat += grads.Sf;
        if (needs.Sp) gfeat += student.projector->backward(grads.Sp, tr_sp, true);
        student.backbone->backward(gfeat, tr_sf, true);
      }
      if (needs.Sfa || needs.Spa) {
        Matrix gfeat = Matrix::Zero(reps.Sf_adv.rows(), reps.Sf_adv.cols());
        if (grads.Sf_adv.size() > 0) gfeat += grads.Sf_adv;
        if (needs.Spa) gfeat += student.projector->backward(grads.Sp_adv, tr_spa, true);
        student.backbone->backward(gfeat, tr_sfa, true);
      }
      if (teacher_proj_trains)
        teacher.projector->backward(grads.Tp, tr_tp, true);

      lr = lr_at(cfg.schedule,
                 (e + static_cast<double>(b) / num_batches) / std::max(1, cfg.epochs));
      opt.step(lr);
      ++b;
    }

    const Matrix pf = student.backbone->forward(probe.pixels);
    auto fm = eval::collapse_metrics(pf);
    bool collapsed_now = fm.flagged;
    double proj_rank = 0.0;
    if (student.projector) {
      const auto pm = eval::collapse_metrics(student.projector->forward(pf));
      proj_rank = pm.effective_rank;
      collapsed_now = collapsed_now || pm.flagged;
    }
    ck.collapsed = watch.update(collapsed_now, e, "student representations");

    nlohmann::json m;
    m["epoch"] = e;
    m["loss"] = loss_sum / ds.size();
    m["lr"] = lr;
    m["feature_rank"] = fm.effective_rank;
    if (student.projector) m["projector_rank"] = proj_rank;
    m["zero_norm_rows"] = collapse_rows;
    ck.metric_history.push_back(m);
    ck.epoch = e + 1;
    if (hooks.on_epoch_end) {
      store_optimizer_state(ck, opt);
      hooks.on_epoch_end(ck);
    }
  }
  ck.epoch = cfg.epochs;
  store_optimizer_state(ck, opt);
  return ck;
}

Checkpoint train_trades(const TrainConfig& cfg, const data::LabeledDataset& ds,
                        const TrainHooks& hooks) {
  cfg.validate();
  if (ds.num_classes < 2) throw ConfigError("train_trades: labels required");

  Checkpoint ck;
  ck.seed = cfg.seed;
  ck.config_snapshot = config_summary(cfg, "trades");
  models::ModelTriple& model = ck.model;
  model.arch = cfg.model.arch;
  model.feature_dim = cfg.model.feature_dim;
  model.in_shape = {ds.channels, ds.height, ds.width};
  model.backbone = models::build_backbone(cfg.model.arch, cfg.model.feature_dim,
                                          model.in_shape, cfg.seed);
  model.head = models::build_linear_head(cfg.model.feature_dim, ds.num_classes,
                                         mix_seed(cfg.seed, 0x7ead));
  model.apply_freeze_flags();

  nn::Sgd opt(model.trainable_params(), cfg.optimizer);
  const int start = resume_start_epoch(hooks, ck, opt);

  const data::ImageBatch probe = probe_batch(ds);
  CollapseWatch watch(cfg.collapse_patience);

  for (int e = start; e < cfg.epochs; ++e) {
    data::BatchIter iter(ds, cfg.batch_size, mix_seed(cfg.seed, 0xE000 + e));
    const int num_batches = iter.num_batches();
    int b = 0;
    double loss_sum = 0.0;
    double lr = 0.0;
    while (auto batch = iter.next()) {
      const std::uint64_t bseed =
          mix_seed(cfg.seed, 0x77000000ULL + std::uint64_t(e) * 1000003 + b);
      data::ImageBatch x = aug::weak_augment(*batch, bseed, cfg.policies.weak);
      x.labels = batch->labels;

      data::ImageBatch x_adv = x;
      if (cfg.attack.steps > 0 && cfg.attack.epsilon > 0.0) {
        const Matrix clean_logits = models::forward(models::Space::logits, model, x);
        auto obj = attacks::make_supervised_objective(
            attacks::SupervisedKind::max_KL, model, *x.labels, &clean_logits);
        x_adv = attacks::pgd(*obj, x, cfg.attack, mix_seed(bseed, 0xAD));
      }

      nn::Trace tb_c, th_c, tb_a, th_a;
      const Matrix feat_c = model.backbone->forward(x.pixels, tb_c, true);
      const Matrix logits_c = model.head->forward(feat_c, th_c, true);
      const Matrix feat_a = model.backbone->forward(x_adv.pixels, tb_a, true);
      const Matrix logits_a = model.head->forward(feat_a, th_a, true);

      Matrix gc, ga;
      const double loss =
          losses::loss_trades(logits_c, logits_a, *x.labels, cfg.beta, &gc, &ga);
      if (!std::isfinite(loss))
        throw TrainingError("train_trades: non-finite loss at epoch " +
                            std::to_string(e) + " batch " + std::to_string(b));
      loss_sum += loss * batch->size();

      model.backbone->zero_grad();
      model.head->zero_grad();
      model.backbone->backward(model.head->backward(gc, th_c, true), tb_c, true);
      model.backbone->backward(model.head->backward(ga, th_a, true), tb_a, true);

      lr = lr_at(cfg.schedule,
                 (e + static_cast<double>(b) / num_batches) / std::max(1, cfg.epochs));
      opt.step(lr);
      ++b;
    }

    const auto cm = eval::collapse_metrics(model.backbone->forward(probe.pixels));
    ck.collapsed = watch.update(cm.flagged, e, "feature space");

    nlohmann::json m;
    m["epoch"] = e;
    m["loss"] = loss_sum / ds.size();
    m["lr"] = lr;
    ck.metric_history.push_back(m);
    ck.epoch = e + 1;
    if (hooks.on_epoch_end) {
      store_optimizer_state(ck, opt);
      hooks.on_epoch_end(ck);
    }
  }
  ck.epoch = cfg.epochs;
  store_optimizer_state(ck, opt);
  return ck;
}

}  // namespace profeat::train
