#include "profeat/config.hpp"

#include <cstdlib>
#include <fstream>

namespace profeat::config {

namespace {

void check_keys(const json& obj, const std::string& where,
                const std::vector<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("config: unknown key '" + where + "." + key +
                        "' (allowed: " + list + ")");
    }
  }
}

json section(const json& user, const std::string& name) {
  if (!user.contains(name)) return json::object();
  if (!user.at(name).is_object())
    throw ConfigError("config: section '" + name + "' must be an object");
  return user.at(name);
}

template <typename T>
T take(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: key '" + key + "' has the wrong type");
  }
}

}  // namespace

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return j;
}

std::uint64_t config_hash(const json& resolved) {
  return hash_bytes(resolved.dump());
}

json resolve(const json& user) {
  check_keys(user, "", {"name", "seed", "out_dir", "method", "data", "model",
                        "teacher", "student", "attack", "eval", "grids"});
  json r;
  r["name"] = take<std::string>(user, "name", "experiment");
  r["seed"] = take<std::uint64_t>(user, "seed", 0);
  r["out_dir"] = take<std::string>(user, "out_dir", "runs/" + r["name"].get<std::string>());
  const std::string method = take<std::string>(user, "method", "profeat");
  if (method != "profeat" && method != "deacl" && method != "trades")
    throw ConfigError("config: method '" + method +
                      "' unknown (allowed: profeat, deacl, trades)");
  r["method"] = method;

  {
    const json d = section(user, "data");
    check_keys(d, "data", {"kind", "num_classes", "samples_per_class",
                           "image_size", "margin", "noise", "jitter",
                           "test_per_class", "cifar_dir", "val_total"});
    json out;
    const std::string kind = take<std::string>(d, "kind", "toy");
    if (kind != "toy" && kind != "cifar10" && kind != "cifar100")
      throw ConfigError("config: data.kind '" + kind +
                        "' unknown (allowed: toy, cifar10, cifar100)");
    out["kind"] = kind;
    out["num_classes"] = take<int>(d, "num_classes", 6);
    out["samples_per_class"] = take<int>(d, "samples_per_class", 64);
    out["image_size"] = take<int>(d, "image_size", 16);
    out["margin"] = take<double>(d, "margin", 0.7);
    out["noise"] = take<double>(d, "noise", 0.1);
    out["jitter"] = take<double>(d, "jitter", 0.0);
    out["test_per_class"] = take<int>(d, "test_per_class", 32);
    out["cifar_dir"] = take<std::string>(d, "cifar_dir", "");
    out["val_total"] = take<int>(d, "val_total", 0);
    r["data"] = out;
  }

  {
    const json m = section(user, "model");
    check_keys(m, "model", {"arch", "feature_dim", "projector", "proj_widths",
                            "proj_use_norm"});
    json out;
    out["arch"] = take<std::string>(m, "arch", "tiny_cnn");
    models::arch_from_string(out["arch"].get<std::string>());
    out["feature_dim"] = take<int>(m, "feature_dim", 64);
    const std::string proj = take<std::string>(m, "projector", "ours");
    projector_from_alias(proj);
    out["projector"] = proj;
    out["proj_widths"] = take<std::vector<int>>(m, "proj_widths", {});
    out["proj_use_norm"] = take<bool>(m, "proj_use_norm", true);
    r["model"] = out;
  }

  {
    const json t = section(user, "teacher");
    check_keys(t, "teacher", {"epochs", "batch_size", "max_lr", "warmup_epochs",
                              "weight_decay", "momentum", "temperature",
                              "pairing", "checkpoint", "strong_magnitude",
                              "strong_ops", "strong_op_names", "weak_pad"});
    json out;
    out["epochs"] = take<int>(t, "epochs", 40);
    out["batch_size"] = take<int>(t, "batch_size", 128);
    out["max_lr"] = take<double>(t, "max_lr", 0.4);
    out["warmup_epochs"] = take<int>(t, "warmup_epochs", 4);
    out["weight_decay"] = take<double>(t, "weight_decay", 1e-5);
    out["momentum"] = take<double>(t, "momentum", 0.9);
    out["temperature"] = take<double>(t, "temperature", 0.5);
    const std::string pairing = take<std::string>(t, "pairing", "independent_strong");
    pairing_from_alias(pairing);
    out["pairing"] = pairing;
    out["checkpoint"] = take<std::string>(t, "checkpoint", "");
    out["strong_magnitude"] = take<double>(t, "strong_magnitude", 0.5);
    out["strong_ops"] = take<int>(t, "strong_ops", 2);
    out["strong_op_names"] =
        take<std::vector<std::string>>(t, "strong_op_names", {});
    out["weak_pad"] = take<int>(t, "weak_pad", 4);
    r["teacher"] = out;
  }

  {
    const json s = section(user, "student");
    check_keys(s, "student",
               {"epochs", "batch_size", "max_lr", "warmup_epochs",
                "weight_decay", "momentum", "beta", "lambda", "pairing",
                "defense", "attack", "attack_on_view", "strong_magnitude",
                "strong_ops", "strong_op_names", "weak_pad", "collapse_patience"});
    json out;
    out["epochs"] = take<int>(s, "epochs", 30);
    out["batch_size"] = take<int>(s, "batch_size", 128);
    out["max_lr"] = take<double>(s, "max_lr", 0.5);
    out["warmup_epochs"] = take<int>(s, "warmup_epochs", 3);
    out["weight_decay"] = take<double>(s, "weight_decay", 3e-4);
    out["momentum"] = take<double>(s, "momentum", 0.9);
    out["beta"] = take<double>(s, "beta", 8.0);
    out["lambda"] = take<double>(s, "lambda", 0.5);
    const std::string pairing = take<std::string>(s, "pairing", "ours");
    pairing_from_alias(pairing);
    out["pairing"] = pairing;
    const std::string defense = take<std::string>(s, "defense", "ours");
    losses::defense_spec_from_alias(defense);
    out["defense"] = defense;
    const std::string attack = take<std::string>(s, "attack", "ours");
    attacks::attack_spec_from_alias(attack);
    out["attack"] = attack;
    out["attack_on_view"] = take<bool>(s, "attack_on_view", true);
    out["strong_magnitude"] = take<double>(s, "strong_magnitude", 0.5);
    out["strong_ops"] = take<int>(s, "strong_ops", 2);
    out["strong_op_names"] =
        take<std::vector<std::string>>(s, "strong_op_names", {});
    out["weak_pad"] = take<int>(s, "weak_pad", 4);
    out["collapse_patience"] = take<int>(s, "collapse_patience", 3);
    r["student"] = out;
  }

  {
    const json a = section(user, "attack");
    check_keys(a, "attack", {"epsilon", "step_size", "steps", "restarts", "init",
                             "trades_steps"});
    json out;
    out["epsilon"] = take<double>(a, "epsilon", 8.0 / 255.0);
    out["step_size"] = take<double>(a, "step_size", 2.0 / 255.0);
    out["steps"] = take<int>(a, "steps", 5);
    out["restarts"] = take<int>(a, "restarts", 1);
    const std::string init = take<std::string>(a, "init", "uniform_ball");
    if (init != "uniform_ball" && init != "zero")
      throw ConfigError("config: attack.init '" + init +
                        "' unknown (allowed: uniform_ball, zero)");
    out["init"] = init;
    out["trades_steps"] = take<int>(a, "trades_steps", 10);
    r["attack"] = out;
  }

  {
    const json e = section(user, "eval");
    check_keys(e, "eval", {"attacks", "probes", "knn_k", "mlp_hidden", "lp_epochs",
                           "lp_lr_grid", "lp_milestones", "lp_gamma",
                           "lp_weight_decay", "lp_batch_size", "epsilon"});
    json out;
    out["attacks"] =
        take<std::vector<std::string>>(e, "attacks", {"pgd20_ce", "margin_pgd"});
    for (const auto& name : out["attacks"].get<std::vector<std::string>>())
      attacks::eval_attack_from_string(name);
    out["probes"] = take<std::vector<std::string>>(e, "probes", {"linear"});
    for (const auto& p : out["probes"].get<std::vector<std::string>>())
      if (p != "linear" && p != "mlp" && p != "knn")
        throw ConfigError("config: eval.probes entry '" + p +
                          "' unknown (allowed: linear, mlp, knn)");
    out["knn_k"] = take<int>(e, "knn_k", 10);
    out["mlp_hidden"] = take<int>(e, "mlp_hidden", 32);
    out["lp_epochs"] = take<int>(e, "lp_epochs", 25);
    out["lp_lr_grid"] =
        take<std::vector<double>>(e, "lp_lr_grid", {0.05, 0.1, 0.5, 1.0, 5.0});
    out["lp_milestones"] = take<std::vector<int>>(e, "lp_milestones", {15, 20});
    out["lp_gamma"] = take<double>(e, "lp_gamma", 0.1);
    out["lp_weight_decay"] = take<double>(e, "lp_weight_decay", 2e-4);
    out["lp_batch_size"] = take<int>(e, "lp_batch_size", 128);
    out["epsilon"] = take<double>(e, "epsilon", r["attack"]["epsilon"].get<double>());
    r["eval"] = out;
  }

  r["grids"] = section(user, "grids");
  return r;
}

aug::PairingMode pairing_from_alias(const std::string& name) {
  using M = aug::PairingMode;
  if (name == "AG1" || name == "common_weak") return M::common_weak;
  if (name == "AG2" || name == "common_strong") return M::common_strong;
  if (name == "AG3" || name == "independent_weak") return M::independent_weak;
  if (name == "AG4" || name == "independent_strong") return M::independent_strong;
  if (name == "AG5" || name == "strong_teacher_weak_student")
    return M::strong_teacher_weak_student;
  if (name == "ours" || name == "weak_teacher_strong_student")
    return M::weak_teacher_strong_student;
  std::string allowed;
  for (const auto& n : pairing_alias_names())
    allowed += (allowed.empty() ? "" : ", ") + n;
  throw ConfigError("unknown augmentation pairing '" + name + "' (allowed: " +
                    allowed + ")");
}

const std::vector<std::string>& pairing_alias_names() {
  static const std::vector<std::string> names = {
      "AG1", "AG2", "AG3", "AG4", "AG5", "ours",
      "common_weak", "common_strong", "independent_weak", "independent_strong",
      "strong_teacher_weak_student", "weak_teacher_strong_student"};
  return names;
}

models::ProjectorConfig projector_from_alias(const std::string& name) {
  using I = models::ProjInit;
  models::ProjectorConfig c;
  if (name == "AP1" || name == "none") {
    c.student_present = false;
    c.teacher_present = false;
  } else if (name == "AP2") {
    c.student_init = I::random;
    c.student_frozen = false;
    c.teacher_present = false;
  } else if (name == "AP3") {
    c.student_init = I::pretrained;
    c.student_frozen = true;
    c.teacher_present = false;
  } else if (name == "AP4") {
    c.student_init = I::pretrained;
    c.student_frozen = false;
    c.teacher_present = false;
  } else if (name == "AP5") {
    c.shared = true;
    c.student_init = I::random;
    c.student_frozen = false;
  } else if (name == "AP6") {
    c.shared = true;
    c.student_init = I::pretrained;
    c.student_frozen = false;
  } else if (name == "AP7") {
    c.student_init = I::pretrained;
    c.student_frozen = false;
    c.teacher_frozen = true;
  } else if (name == "ours") {
    c.student_init = I::pretrained;
    c.student_frozen = true;
    c.teacher_frozen = true;
  } else {
    std::string allowed;
    for (const auto& n : projector_alias_names())
      allowed += (allowed.empty() ? "" : ", ") + n;
    throw ConfigError("unknown projector preset '" + name + "' (allowed: " +
                      allowed + ")");
  }
  return c;
}

const std::vector<std::string>& projector_alias_names() {
  static const std::vector<std::string> names = {
      "AP1", "AP2", "AP3", "AP4", "AP5", "AP6", "AP7", "ours", "none"};
  return names;
}

namespace {

void apply_op_subset(aug::AugPolicy& policy,
                     const std::vector<std::string>& names) {
  if (names.empty()) return;  // keep the full fixed policy
  const double magnitude = policy.ops.empty() ? 0.5 : policy.ops[0].magnitude;
  policy.ops.clear();
  for (const auto& n : names) policy.ops.push_back({n, magnitude});
  policy.validate();
}

train::LrSchedule cosine_schedule(double max_lr, int warmup_epochs, int epochs) {
  train::LrSchedule s;
  s.kind = train::LrSchedule::Kind::cosine_warmup;
  s.max_lr = max_lr;
  s.warmup_frac =
      epochs > 0 ? static_cast<double>(warmup_epochs) / epochs : 0.0;
  return s;
}

attacks::AttackSpec attack_from(const json& a, const std::string& objective) {
  attacks::AttackSpec s;
  s.epsilon = a.at("epsilon").get<double>();
  s.step_size = a.at("step_size").get<double>();
  s.steps = a.at("steps").get<int>();
  s.restarts = a.at("restarts").get<int>();
  s.init = a.at("init").get<std::string>() == "zero"
               ? attacks::AttackInit::zero
               : attacks::AttackInit::uniform_ball;
  s.objective = objective;
  s.validate();
  return s;
}

}  // namespace

Experiment parse(const json& r) {
  Experiment e;
  e.resolved = r;
  e.hash = config_hash(r);
  e.name = r.at("name").get<std::string>();
  e.seed = r.at("seed").get<std::uint64_t>();
  e.out_dir = r.at("out_dir").get<std::string>();
  e.method = r.at("method").get<std::string>();

  const json& d = r.at("data");
  e.data_kind = d.at("kind").get<std::string>();
  e.toy.num_classes = d.at("num_classes").get<int>();
  e.toy.samples_per_class = d.at("samples_per_class").get<int>();
  e.toy.image_size = d.at("image_size").get<int>();
  e.toy.margin = d.at("margin").get<double>();
  e.toy.noise = d.at("noise").get<double>();
  e.toy.jitter = d.at("jitter").get<double>();
  e.toy_test_per_class = d.at("test_per_class").get<int>();
  e.cifar_dir = d.at("cifar_dir").get<std::string>();
  if (e.cifar_dir.empty()) {
    if (const char* root = std::getenv("PROFEAT_DATA_ROOT")) e.cifar_dir = root;
  }
  e.val_total = d.at("val_total").get<int>();

  const json& m = r.at("model");
  const json& t = r.at("teacher");
  const json& s = r.at("student");
  const json& a = r.at("attack");
  const json& ev = r.at("eval");

  models::ProjectorConfig pcfg =
      projector_from_alias(m.at("projector").get<std::string>());
  pcfg.widths = m.at("proj_widths").get<std::vector<int>>();
  if (!pcfg.widths.empty()) {
    if (pcfg.widths.size() == 2)
      pcfg.depth = models::ProjDepth::linear;
    else if (pcfg.widths.size() == 3)
      pcfg.depth = models::ProjDepth::mlp2;
    else if (pcfg.widths.size() == 4)
      pcfg.depth = models::ProjDepth::mlp3;
    else
      throw ConfigError("config: model.proj_widths must list 2-4 widths");
  }
  pcfg.use_norm = m.at("proj_use_norm").get<bool>();
  pcfg.validate();

  train::ModelSpec model_spec;
  model_spec.arch = models::arch_from_string(m.at("arch").get<std::string>());
  model_spec.feature_dim = m.at("feature_dim").get<int>();
  model_spec.projector = pcfg;

  // teacher pretraining config
  e.teacher.epochs = t.at("epochs").get<int>();
  e.teacher.batch_size = t.at("batch_size").get<int>();
  e.teacher.optimizer = {t.at("momentum").get<double>(),
                         t.at("weight_decay").get<double>()};
  e.teacher.schedule = cosine_schedule(t.at("max_lr").get<double>(),
                                       t.at("warmup_epochs").get<int>(),
                                       e.teacher.epochs);
  e.teacher.pairing = pairing_from_alias(t.at("pairing").get<std::string>());
  e.teacher.ntxent_temperature = t.at("temperature").get<double>();
  e.teacher.policies.strong =
      aug::AugPolicy::strong(t.at("strong_magnitude").get<double>());
  e.teacher.policies.strong.ops_per_image = t.at("strong_ops").get<int>();
  apply_op_subset(e.teacher.policies.strong,
                  t.at("strong_op_names").get<std::vector<std::string>>());
  e.teacher.policies.strong.pad = t.at("weak_pad").get<int>();
  e.teacher.policies.weak.pad = t.at("weak_pad").get<int>();
  e.teacher.seed = mix_seed(e.seed, 0x7eac);
  e.teacher.model = model_spec;
  // the SimCLR projector is always a fresh trainable one
  e.teacher.model.projector.student_init = models::ProjInit::random;
  e.teacher.model.projector.student_frozen = false;
  e.teacher.model.projector.student_present = true;
  e.teacher_checkpoint = t.at("checkpoint").get<std::string>();

  // distillation / trades config
  e.student.epochs = s.at("epochs").get<int>();
  e.student.batch_size = s.at("batch_size").get<int>();
  e.student.optimizer = {s.at("momentum").get<double>(),
                         s.at("weight_decay").get<double>()};
  e.student.schedule = cosine_schedule(s.at("max_lr").get<double>(),
                                       s.at("warmup_epochs").get<int>(),
                                       e.student.epochs);
  e.student.beta = s.at("beta").get<double>();
  e.student.lambda = s.at("lambda").get<double>();
  e.student.pairing = pairing_from_alias(s.at("pairing").get<std::string>());
  e.student.policies.strong =
      aug::AugPolicy::strong(s.at("strong_magnitude").get<double>());
  e.student.policies.strong.ops_per_image = s.at("strong_ops").get<int>();
  apply_op_subset(e.student.policies.strong,
                  s.at("strong_op_names").get<std::vector<std::string>>());
  e.student.policies.strong.pad = s.at("weak_pad").get<int>();
  e.student.policies.weak.pad = s.at("weak_pad").get<int>();
  e.student.defense =
      losses::defense_spec_from_alias(s.at("defense").get<std::string>());
  e.student.attack_objective =
      attacks::attack_spec_from_alias(s.at("attack").get<std::string>());
  e.student.attack = attack_from(a, s.at("attack").get<std::string>());
  e.student.attack_on_view = s.at("attack_on_view").get<bool>();
  e.student.collapse_patience = s.at("collapse_patience").get<int>();
  e.student.seed = mix_seed(e.seed, 0x57d);
  e.student.model = model_spec;
  if (e.method == "trades") {
    e.student.attack.steps = a.at("trades_steps").get<int>();
    e.student.beta = s.at("beta").get<double>();
  }
  if (e.method == "deacl") {
    e.student.defense = losses::defense_spec_from_alias("deacl");
    e.student.attack_objective = attacks::attack_spec_from_alias("deacl");
    e.student.pairing = aug::PairingMode::common_weak;
    e.student.model.projector = projector_from_alias("none");
  }

  // evaluation config
  e.lp.lr_grid = ev.at("lp_lr_grid").get<std::vector<double>>();
  e.lp.epochs = ev.at("lp_epochs").get<int>();
  e.lp.milestones = ev.at("lp_milestones").get<std::vector<int>>();
  e.lp.gamma = ev.at("lp_gamma").get<double>();
  e.lp.weight_decay = ev.at("lp_weight_decay").get<double>();
  e.lp.batch_size = ev.at("lp_batch_size").get<int>();
  e.lp.eval_attacks = ev.at("attacks").get<std::vector<std::string>>();
  e.lp.epsilon = ev.at("epsilon").get<double>();
  e.lp.seed = mix_seed(e.seed, 0x1b);
  e.knn_k = ev.at("knn_k").get<int>();
  e.probes = ev.at("probes").get<std::vector<std::string>>();
  e.mlp_hidden = ev.at("mlp_hidden").get<int>();

  e.teacher.validate();
  e.student.validate();
  return e;
}

const std::vector<std::string>& grid_names() {
  static const std::vector<std::string> names = {
      "beta", "lambda", "components", "projector", "augmentations",
      "attack_loss", "defense_loss", "steps"};
  return names;
}

namespace {

json cell(std::initializer_list<std::pair<std::string, json>> patches) {
  // patches use dotted paths like "student.beta"
  json out = json::object();
  for (const auto& [path, value] : patches) {
    json* cur = &out;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      if (dot == std::string::npos) {
        (*cur)[path.substr(start)] = value;
        break;
      }
      cur = &(*cur)[path.substr(start, dot - start)];
      start = dot + 1;
    }
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, json>> grid_cells(const json& resolved,
                                                     const std::string& grid) {
  std::vector<std::pair<std::string, json>> cells;
  if (grid == "beta") {
    for (double b : {1.0, 2.0, 4.0, 8.0, 12.0})
      cells.emplace_back("beta_" + std::to_string(static_cast<int>(b)),
                         cell({{"student.beta", b}}));
  } else if (grid == "lambda") {
    for (double l : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "lambda_%.2f", l);
      cells.emplace_back(buf, cell({{"student.lambda", l}}));
    }
  } else if (grid == "components") {
    // projector / augmentations / attack-loss component grid; E1 is the
    // distillation baseline and E9 the full proposed configuration.
    auto comp = [&](const char* name, bool proj, bool augs, bool attack,
                    const char* defense) {
      const char* attack_alias = attack ? (proj ? "ours" : "ours_no_proj") : "AT4";
      cells.emplace_back(
          name, cell({{"model.projector", proj ? "ours" : "none"},
                      {"student.pairing", augs ? "ours" : "common_weak"},
                      {"student.attack", attack_alias},
                      {"student.defense", defense}}));
    };
    comp("E1", false, false, false, "deacl");
    comp("E2", true, false, false, "ours");
    comp("E3", false, true, false, "deacl");
    comp("E4", false, false, true, "deacl");
    comp("E5", false, true, true, "deacl");
    comp("E6", true, false, true, "ours");
    comp("E7", true, true, false, "ours");
    comp("E8", true, true, true, "AD2");
    comp("E9", true, true, true, "ours");
  } else if (grid == "projector") {
    const int fd = resolved.at("model").at("feature_dim").get<int>();
    for (const char* ap : {"AP1", "AP2", "AP3", "AP4", "AP5", "AP6", "AP7", "ours"}) {
      const std::string name = ap;
      const bool absent = name == "AP1";
      json c = cell({{"model.projector", ap},
                     {"student.defense", absent ? "deacl" : "ours"},
                     {"student.attack", absent ? "ours_no_proj" : "ours"}});
      // teacher-side projector absent: student projector maps into the
      // teacher feature space
      if (name == "AP2" || name == "AP3" || name == "AP4")
        c["model"]["proj_widths"] = std::vector<int>{fd, fd, fd};
      cells.emplace_back(name, c);
    }
  } else if (grid == "augmentations") {
    for (const char* ag : {"AG1", "AG2", "AG3", "AG4", "AG5", "ours"})
      cells.emplace_back(ag, cell({{"student.pairing", ag}}));
  } else if (grid == "attack_loss") {
    for (const char* at : {"AT1", "AT2", "AT3", "AT4", "AT5", "AT6", "AT7", "ours"})
      cells.emplace_back(at, cell({{"student.attack", at}}));
  } else if (grid == "defense_loss") {
    for (const char* ad : {"AD1", "AD2", "AD3", "AD4", "AD5", "AD6", "AD7",
                           "AD8", "AD9", "ours"})
      cells.emplace_back(ad, cell({{"student.defense", ad}}));
  } else if (grid == "steps") {
    for (int st : {2, 5})
      cells.emplace_back("steps_" + std::to_string(st),
                         cell({{"attack.steps", st}}));
  } else if (resolved.contains("grids") && resolved.at("grids").contains(grid)) {
    const json& g = resolved.at("grids").at(grid);
    if (!g.is_array())
      throw ConfigError("config: grids." + grid + " must be an array of cells");
    int i = 0;
    for (const auto& c : g) {
      const std::string name = c.value("cell", grid + "_" + std::to_string(i));
      json patch = c;
      patch.erase("cell");
      cells.emplace_back(name, patch);
      ++i;
    }
  } else {
    std::string allowed;
    for (const auto& n : grid_names()) allowed += (allowed.empty() ? "" : ", ") + n;
    throw ConfigError("unknown grid '" + grid + "' (registered: " + allowed +
                      "; config-defined grids go under the 'grids' section)");
  }
  if (cells.empty()) throw ConfigError("grid '" + grid + "' has no cells");
  return cells;
}

}  // namespace profeat::config
