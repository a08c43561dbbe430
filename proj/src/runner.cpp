#include "profeat/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace profeat::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void deep_merge(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base.at(key).is_object() && value.is_object())
      deep_merge(base[key], value);
    else
      base[key] = value;
  }
}

json apply_options(const json& user, const RunOptions& opts) {
  json resolved = config::resolve(user);
  if (opts.seed) resolved["seed"] = *opts.seed;
  if (opts.out_dir) resolved["out_dir"] = *opts.out_dir;
  return config::resolve(resolved);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write: " + path);
  out << text;
}

void write_status(const config::Experiment& e, const std::string& status,
                  const std::string& error = "") {
  json j;
  j["status"] = status;
  if (!error.empty()) j["error"] = error;
  j["config_hash"] = hex64(e.hash);
  j["seed"] = e.seed;
  write_text(e.out_dir + "/status.json", j.dump(2) + "\n");
}

class MetricsLog {
 public:
  MetricsLog(const std::string& path, std::uint64_t hash, std::uint64_t seed)
      : path_(path), hash_(hex64(hash)), seed_(seed) {}

  void append(const std::string& stage, const json& record) {
    json line = record;
    line["stage"] = stage;
    line["config_hash"] = hash_;
    line["seed"] = seed_;
    std::ofstream out(path_, std::ios::app);
    out << line.dump() << "\n";
  }

 private:
  std::string path_;
  std::string hash_;
  std::uint64_t seed_;
};

int auto_val_total(const config::Experiment& e, const data::LabeledDataset& train) {
  if (e.val_total > 0) return e.val_total;
  const int per_class = std::max(1, train.size() / train.num_classes / 8);
  return per_class * train.num_classes;
}

}  // namespace

DataBundle build_datasets(const config::Experiment& e) {
  DataBundle out;
  if (e.data_kind == "toy") {
    data::ToySpec spec = e.toy;
    spec.samples_per_class += e.toy_test_per_class;
    const data::LabeledDataset full =
        data::make_toy_dataset(spec, mix_seed(e.seed, 0xDA7A));
    // class blocks are contiguous: the first samples of each block train,
    // the remainder tests
    std::vector<int> train_idx, test_idx;
    for (int c = 0; c < spec.num_classes; ++c) {
      const int base = c * spec.samples_per_class;
      for (int i = 0; i < e.toy.samples_per_class; ++i) train_idx.push_back(base + i);
      for (int i = e.toy.samples_per_class; i < spec.samples_per_class; ++i)
        test_idx.push_back(base + i);
    }
    auto subset = [&](const std::vector<int>& idx, const char* tag) {
      data::LabeledDataset d;
      d.name = std::string("toy-") + tag;
      d.channels = full.channels;
      d.height = full.height;
      d.width = full.width;
      d.num_classes = full.num_classes;
      d.warnings = full.warnings;
      for (int i : idx) {
        d.labels.push_back(full.labels[i]);
        const auto* p = full.pixels.data() + std::size_t(i) * full.image_dim();
        d.pixels.insert(d.pixels.end(), p, p + full.image_dim());
      }
      return d;
    };
    data::LabeledDataset train_all = subset(train_idx, "train");
    out.test = subset(test_idx, "test");
    auto [tr, val] = data::balanced_split(train_all, auto_val_total(e, train_all),
                                          mix_seed(e.seed, 0x5a17));
    out.train = std::move(tr);
    out.val = std::move(val);
  } else {
    const auto variant = e.data_kind == "cifar10" ? data::CifarVariant::cifar10
                                                  : data::CifarVariant::cifar100;
    if (e.cifar_dir.empty())
      throw ConfigError(
          "config: data.cifar_dir is empty and PROFEAT_DATA_ROOT is unset");
    const std::string train_file =
        e.data_kind == "cifar10" ? "/data_batch_1.bin" : "/train.bin";
    data::LabeledDataset train_all =
        data::load_cifar(e.cifar_dir + train_file, variant, data::Split::train);
    out.test = data::load_cifar(e.cifar_dir + "/test_batch.bin", variant,
                                data::Split::test);
    const int vt = e.val_total > 0 ? e.val_total : 1000;
    auto [tr, val] = data::balanced_split(train_all, vt, mix_seed(e.seed, 0x5a17));
    out.train = std::move(tr);
    out.val = std::move(val);
  }
  return out;
}

namespace {

train::Checkpoint obtain_teacher(const config::Experiment& e,
                                 const DataBundle& data, MetricsLog& log,
                                 const RunOptions& opts) {
  if (!e.teacher_checkpoint.empty())
    return train::load_checkpoint(e.teacher_checkpoint);
  const std::string final_path = e.out_dir + "/teacher.ckpt";
  if (fs::exists(final_path)) return train::load_checkpoint(final_path);

  const std::string last_path = e.out_dir + "/teacher_last.ckpt";
  train::TrainHooks hooks;
  train::Checkpoint partial;
  if (opts.resume && fs::exists(last_path)) {
    partial = train::load_checkpoint(last_path);
    if (partial.epoch < e.teacher.epochs) hooks.resume = &partial;
  }
  hooks.on_epoch_end = [&](const train::Checkpoint& ck) {
    train::save_checkpoint(last_path, ck);
    log.append("teacher", ck.metric_history.back());
  };
  train::Checkpoint teacher = train::train_simclr(e.teacher, data.train, hooks);
  teacher.config_snapshot["config_hash"] = hex64(e.hash);
  train::save_checkpoint(final_path, teacher);
  return teacher;
}

train::Checkpoint obtain_student(const config::Experiment& e,
                                 const train::Checkpoint* teacher,
                                 const DataBundle& data, MetricsLog& log,
                                 const RunOptions& opts) {
  const std::string final_path = e.out_dir + "/student.ckpt";
  if (fs::exists(final_path)) return train::load_checkpoint(final_path);

  const std::string last_path = e.out_dir + "/student_last.ckpt";
  train::TrainHooks hooks;
  train::Checkpoint partial;
  if (opts.resume && fs::exists(last_path)) {
    partial = train::load_checkpoint(last_path);
    if (partial.epoch < e.student.epochs) hooks.resume = &partial;
  }
  hooks.on_epoch_end = [&](const train::Checkpoint& ck) {
    train::save_checkpoint(last_path, ck);
    log.append("student", ck.metric_history.back());
  };
  train::Checkpoint student =
      e.method == "trades"
          ? train::train_trades(e.student, data.train, hooks)
          : train::train_profeat(e.student, *teacher, data.train, hooks);
  student.config_snapshot["config_hash"] = hex64(e.hash);
  train::save_checkpoint(final_path, student);
  return student;
}

json evaluate_models(const config::Experiment& e, train::Checkpoint* teacher,
                     train::Checkpoint& student, const DataBundle& data) {
  json out;
  out["schema_version"] = eval::kReportSchemaVersion;
  out["name"] = e.name;
  out["method"] = e.method;
  out["config_hash"] = hex64(e.hash);
  out["seed"] = e.seed;
  out["collapsed"] = student.collapsed;

  eval::LpConfig lp = e.lp;
  std::shared_ptr<nn::Net> lp_head;

  for (const auto& probe : e.probes) {
    if (probe == "linear") {
      auto res = eval::linear_probe(student.model, data.train, data.val,
                                    data.test, lp);
      lp_head = res.head;
      out["main"] = res.report.to_json();
    } else if (probe == "mlp") {
      auto res = eval::mlp_probe(student.model, data.train, data.val, data.test,
                                 lp, e.mlp_hidden);
      out["mlp"] = res.report.to_json();
    }
  }
  if (!out.contains("main")) {
    auto res =
        eval::linear_probe(student.model, data.train, data.val, data.test, lp);
    lp_head = res.head;
    out["main"] = res.report.to_json();
  }

  for (const auto& probe : e.probes) {
    if (probe == "knn") {
      const auto spec =
          attacks::default_eval_spec(attacks::EvalAttackKind::margin_pgd, lp.epsilon);
      auto rep = eval::knn_eval(student.model, data.train, data.test, e.knn_k,
                                lp_head, &spec, mix_seed(e.seed, 0x6e));
      out["knn"] = rep.to_json();
    }
  }

  eval::EvalReport main_report = eval::EvalReport::from_json(out["main"]);
  if (teacher && e.method != "trades") {
    const auto align =
        eval::alignment_report(teacher->model, student.model, data.test);
    json a;
    a["cos_feature"] = align.cos_feature;
    if (align.cos_projector) a["cos_projector"] = *align.cos_projector;
    out["alignment"] = a;
  }
  {
    const Matrix feats = eval::features_of(student.model, data.test);
    const auto cm = eval::collapse_metrics(feats);
    out["collapse"] = {{"mean_row_norm", cm.mean_row_norm},
                       {"effective_rank", cm.effective_rank},
                       {"flagged", cm.flagged}};
  }
  return out;
}

std::string render_report_text(const json& report) {
  char buf[256];
  std::string text;
  text += "run: " + report.value("name", std::string("?")) + "  (method " +
          report.value("method", std::string("?")) + ", seed " +
          std::to_string(report.value("seed", std::uint64_t{0})) + ", config " +
          report.value("config_hash", std::string("?")) + ")\n";
  const json& main = report.at("main");
  std::snprintf(buf, sizeof(buf), "  SA          %6.2f\n", main.at("SA").get<double>());
  text += buf;
  for (const auto& [name, ra] : main.at("RA").items()) {
    std::snprintf(buf, sizeof(buf), "  RA %-10s %6.2f\n", name.c_str(),
                  ra.get<double>());
    text += buf;
  }
  if (main.contains("masking_gap")) {
    std::snprintf(buf, sizeof(buf), "  masking gap %6.2f\n",
                  main.at("masking_gap").get<double>());
    text += buf;
  }
  if (report.contains("alignment")) {
    std::snprintf(buf, sizeof(buf), "  cos(T,S) feature   %6.3f\n",
                  report.at("alignment").at("cos_feature").get<double>());
    text += buf;
    if (report.at("alignment").contains("cos_projector")) {
      std::snprintf(buf, sizeof(buf), "  cos(T,S) projector %6.3f\n",
                    report.at("alignment").at("cos_projector").get<double>());
      text += buf;
    }
  }
  if (report.contains("collapse")) {
    std::snprintf(buf, sizeof(buf), "  effective rank     %6.2f%s\n",
                  report.at("collapse").at("effective_rank").get<double>(),
                  report.at("collapse").at("flagged").get<bool>() ? "  [collapse]"
                                                                  : "");
    text += buf;
  }
  return text;
}

}  // namespace

int pretrain(const json& user_config, const RunOptions& opts) {
  const json resolved = apply_options(user_config, opts);
  if (opts.dry_run) {
    std::cout << resolved.dump(2) << "\n";
    return 0;
  }
  config::Experiment e = config::parse(resolved);
  fs::create_directories(e.out_dir);
  write_text(e.out_dir + "/resolved.json", resolved.dump(2) + "\n");
  MetricsLog log(e.out_dir + "/metrics.jsonl", e.hash, e.seed);
  const DataBundle data = build_datasets(e);
  obtain_teacher(e, data, log, opts);
  write_status(e, "ok");
  return 0;
}

int run(const json& user_config, const RunOptions& opts) {
  const json resolved = apply_options(user_config, opts);
  if (opts.dry_run) {
    std::cout << resolved.dump(2) << "\n";
    return 0;
  }
  config::Experiment e = config::parse(resolved);
  fs::create_directories(e.out_dir);
  write_text(e.out_dir + "/resolved.json", resolved.dump(2) + "\n");
  MetricsLog log(e.out_dir + "/metrics.jsonl", e.hash, e.seed);

  const std::string report_path = e.out_dir + "/report.json";
  if (fs::exists(report_path)) {
    const json existing = config::load_json_file(report_path);
    if (existing.value("config_hash", "") == hex64(e.hash)) {
      // completed run: re-emit, no retraining
      if (!opts.quiet) std::cout << render_report_text(existing);
      return 0;
    }
  }

  const DataBundle data = build_datasets(e);
  data::write_metadata_sidecar(data.train, e.out_dir + "/dataset.json");

  try {
    train::Checkpoint teacher;
    const bool needs_teacher = e.method != "trades";
    if (needs_teacher) teacher = obtain_teacher(e, data, log, opts);
    train::Checkpoint student =
        obtain_student(e, needs_teacher ? &teacher : nullptr, data, log, opts);

    const json report =
        evaluate_models(e, needs_teacher ? &teacher : nullptr, student, data);
    write_text(report_path, report.dump(2) + "\n");
    write_text(e.out_dir + "/report.txt", render_report_text(report));
    if (!opts.quiet) std::cout << render_report_text(report);
    write_status(e, "ok");
  } catch (const CollapseError& err) {
    write_status(e, "collapsed", err.what());
    std::cerr << "run " << e.name << ": " << err.what() << "\n";
    return 3;
  }
  return 0;
}

int run_file(const std::string& config_path, const RunOptions& opts) {
  return run(config::load_json_file(config_path), opts);
}

int evaluate(const json& user_config, const RunOptions& opts) {
  const json resolved = apply_options(user_config, opts);
  if (opts.dry_run) {
    std::cout << resolved.dump(2) << "\n";
    return 0;
  }
  config::Experiment e = config::parse(resolved);
  const std::string student_path = e.out_dir + "/student.ckpt";
  if (!fs::exists(student_path))
    throw ConfigError("eval: no student checkpoint at " + student_path +
                      " (run the distill stage first)");
  train::Checkpoint student = train::load_checkpoint(student_path);
  train::Checkpoint teacher;
  train::Checkpoint* teacher_ptr = nullptr;
  if (fs::exists(e.out_dir + "/teacher.ckpt")) {
    teacher = train::load_checkpoint(e.out_dir + "/teacher.ckpt");
    teacher_ptr = &teacher;
  }
  const DataBundle data = build_datasets(e);
  const json report = evaluate_models(e, teacher_ptr, student, data);
  write_text(e.out_dir + "/report.json", report.dump(2) + "\n");
  write_text(e.out_dir + "/report.txt", render_report_text(report));
  if (!opts.quiet) std::cout << render_report_text(report);
  return 0;
}

namespace {

struct GridRow {
  std::string cell;
  std::string status = "ok";
  double sa = 0.0;
  std::optional<double> ra_pgd20, ra_margin, gap;
  double param = 0.0;  // numeric sweep value when applicable
};

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

// Minimal SVG line plot for sweep grids: SA and RA curves over the sweep
// parameter, enough to eyeball the trade-off shape.
void write_sweep_svg(const std::string& path, const std::string& xlabel,
                     const std::vector<GridRow>& rows) {
  std::vector<const GridRow*> ok;
  for (const auto& r : rows)
    if (r.status == "ok") ok.push_back(&r);
  if (ok.size() < 2) return;

  const double W = 520, H = 360, L = 60, B = 40, T = 20, R = 20;
  double ymax = 0;
  for (const auto* r : ok) {
    ymax = std::max(ymax, r->sa);
    if (r->ra_pgd20) ymax = std::max(ymax, *r->ra_pgd20);
  }
  ymax = std::max(ymax, 1.0);
  const double x0 = ok.front()->param, x1 = ok.back()->param;
  auto px = [&](double x) {
    return L + (x - x0) / std::max(1e-12, x1 - x0) * (W - L - R);
  };
  auto py = [&](double y) { return H - B - y / ymax * (H - B - T); };

  std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" +
                    std::to_string(int(W)) + "' height='" + std::to_string(int(H)) +
                    "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<line x1='%.0f' y1='%.0f' x2='%.0f' y2='%.0f' stroke='black'/>\n"
                "<line x1='%.0f' y1='%.0f' x2='%.0f' y2='%.0f' stroke='black'/>\n",
                L, H - B, W - R, H - B, L, T, L, H - B);
  svg += buf;
  auto polyline = [&](const char* color, auto getter) {
    std::string pts;
    for (const auto* r : ok) {
      const auto v = getter(*r);
      if (!v) continue;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(r->param), py(*v));
      pts += buf;
    }
    return "<polyline fill='none' stroke='" + std::string(color) +
           "' stroke-width='2' points='" + pts + "'/>\n";
  };
  svg += polyline("#1f77b4",
                  [](const GridRow& r) { return std::optional<double>(r.sa); });
  svg += polyline("#d62728", [](const GridRow& r) { return r.ra_pgd20; });
  for (const auto* r : ok) {
    std::snprintf(buf, sizeof(buf),
                  "<text x='%.1f' y='%.1f' font-size='11'>%g</text>\n",
                  px(r->param) - 6, H - B + 16, r->param);
    svg += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x='%.0f' y='%.0f' font-size='12'>%s</text>\n"
                "<text x='12' y='%.0f' font-size='12'>%%</text>\n"
                "<text x='%.0f' y='%.0f' font-size='12' fill='#1f77b4'>SA</text>\n"
                "<text x='%.0f' y='%.0f' font-size='12' fill='#d62728'>RA-PGD20</text>\n",
                W / 2 - 20, H - 8, xlabel.c_str(), H / 2, W - 120, T + 14, W - 120,
                T + 30);
  svg += buf;
  svg += "</svg>\n";
  write_text(path, svg);
}

}  // namespace

int run_grid(const json& user_config, const std::string& grid_name,
             const RunOptions& opts) {
  json resolved = apply_options(user_config, opts);
  const auto cells = config::grid_cells(resolved, grid_name);
  const std::string base_out =
      resolved.at("out_dir").get<std::string>() + "/" + grid_name;
  resolved["out_dir"] = base_out;
  if (opts.dry_run) {
    json all = json::array();
    for (const auto& [name, patch] : cells) {
      json merged = resolved;
      deep_merge(merged, patch);
      merged["name"] = resolved.at("name").get<std::string>() + "/" + name;
      all.push_back(config::resolve(merged));
    }
    std::cout << all.dump(2) << "\n";
    return 0;
  }

  fs::create_directories(base_out);

  // One shared teacher per grid unless a cell overrides the teacher stage.
  std::string shared_teacher;
  {
    config::Experiment base = config::parse(resolved);
    if (base.method != "trades") {
      MetricsLog log(base_out + "/metrics.jsonl", base.hash, base.seed);
      const DataBundle data = build_datasets(base);
      RunOptions teacher_opts = opts;
      obtain_teacher(base, data, log, teacher_opts);
      shared_teacher = base_out + "/teacher.ckpt";
    }
  }

  std::vector<GridRow> rows;
  bool any_failed = false;
  for (const auto& [name, patch] : cells) {
    json cell_cfg = resolved;
    deep_merge(cell_cfg, patch);
    cell_cfg["name"] = resolved.at("name").get<std::string>() + "/" + name;
    cell_cfg["out_dir"] = base_out + "/" + name;
    if (!shared_teacher.empty() && !patch.contains("teacher"))
      cell_cfg["teacher"]["checkpoint"] = shared_teacher;

    GridRow row;
    row.cell = name;
    if (patch.contains("student") && patch.at("student").contains("beta"))
      row.param = patch.at("student").at("beta").get<double>();
    else if (patch.contains("student") && patch.at("student").contains("lambda"))
      row.param = patch.at("student").at("lambda").get<double>();
    else if (patch.contains("attack") && patch.at("attack").contains("steps"))
      row.param = patch.at("attack").at("steps").get<int>();

    try {
      RunOptions cell_opts = opts;
      cell_opts.quiet = true;
      // grid-level overrides were applied to the base config already
      cell_opts.out_dir.reset();
      cell_opts.seed.reset();
      const int rc = run(cell_cfg, cell_opts);
      if (rc != 0) {
        row.status = "collapsed";
        any_failed = true;
      } else {
        const json rep =
            config::load_json_file(base_out + "/" + name + "/report.json");
        row.sa = rep.at("main").at("SA").get<double>();
        const json& ra = rep.at("main").at("RA");
        if (ra.contains("pgd20_ce")) row.ra_pgd20 = ra.at("pgd20_ce").get<double>();
        if (ra.contains("margin_pgd"))
          row.ra_margin = ra.at("margin_pgd").get<double>();
        if (rep.at("main").contains("masking_gap"))
          row.gap = rep.at("main").at("masking_gap").get<double>();
      }
    } catch (const std::exception& err) {
      row.status = std::string("failed: ") + err.what();
      any_failed = true;
    }
    if (!opts.quiet)
      std::cout << grid_name << "/" << row.cell << ": "
                << (row.status == "ok"
                        ? "SA " + csv_cell(row.sa) + " RA " + csv_cell(row.ra_pgd20)
                        : row.status)
                << "\n";
    rows.push_back(std::move(row));
  }

  // Trend flags for the sweep grids (qualitative trade-off shape).
  bool sa_nonincreasing = true, ra_nondecreasing = true;
  if (grid_name == "beta") {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].status != "ok" || rows[i - 1].status != "ok") continue;
      if (rows[i].sa > rows[i - 1].sa + 1e-9) sa_nonincreasing = false;
      if (rows[i].ra_pgd20 && rows[i - 1].ra_pgd20 &&
          *rows[i].ra_pgd20 < *rows[i - 1].ra_pgd20 - 1e-9)
        ra_nondecreasing = false;
    }
  }

  const config::Experiment base = config::parse(resolved);
  std::string csv = "# config_hash=" + hex64(base.hash) + " seed=" +
                    std::to_string(base.seed) + " grid=" + grid_name + "\n";
  csv += "cell,param,SA,RA_pgd20_ce,RA_margin_pgd,masking_gap,status";
  const bool trend_cols = grid_name == "beta";
  if (trend_cols) csv += ",sa_nonincreasing,ra_nondecreasing";
  csv += "\n";
  for (const auto& r : rows) {
    csv += r.cell + "," + (r.param != 0.0 || grid_name == "lambda"
                               ? csv_cell(r.param)
                               : std::string("-")) +
           ",";
    if (r.status == "ok") {
      csv += csv_cell(r.sa) + "," + csv_cell(r.ra_pgd20) + "," +
             csv_cell(r.ra_margin) + "," + csv_cell(r.gap) + ",ok";
    } else {
      csv += "-,-,-,-," + r.status;
    }
    if (trend_cols)
      csv += std::string(",") + (sa_nonincreasing ? "yes" : "no") + "," +
             (ra_nondecreasing ? "yes" : "no");
    csv += "\n";
  }
  write_text(base_out + "/grid.csv", csv);
  if (grid_name == "beta" || grid_name == "lambda")
    write_sweep_svg(base_out + "/sweep.svg", grid_name, rows);
  return any_failed ? 1 : 0;
}

int report(const std::vector<std::string>& run_dirs, const std::string& csv_out,
           bool quiet) {
  std::vector<std::pair<std::string, json>> reports;
  for (const auto& dir : run_dirs) {
    const json rep = config::load_json_file(dir + "/report.json");
    // schema check happens in from_json
    eval::EvalReport::from_json(rep.at("main"));
    reports.emplace_back(dir, rep);
  }

  char buf[512];
  std::string table;
  std::snprintf(buf, sizeof(buf), "%-28s %-8s %8s %12s %12s %12s\n", "run",
                "method", "SA", "RA-PGD20", "RA-margin", "masking-gap");
  table += buf;
  std::string csv = "run,method,SA,RA_pgd20_ce,RA_margin_pgd,masking_gap\n";
  for (const auto& [dir, rep] : reports) {
    const json& main = rep.at("main");
    const json& ra = main.at("RA");
    auto opt = [&](const char* key) -> std::optional<double> {
      if (ra.contains(key)) return ra.at(key).get<double>();
      return std::nullopt;
    };
    const auto pgd = opt("pgd20_ce");
    const auto margin = opt("margin_pgd");
    std::optional<double> gap;
    if (main.contains("masking_gap")) gap = main.at("masking_gap").get<double>();
    std::snprintf(buf, sizeof(buf), "%-28s %-8s %8.2f %12s %12s %12s\n",
                  rep.value("name", dir).c_str(),
                  rep.value("method", std::string("?")).c_str(),
                  main.at("SA").get<double>(), csv_cell(pgd).c_str(),
                  csv_cell(margin).c_str(), csv_cell(gap).c_str());
    table += buf;
    csv += rep.value("name", dir) + "," + rep.value("method", std::string("?")) +
           "," + csv_cell(main.at("SA").get<double>()) + "," + csv_cell(pgd) +
           "," + csv_cell(margin) + "," + csv_cell(gap) + "\n";
  }
  if (!quiet) std::cout << table;
  if (!csv_out.empty()) write_text(csv_out, csv);
  return 0;
}

}  // namespace profeat::runner
