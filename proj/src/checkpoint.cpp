#include "profeat/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace profeat::train {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};

nlohmann::json net_spec(const nn::Net& net) {
  nlohmann::json j;
  j["in"] = {net.in_shape().c, net.in_shape().h, net.in_shape().w};
  std::vector<int> dense_out;
  bool has_norm = false;
  for (const auto& li : net.layer_info()) {
    if (li.kind == std::string("dense")) dense_out.push_back(li.out.c);
    if (li.kind == std::string("bn")) has_norm = true;
  }
  j["dense_out"] = dense_out;
  j["use_norm"] = has_norm;
  return j;
}

std::shared_ptr<nn::Net> rebuild_mlp(const nlohmann::json& spec) {
  const auto in = spec.at("in").get<std::vector<int>>();
  const auto dense_out = spec.at("dense_out").get<std::vector<int>>();
  const bool use_norm = spec.at("use_norm").get<bool>();
  auto rng = make_rng(0);
  auto net = std::make_shared<nn::Net>(nn::Shape{in[0], in[1], in[2]});
  for (std::size_t i = 0; i < dense_out.size(); ++i) {
    net->add(nn::make_dense(net->out_shape(), dense_out[i], rng));
    if (i + 1 < dense_out.size()) {
      if (use_norm) net->add(nn::make_batchnorm(net->out_shape()));
      net->add(nn::make_relu(net->out_shape()));
    }
  }
  return net;
}

void append_groups(nlohmann::json& groups, std::vector<Matrix*>& order,
                   const std::string& owner, nn::Net* net) {
  if (!net) return;
  for (auto* p : net->params()) {
    nlohmann::json g;
    g["owner"] = owner;
    g["name"] = p->name;
    g["rows"] = p->value.rows();
    g["cols"] = p->value.cols();
    g["trainable"] = p->trainable;
    groups.push_back(g);
    order.push_back(&p->value);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["version"] = 1;
  header["seed"] = ck.seed;
  header["epoch"] = ck.epoch;
  header["collapsed"] = ck.collapsed;
  header["config"] = ck.config_snapshot;
  header["metrics"] = ck.metric_history;

  nlohmann::json ms;
  ms["arch"] = models::to_string(ck.model.arch);
  ms["feature_dim"] = ck.model.feature_dim;
  ms["in"] = {ck.model.in_shape.c, ck.model.in_shape.h, ck.model.in_shape.w};
  ms["frozen"] = {{"backbone", ck.model.backbone_frozen},
                  {"projector", ck.model.projector_frozen},
                  {"head", ck.model.head_frozen}};
  if (ck.model.projector) ms["projector"] = net_spec(*ck.model.projector);
  if (ck.model.head) ms["head"] = net_spec(*ck.model.head);
  header["model_spec"] = ms;

  nlohmann::json groups = nlohmann::json::array();
  std::vector<Matrix*> order;
  auto& model = const_cast<models::ModelTriple&>(ck.model);
  append_groups(groups, order, "backbone", model.backbone.get());
  append_groups(groups, order, "projector", model.projector.get());
  append_groups(groups, order, "head", model.head.get());
  for (const auto& [name, mat] : ck.extra) {
    nlohmann::json g;
    g["owner"] = "extra";
    g["name"] = name;
    g["rows"] = mat.rows();
    g["cols"] = mat.cols();
    g["trainable"] = false;
    groups.push_back(g);
    order.push_back(const_cast<Matrix*>(&mat));
  }
  header["groups"] = groups;

  const std::string hj = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = hj.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hj.data(), static_cast<std::streamsize>(hj.size()));
  for (const Matrix* m : order)
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(sizeof(double) * m->size()));
  if (!out) throw FormatError("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw FormatError("checkpoint '" + path +
                      "': bad magic or unsupported container version");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hj(len, '\0');
  in.read(hj.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint '" + path + "': truncated header");
  const nlohmann::json header = nlohmann::json::parse(hj);
  if (header.at("version").get<int>() != 1)
    throw FormatError("checkpoint '" + path + "': unsupported version " +
                      std::to_string(header.at("version").get<int>()));

  Checkpoint ck;
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.epoch = header.at("epoch").get<int>();
  ck.collapsed = header.value("collapsed", false);
  ck.config_snapshot = header.at("config");
  ck.metric_history =
      header.at("metrics").get<std::vector<nlohmann::json>>();

  const auto& ms = header.at("model_spec");
  const auto in_shape = ms.at("in").get<std::vector<int>>();
  ck.model.arch = models::arch_from_string(ms.at("arch").get<std::string>());
  ck.model.feature_dim = ms.at("feature_dim").get<int>();
  ck.model.in_shape = {in_shape[0], in_shape[1], in_shape[2]};
  ck.model.backbone = models::build_backbone(ck.model.arch, ck.model.feature_dim,
                                             ck.model.in_shape, 0);
  if (ms.contains("projector")) ck.model.projector = rebuild_mlp(ms.at("projector"));
  if (ms.contains("head")) ck.model.head = rebuild_mlp(ms.at("head"));
  ck.model.backbone_frozen = ms.at("frozen").at("backbone").get<bool>();
  ck.model.projector_frozen = ms.at("frozen").at("projector").get<bool>();
  ck.model.head_frozen = ms.at("frozen").at("head").get<bool>();

  std::vector<nn::Param*> backbone_params = ck.model.backbone->params();
  std::vector<nn::Param*> projector_params =
      ck.model.projector ? ck.model.projector->params() : std::vector<nn::Param*>{};
  std::vector<nn::Param*> head_params =
      ck.model.head ? ck.model.head->params() : std::vector<nn::Param*>{};
  std::size_t bi = 0, pi = 0, hi = 0;

  for (const auto& g : header.at("groups")) {
    const std::string owner = g.at("owner").get<std::string>();
    const std::string name = g.at("name").get<std::string>();
    const Eigen::Index rows = g.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = g.at("cols").get<Eigen::Index>();
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw FormatError("checkpoint '" + path + "': truncated tensor " + name);

    nn::Param* target = nullptr;
    if (owner == "backbone") {
      if (bi >= backbone_params.size())
        throw FormatError("checkpoint: extra backbone tensor " + name);
      target = backbone_params[bi++];
    } else if (owner == "projector") {
      if (pi >= projector_params.size())
        throw FormatError("checkpoint: extra projector tensor " + name);
      target = projector_params[pi++];
    } else if (owner == "head") {
      if (hi >= head_params.size())
        throw FormatError("checkpoint: extra head tensor " + name);
      target = head_params[hi++];
    } else {
      ck.extra[name] = std::move(m);
      continue;
    }
    if (target->name != name)
      throw FormatError("checkpoint: tensor name mismatch, file has '" + name +
                        "', model expects '" + target->name + "'");
    if (target->value.rows() != rows || target->value.cols() != cols)
      throw FormatError("checkpoint: tensor shape mismatch for " + name);
    target->value = std::move(m);
    target->trainable = g.at("trainable").get<bool>();
  }
  ck.model.apply_freeze_flags();
  return ck;
}

}  // namespace profeat::train
