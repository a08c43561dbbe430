#include "profeat/models.hpp"

#include <algorithm>

namespace profeat::models {

Arch arch_from_string(const std::string& s) {
  if (s == "tiny_cnn") return Arch::tiny_cnn;
  if (s == "resnet18") return Arch::resnet18;
  if (s == "wrn34_10") return Arch::wrn34_10;
  throw ConfigError("unknown backbone arch '" + s +
                    "' (allowed: tiny_cnn, resnet18, wrn34_10)");
}

std::string to_string(Arch a) {
  switch (a) {
    case Arch::tiny_cnn: return "tiny_cnn";
    case Arch::resnet18: return "resnet18";
    case Arch::wrn34_10: return "wrn34_10";
  }
  return "?";
}

void ProjectorConfig::validate() const {
  const std::size_t expect =
      depth == ProjDepth::linear ? 2 : (depth == ProjDepth::mlp2 ? 3 : 4);
  if (!widths.empty() && widths.size() != expect)
    throw ConfigError("projector widths: expected " + std::to_string(expect) +
                      " entries for this depth, got " +
                      std::to_string(widths.size()));
  for (int w : widths)
    if (w < 2) throw ConfigError("projector width " + std::to_string(w) +
                                 " too narrow (bottleneck must be >= 2)");
}

std::shared_ptr<nn::Net> build_backbone(Arch arch, int feature_dim,
                                        nn::Shape in_shape, std::uint64_t seed) {
  if (feature_dim < 2) throw ConfigError("build_backbone: feature_dim must be >= 2");
  auto rng = make_rng(mix_seed(seed, 0xbac0));
  auto net = std::make_shared<nn::Net>(in_shape);
  auto shape = [&] { return net->out_shape(); };

  switch (arch) {
    case Arch::tiny_cnn: {
      const int widths[3] = {16, 32, 64};
      int stride = 1;
      for (int w : widths) {
        net->add(nn::make_conv(shape(), w, 3, stride, 1, rng));
        net->add(nn::make_batchnorm(shape()));
        net->add(nn::make_relu(shape()));
        stride = 2;
      }
      net->add(nn::make_global_avg_pool(shape()));
      net->add(nn::make_dense(shape(), feature_dim, rng));
      break;
    }
    case Arch::resnet18: {
      if (feature_dim != 512)
        throw ConfigError("resnet18 produces 512-dim features; got feature_dim " +
                          std::to_string(feature_dim));
      net->add(nn::make_conv(shape(), 64, 3, 1, 1, rng));
      net->add(nn::make_batchnorm(shape()));
      net->add(nn::make_relu(shape()));
      const int plan[4][2] = {{64, 1}, {128, 2}, {256, 2}, {512, 2}};
      for (auto [c, s] : plan) {
        net->add(nn::make_basic_block(shape(), c, s, rng));
        net->add(nn::make_basic_block(shape(), c, 1, rng));
      }
      net->add(nn::make_global_avg_pool(shape()));
      break;
    }
    case Arch::wrn34_10: {
      if (feature_dim != 640)
        throw ConfigError("wrn34_10 produces 640-dim features; got feature_dim " +
                          std::to_string(feature_dim));
      const int n = 5;  // depth 34 = 6n + 4
      net->add(nn::make_conv(shape(), 16, 3, 1, 1, rng));
      const int plan[3][2] = {{160, 1}, {320, 2}, {640, 2}};
      for (auto [c, s] : plan)
        for (int b = 0; b < n; ++b)
          net->add(nn::make_wide_block(shape(), c, b == 0 ? s : 1, rng));
      net->add(nn::make_batchnorm(shape()));
      net->add(nn::make_relu(shape()));
      net->add(nn::make_global_avg_pool(shape()));
      break;
    }
  }
  return net;
}

std::shared_ptr<nn::Net> build_projector(const ProjectorConfig& cfg, int in_dim,
                                         std::uint64_t seed) {
  cfg.validate();
  std::vector<int> widths = cfg.widths;
  if (widths.empty()) {
    switch (cfg.depth) {
      case ProjDepth::linear: widths = {in_dim, 256}; break;
      case ProjDepth::mlp2: widths = {in_dim, in_dim, 256}; break;
      case ProjDepth::mlp3: widths = {in_dim, in_dim, in_dim, 256}; break;
    }
  }
  if (widths.front() != in_dim)
    throw ConfigError("projector input width " + std::to_string(widths.front()) +
                      " does not match backbone feature dim " +
                      std::to_string(in_dim));

  auto rng = make_rng(mix_seed(seed, 0x14ea));
  auto net = std::make_shared<nn::Net>(nn::Shape{in_dim, 1, 1});
  for (std::size_t i = 1; i < widths.size(); ++i) {
    net->add(nn::make_dense(net->out_shape(), widths[i], rng));
    if (i + 1 < widths.size()) {
      if (cfg.use_norm) net->add(nn::make_batchnorm(net->out_shape()));
      net->add(nn::make_relu(net->out_shape()));
    }
  }
  return net;
}

std::shared_ptr<nn::Net> build_linear_head(int in_dim, int num_classes,
                                           std::uint64_t seed) {
  auto rng = make_rng(mix_seed(seed, 0x4ead));
  auto net = std::make_shared<nn::Net>(nn::Shape{in_dim, 1, 1});
  net->add(nn::make_dense(net->out_shape(), num_classes, rng));
  return net;
}

std::shared_ptr<nn::Net> build_mlp_head(int in_dim, int hidden, int num_classes,
                                        std::uint64_t seed) {
  auto rng = make_rng(mix_seed(seed, 0x4eae));
  auto net = std::make_shared<nn::Net>(nn::Shape{in_dim, 1, 1});
  net->add(nn::make_dense(net->out_shape(), hidden, rng));
  net->add(nn::make_relu(net->out_shape()));
  net->add(nn::make_dense(net->out_shape(), num_classes, rng));
  return net;
}

std::vector<nn::Param*> ModelTriple::trainable_params() {
  apply_freeze_flags();
  std::vector<nn::Param*> out;
  auto take = [&](const std::shared_ptr<nn::Net>& net) {
    if (!net) return;
    for (auto* p : net->params())
      if (p->trainable) out.push_back(p);
  };
  take(backbone);
  take(projector);
  take(head);
  return out;
}

std::uint64_t ModelTriple::param_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  if (backbone) h = mix_seed(h, backbone->param_hash());
  if (projector) h = mix_seed(h, projector->param_hash());
  if (head) h = mix_seed(h, head->param_hash());
  return h;
}

void ModelTriple::apply_freeze_flags() {
  if (backbone) backbone->set_trainable(!backbone_frozen);
  if (projector) projector->set_trainable(!projector_frozen);
  if (head) head->set_trainable(!head_frozen);
}

ModelTriple init_student_from_teacher(ModelTriple& teacher,
                                      const ProjectorConfig& cfg) {
  cfg.validate();
  const std::shared_ptr<nn::Net> pretrained = teacher.projector;

  const bool wants_pretrained =
      (cfg.student_present && cfg.student_init == ProjInit::pretrained) ||
      (cfg.teacher_present && !cfg.shared);
  if (wants_pretrained && !pretrained)
    throw ConfigError(
        "projector config requires a pretrained teacher projector, but the "
        "teacher has none");

  ModelTriple student;
  student.arch = teacher.arch;
  student.feature_dim = teacher.feature_dim;
  student.in_shape = teacher.in_shape;
  student.backbone = build_backbone(teacher.arch, teacher.feature_dim,
                                    teacher.in_shape, cfg.init_seed);
  student.backbone->copy_params_from(*teacher.backbone);
  student.backbone_frozen = false;

  teacher.backbone_frozen = true;
  teacher.head_frozen = true;
  teacher.projector_frozen = true;

  if (cfg.shared) {
    // One instance serves both sides; trainability follows the student flag.
    auto proj = build_projector(cfg, teacher.feature_dim, cfg.init_seed);
    if (cfg.student_init == ProjInit::pretrained) {
      if (!pretrained)
        throw ConfigError(
            "shared pretrained projector requested, but the teacher has none");
      proj->copy_params_from(*pretrained);
    }
    teacher.projector = proj;
    student.projector = proj;
    teacher.projector_frozen = cfg.student_frozen;
    student.projector_frozen = cfg.student_frozen;
  } else {
    if (cfg.teacher_present) {
      teacher.projector = pretrained;
      teacher.projector_frozen = cfg.teacher_frozen;
    } else {
      teacher.projector = nullptr;
    }
    if (cfg.student_present) {
      student.projector = build_projector(cfg, teacher.feature_dim, cfg.init_seed);
      if (cfg.student_init == ProjInit::pretrained)
        student.projector->copy_params_from(*pretrained);
      student.projector_frozen = cfg.student_frozen;
    }
  }

  teacher.apply_freeze_flags();
  student.apply_freeze_flags();
  return student;
}

Matrix forward(Space space, ModelTriple& m, const Matrix& pixels) {
  Matrix feat = m.backbone->forward(pixels);
  switch (space) {
    case Space::feature:
      return feat;
    case Space::projector:
      if (!m.projector)
        throw ConfigError("forward: model has no projector part");
      return m.projector->forward(feat);
    case Space::logits:
      if (!m.head) throw ConfigError("forward: model has no head part");
      return m.head->forward(feat);
  }
  throw ConfigError("forward: invalid space");
}

Matrix forward(Space space, ModelTriple& m, const ImageBatch& b) {
  return forward(space, m, b.pixels);
}

}  // namespace profeat::models
