#pragma once

#include "profeat/data.hpp"
#include "profeat/nn.hpp"

#include <memory>
#include <optional>
#include <string>

namespace profeat::models {

using data::ImageBatch;

enum class Arch { tiny_cnn, resnet18, wrn34_10 };

Arch arch_from_string(const std::string& s);
std::string to_string(Arch a);

enum class ProjDepth { linear, mlp2, mlp3 };
enum class ProjInit { random, pretrained };

/// Projector wiring for the teacher/student pair (covers the projector
/// ablation grid: absent/frozen/trainable sides, shared instances,
/// random vs. pretrained initialisation).
struct ProjectorConfig {
  ProjDepth depth = ProjDepth::mlp2;
  std::vector<int> widths;  // empty -> defaults: {in, in, 256} for mlp2
  bool use_norm = true;

  bool student_present = true;
  ProjInit student_init = ProjInit::pretrained;
  bool student_frozen = true;

  bool teacher_present = true;
  bool teacher_frozen = true;

  bool shared = false;  // one projector instance serves both sides

  std::uint64_t init_seed = 0;

  void validate() const;
};

struct ModelTriple {
  std::shared_ptr<nn::Net> backbone;
  std::shared_ptr<nn::Net> projector;  // optional
  std::shared_ptr<nn::Net> head;       // optional
  bool backbone_frozen = false;
  bool projector_frozen = false;
  bool head_frozen = false;

  // build metadata, kept for checkpointing
  Arch arch = Arch::tiny_cnn;
  int feature_dim = 0;
  nn::Shape in_shape;

  std::vector<nn::Param*> trainable_params();
  std::uint64_t param_hash() const;
  std::uint64_t backbone_hash() const { return backbone->param_hash(); }
  void apply_freeze_flags();
};

enum class Space { feature, projector, logits };

std::shared_ptr<nn::Net> build_backbone(Arch arch, int feature_dim,
                                        nn::Shape in_shape, std::uint64_t seed);
/// mlp2 defaults to the in->in->256 widths; `linear` is a single affine map.
std::shared_ptr<nn::Net> build_projector(const ProjectorConfig& cfg, int in_dim,
                                         std::uint64_t seed);
std::shared_ptr<nn::Net> build_linear_head(int in_dim, int num_classes,
                                           std::uint64_t seed);
std::shared_ptr<nn::Net> build_mlp_head(int in_dim, int hidden, int num_classes,
                                        std::uint64_t seed);

/// Copies the teacher backbone into a fresh student and wires projectors per
/// the config. Freezes the teacher entirely as a side effect.
ModelTriple init_student_from_teacher(ModelTriple& teacher,
                                      const ProjectorConfig& cfg);

/// Inference-mode forward through the requested space.
Matrix forward(Space space, ModelTriple& m, const ImageBatch& b);
Matrix forward(Space space, ModelTriple& m, const Matrix& pixels);

}  // namespace profeat::models
