#pragma once

#include "profeat/data.hpp"

#include <string>
#include <utility>
#include <vector>

namespace profeat::aug {

using data::ImageBatch;

enum class AugKind { weak_pc, strong_auto, identity };

struct StrongOp {
  std::string name;
  double magnitude = 0.5;  // in [0,1]
};

/// Weak policy: reflect-pad + random crop + horizontal flip.
/// Strong policy: two sampled photometric/geometric ops followed by the weak
/// transform (a fixed RandAugment-style op set; no policy search).
struct AugPolicy {
  AugKind kind = AugKind::weak_pc;
  int pad = 4;
  double flip_prob = 0.5;
  std::vector<StrongOp> ops;  // sampled pool; empty means no strong ops
  int ops_per_image = 2;

  static AugPolicy weak(int pad = 4, double flip_prob = 0.5);
  static AugPolicy strong(double magnitude = 0.5);
  static AugPolicy identity();

  void validate() const;
};

enum class PairingMode {
  common_weak,
  common_strong,
  independent_weak,
  independent_strong,
  strong_teacher_weak_student,
  weak_teacher_strong_student,  // proposed pairing
};

ImageBatch weak_augment(const ImageBatch& b, std::uint64_t seed,
                        const AugPolicy& policy = AugPolicy::weak());

ImageBatch strong_augment(const ImageBatch& b, std::uint64_t seed,
                          const AugPolicy& policy = AugPolicy::strong());

struct ViewPolicies {
  AugPolicy weak = AugPolicy::weak();
  AugPolicy strong = AugPolicy::strong();
};

/// Returns (teacher_view, student_view) under the given pairing mode.
/// common_* modes share a single augmentation draw for both views.
std::pair<ImageBatch, ImageBatch> make_view_pair(
    const ImageBatch& b, PairingMode pairing, std::uint64_t seed,
    const ViewPolicies& policies = ViewPolicies{});

const std::vector<std::string>& strong_op_names();

}  // namespace profeat::aug
