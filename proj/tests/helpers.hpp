#pragma once

// Shared fixtures for the loss/attack/training tests: tiny dense-only model
// triples on small images, cheap enough for finite-difference loops.

#include "profeat/models.hpp"

#include <random>

namespace helpers {

using profeat::Matrix;
using profeat::make_rng;
using profeat::mix_seed;

inline profeat::data::ImageBatch random_batch(int n, int size,
                                              std::uint64_t seed,
                                              int channels = 3) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  profeat::data::ImageBatch b;
  b.channels = channels;
  b.height = size;
  b.width = size;
  b.pixels.resize(n, channels * size * size);
  for (Eigen::Index i = 0; i < b.pixels.rows(); ++i)
    for (Eigen::Index j = 0; j < b.pixels.cols(); ++j) b.pixels(i, j) = u(rng);
  return b;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

// Dense-only triple: dense(relu(dense(pixels))) backbone plus an optional
// small MLP projector. No normalization layers, so inference is stateless.
inline profeat::models::ModelTriple dense_triple(std::uint64_t seed,
                                                 bool with_projector,
                                                 int image_size = 4,
                                                 int feature_dim = 6,
                                                 int proj_dim = 4) {
  using namespace profeat;
  models::ModelTriple t;
  t.arch = models::Arch::tiny_cnn;  // nominal; nets are built by hand
  t.feature_dim = feature_dim;
  t.in_shape = {3, image_size, image_size};
  auto rng = make_rng(mix_seed(seed, 0xDE));
  auto net = std::make_shared<nn::Net>(t.in_shape);
  net->add(nn::make_dense(net->out_shape(), 10, rng));
  net->add(nn::make_relu(net->out_shape()));
  net->add(nn::make_dense(net->out_shape(), feature_dim, rng));
  t.backbone = net;
  if (with_projector) {
    models::ProjectorConfig cfg;
    cfg.widths = {feature_dim, 8, proj_dim};
    cfg.use_norm = false;
    t.projector = models::build_projector(cfg, feature_dim, mix_seed(seed, 0x12));
  }
  return t;
}

// One toy generation split into train/test (same class prototypes), the way
// the experiment runner builds its fixtures.
struct ToySplit {
  profeat::data::LabeledDataset train;
  profeat::data::LabeledDataset test;
};

inline ToySplit toy_split(profeat::data::ToySpec spec, int test_per_class,
                          std::uint64_t seed) {
  const int train_pc = spec.samples_per_class;
  spec.samples_per_class += test_per_class;
  const auto full = profeat::data::make_toy_dataset(spec, seed);
  std::vector<int> train_idx, test_idx;
  for (int c = 0; c < spec.num_classes; ++c) {
    const int base = c * spec.samples_per_class;
    for (int i = 0; i < train_pc; ++i) train_idx.push_back(base + i);
    for (int i = train_pc; i < spec.samples_per_class; ++i)
      test_idx.push_back(base + i);
  }
  auto subset = [&](const std::vector<int>& idx) {
    profeat::data::LabeledDataset d;
    d.name = full.name;
    d.channels = full.channels;
    d.height = full.height;
    d.width = full.width;
    d.num_classes = full.num_classes;
    for (int i : idx) {
      d.labels.push_back(full.labels[i]);
      const auto* p = full.pixels.data() +
                      static_cast<std::size_t>(i) * full.image_dim();
      d.pixels.insert(d.pixels.end(), p, p + full.image_dim());
    }
    return d;
  };
  return {subset(train_idx), subset(test_idx)};
}

// Deep copy of a dense triple (shared-free), for S == T setups.
inline profeat::models::ModelTriple copy_triple(
    const profeat::models::ModelTriple& src, std::uint64_t seed) {
  profeat::models::ModelTriple out =
      dense_triple(seed, src.projector != nullptr, src.in_shape.h,
                   src.feature_dim,
                   src.projector ? src.projector->out_dim() : 4);
  out.backbone->copy_params_from(*src.backbone);
  if (src.projector) out.projector->copy_params_from(*src.projector);
  return out;
}

}  // namespace helpers
