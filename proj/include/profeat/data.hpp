#pragma once

#include "profeat/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace profeat::data {

/// A batch of images as floats in [0,1], one row per sample, CHW layout
/// within the row. This is the unit every pipeline stage consumes.
struct ImageBatch {
  Matrix pixels;  // N x (C*H*W)
  int channels = 3;
  int height = 0;
  int width = 0;
  std::optional<std::vector<int>> labels;

  int size() const { return static_cast<int>(pixels.rows()); }
  int dim() const { return channels * height * width; }

  double& at(int n, int c, int y, int x) {
    return pixels(n, (c * height + y) * width + x);
  }
  double at(int n, int c, int y, int x) const {
    return pixels(n, (c * height + y) * width + x);
  }

  void validate() const;
};

/// Immutable labeled image collection with uint8 pixels (CHW per image).
struct LabeledDataset {
  std::string name;
  int channels = 3;
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<std::uint8_t> pixels;  // N*C*H*W
  std::vector<int> labels;
  std::vector<std::string> warnings;

  int size() const { return static_cast<int>(labels.size()); }
  int image_dim() const { return channels * height * width; }

  std::uint8_t pixel(int n, int c, int y, int x) const {
    return pixels[static_cast<std::size_t>(n) * image_dim() +
                  (c * height + y) * width + x];
  }

  void validate() const;
};

enum class CifarVariant { cifar10, cifar100 };
enum class Split { train, test };

/// Parses the CIFAR binary record format. CIFAR-10 records are
/// 1 label byte + 3072 pixel bytes; CIFAR-100 records carry a coarse and a
/// fine label byte, of which only the fine label is kept.
LabeledDataset load_cifar(const std::string& path, CifarVariant variant,
                          Split split);

/// Re-encodes sample `index` in the binary record layout of `variant`.
/// For CIFAR-100 the coarse byte is written as 0 (it is not retained).
std::vector<std::uint8_t> encode_cifar_record(const LabeledDataset& ds,
                                              int index, CifarVariant variant);

struct ToySpec {
  int num_classes = 4;
  int samples_per_class = 64;
  int image_size = 16;
  double margin = 0.8;
  double noise = 0.08;
  // per-sample orientation jitter as a fraction of the inter-class spacing;
  // values past 0.5 make neighbouring classes overlap at the boundary
  double jitter = 0.0;
};

/// Class-conditional striped/phase patterns with a tunable inter-class
/// margin; deterministic for a fixed seed. A margin below one quantization
/// level leaves the classes indistinguishable and records a warning.
LabeledDataset make_toy_dataset(const ToySpec& spec, std::uint64_t seed);

std::pair<LabeledDataset, LabeledDataset> balanced_split(
    const LabeledDataset& ds, int val_total, std::uint64_t seed);

ImageBatch to_batch(const LabeledDataset& ds);
ImageBatch gather_batch(const LabeledDataset& ds, const std::vector<int>& idx);

/// Epoch iterator: covers every sample exactly once, last batch may be
/// smaller, identical order for identical seed. Single consumer.
class BatchIter {
 public:
  BatchIter(const LabeledDataset& ds, int batch_size,
            std::optional<std::uint64_t> shuffle_seed);

  std::optional<ImageBatch> next();
  int num_batches() const;
  const std::vector<int>& order() const { return order_; }

 private:
  const LabeledDataset& ds_;
  int batch_size_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
};

void write_metadata_sidecar(const LabeledDataset& ds, const std::string& path);

}  // namespace profeat::data
