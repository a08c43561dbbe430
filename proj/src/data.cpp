#include "profeat/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace profeat::data {

void ImageBatch::validate() const {
  if (size() < 1) throw FormatError("ImageBatch: batch must hold N >= 1 samples");
  if (pixels.cols() != dim())
    throw FormatError("ImageBatch: pixel columns do not match C*H*W");
  if ((pixels.array() < 0.0).any() || (pixels.array() > 1.0).any())
    throw FormatError("ImageBatch: pixel values outside [0,1]");
  if (labels && static_cast<int>(labels->size()) != size())
    throw FormatError("ImageBatch: label count does not match batch size");
}

void LabeledDataset::validate() const {
  if (pixels.size() != static_cast<std::size_t>(size()) * image_dim())
    throw FormatError("dataset '" + name + "': pixel/label count mismatch");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw FormatError("dataset '" + name + "': label " + std::to_string(l) +
                        " out of range [0," + std::to_string(num_classes) + ")");
}

namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarPixels = 3 * kCifarSide * kCifarSide;  // 3072

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

LabeledDataset load_cifar(const std::string& path, CifarVariant variant,
                          Split split) {
  const auto bytes = read_file(path);
  const int header = variant == CifarVariant::cifar10 ? 1 : 2;
  const std::size_t record = static_cast<std::size_t>(header) + kCifarPixels;
  if (bytes.empty() || bytes.size() % record != 0) {
    const std::size_t records = bytes.size() / record + 1;
    throw FormatError("truncated CIFAR file '" + path + "': got " +
                      std::to_string(bytes.size()) + " bytes, expected a multiple of " +
                      std::to_string(record) + " (nearest: " +
                      std::to_string(records * record) + ")");
  }
  const int n = static_cast<int>(bytes.size() / record);
  const int num_classes = variant == CifarVariant::cifar10 ? 10 : 100;

  LabeledDataset ds;
  ds.name = std::string(variant == CifarVariant::cifar10 ? "cifar10" : "cifar100") +
            (split == Split::train ? "-train" : "-test");
  ds.channels = 3;
  ds.height = kCifarSide;
  ds.width = kCifarSide;
  ds.num_classes = num_classes;
  ds.pixels.resize(static_cast<std::size_t>(n) * kCifarPixels);
  ds.labels.resize(n);

  for (int i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + static_cast<std::size_t>(i) * record;
    const int label = rec[header - 1];  // CIFAR-100: fine label is the 2nd byte
    if (label >= num_classes)
      throw FormatError("CIFAR record " + std::to_string(i) + ": label byte " +
                        std::to_string(label) + " out of range [0," +
                        std::to_string(num_classes) + ")");
    ds.labels[i] = label;
    // Pixel payload is already CHW (row-major R, G, B planes).
    std::copy(rec + header, rec + record,
              ds.pixels.begin() + static_cast<std::size_t>(i) * kCifarPixels);
  }
  ds.validate();
  return ds;
}

std::vector<std::uint8_t> encode_cifar_record(const LabeledDataset& ds,
                                              int index, CifarVariant variant) {
  if (ds.channels != 3 || ds.height != kCifarSide || ds.width != kCifarSide)
    throw FormatError("encode_cifar_record: dataset is not 3x32x32");
  std::vector<std::uint8_t> rec;
  if (variant == CifarVariant::cifar100) rec.push_back(0);  // coarse label lost
  rec.push_back(static_cast<std::uint8_t>(ds.labels[index]));
  const auto* start = ds.pixels.data() + static_cast<std::size_t>(index) * kCifarPixels;
  rec.insert(rec.end(), start, start + kCifarPixels);
  return rec;
}

LabeledDataset make_toy_dataset(const ToySpec& spec, std::uint64_t seed) {
  if (spec.image_size < 8) throw ConfigError("toy dataset: image_size must be >= 8");
  if (spec.num_classes < 2) throw ConfigError("toy dataset: num_classes must be >= 2");
  if (spec.samples_per_class < 1)
    throw ConfigError("toy dataset: samples_per_class must be >= 1 (empty dataset)");

  const int s = spec.image_size;
  const int n = spec.num_classes * spec.samples_per_class;
  LabeledDataset ds;
  ds.name = "toy";
  ds.channels = 3;
  ds.height = s;
  ds.width = s;
  ds.num_classes = spec.num_classes;
  ds.pixels.resize(static_cast<std::size_t>(n) * ds.image_dim());
  ds.labels.resize(n);

  // Class prototypes: oriented stripe fields with per-class frequency and
  // per-channel phase. Orientation and frequency separate classes even under
  // crops and flips, which keeps the patterns usable as SSL fixtures.
  const double pi = 3.14159265358979323846;
  int out = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    const double freq = 1.5 + (c % 3);
    double phase[3];
    {
      auto rng = make_rng(mix_seed(seed, 1000 + c));
      std::uniform_real_distribution<double> u(0.0, 2.0 * pi);
      for (auto& p : phase) p = u(rng);
    }
    for (int i = 0; i < spec.samples_per_class; ++i, ++out) {
      ds.labels[out] = c;
      auto rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(out) + 7));
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::uniform_real_distribution<double> uj(-1.0, 1.0);
      const double theta =
          pi * (c + spec.jitter * uj(rng)) / spec.num_classes;
      for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < s; ++y) {
          for (int x = 0; x < s; ++x) {
            const double t = freq * (x * std::cos(theta) + y * std::sin(theta)) / s;
            const double proto = 0.5 + 0.5 * std::sin(2.0 * pi * t + phase[ch]);
            double v = 0.5 + spec.margin * (proto - 0.5) + spec.noise * gauss(rng);
            v = std::clamp(v, 0.0, 1.0);
            ds.pixels[static_cast<std::size_t>(out) * ds.image_dim() +
                      (ch * s + y) * s + x] =
                static_cast<std::uint8_t>(std::lround(v * 255.0));
          }
        }
      }
    }
  }
  if (spec.margin < 1.0 / 255.0)
    ds.warnings.push_back(
        "margin below one quantization level: class patterns overlap exactly");
  ds.validate();
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> balanced_split(
    const LabeledDataset& ds, int val_total, std::uint64_t seed) {
  if (val_total < 0) throw ConfigError("balanced_split: val_total must be >= 0");
  if (val_total % ds.num_classes != 0)
    throw ConfigError("balanced_split: val_total " + std::to_string(val_total) +
                      " not divisible by num_classes " +
                      std::to_string(ds.num_classes));
  const int per_class = val_total / ds.num_classes;

  std::vector<std::vector<int>> by_class(ds.num_classes);
  for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  for (int c = 0; c < ds.num_classes; ++c)
    if (static_cast<int>(by_class[c].size()) < per_class)
      throw ConfigError("balanced_split: class " + std::to_string(c) + " has only " +
                        std::to_string(by_class[c].size()) + " samples, needs " +
                        std::to_string(per_class));

  std::vector<char> in_val(ds.size(), 0);
  auto rng = make_rng(mix_seed(seed, 0x5117));
  for (int c = 0; c < ds.num_classes; ++c) {
    auto idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int j = 0; j < per_class; ++j) in_val[idx[j]] = 1;
  }

  auto subset = [&](bool val) {
    LabeledDataset out;
    out.name = ds.name + (val ? "-val" : "-train");
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.num_classes = ds.num_classes;
    out.warnings = ds.warnings;
    for (int i = 0; i < ds.size(); ++i) {
      if (static_cast<bool>(in_val[i]) != val) continue;
      out.labels.push_back(ds.labels[i]);
      const auto* start = ds.pixels.data() + static_cast<std::size_t>(i) * ds.image_dim();
      out.pixels.insert(out.pixels.end(), start, start + ds.image_dim());
    }
    return out;
  };
  return {subset(false), subset(true)};
}

ImageBatch gather_batch(const LabeledDataset& ds, const std::vector<int>& idx) {
  ImageBatch b;
  b.channels = ds.channels;
  b.height = ds.height;
  b.width = ds.width;
  b.pixels.resize(static_cast<Eigen::Index>(idx.size()), ds.image_dim());
  b.labels.emplace(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    (*b.labels)[r] = ds.labels[idx[r]];
    const auto* start =
        ds.pixels.data() + static_cast<std::size_t>(idx[r]) * ds.image_dim();
    for (int j = 0; j < ds.image_dim(); ++j)
      b.pixels(static_cast<Eigen::Index>(r), j) = start[j] / 255.0;
  }
  return b;
}

ImageBatch to_batch(const LabeledDataset& ds) {
  std::vector<int> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return gather_batch(ds, idx);
}

BatchIter::BatchIter(const LabeledDataset& ds, int batch_size,
                     std::optional<std::uint64_t> shuffle_seed)
    : ds_(ds), batch_size_(batch_size) {
  if (batch_size < 1) throw ConfigError("batch_iter: batch_size must be >= 1");
  order_.resize(ds.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (shuffle_seed) {
    auto rng = make_rng(*shuffle_seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

int BatchIter::num_batches() const {
  return (static_cast<int>(order_.size()) + batch_size_ - 1) / batch_size_;
}

std::optional<ImageBatch> BatchIter::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(pos_ + batch_size_, order_.size());
  std::vector<int> idx(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                       order_.begin() + static_cast<std::ptrdiff_t>(end));
  pos_ = end;
  return gather_batch(ds_, idx);
}

void write_metadata_sidecar(const LabeledDataset& ds, const std::string& path) {
  nlohmann::json j;
  j["name"] = ds.name;
  j["num_classes"] = ds.num_classes;
  j["count"] = ds.size();
  j["shape"] = {ds.channels, ds.height, ds.width};
  std::vector<int> per_class(ds.num_classes, 0);
  for (int l : ds.labels) per_class[l]++;
  j["per_class"] = per_class;
  j["warnings"] = ds.warnings;
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write sidecar: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace profeat::data
