#include "profeat/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace profeat::aug {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Mirror an integer coordinate into [0, n) without repeating the edge.
int reflect_index(int t, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  t = ((t % period) + period) % period;
  return t < n ? t : period - t;
}

class ChannelView {
 public:
  ChannelView(const ImageBatch& b, int n, int c)
      : b_(b), n_(n), c_(c) {}
  double operator()(int y, int x) const {
    return b_.at(n_, c_, reflect_index(y, b_.height), reflect_index(x, b_.width));
  }

 private:
  const ImageBatch& b_;
  int n_, c_;
};

double bilinear(const ChannelView& img, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0;
  const double fx = x - x0;
  return (1 - fy) * ((1 - fx) * img(y0, x0) + fx * img(y0, x0 + 1)) +
         fy * ((1 - fx) * img(y0 + 1, x0) + fx * img(y0 + 1, x0 + 1));
}

// Applies the inverse affine map [a b; c d] around the image center to every
// output pixel of one sample, all channels.
void affine_sample(ImageBatch& out, const ImageBatch& in, int n, double a,
                   double b, double c, double d, double tx, double ty) {
  const double cy = (in.height - 1) / 2.0;
  const double cx = (in.width - 1) / 2.0;
  for (int ch = 0; ch < in.channels; ++ch) {
    ChannelView src(in, n, ch);
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        const double dx = x - cx - tx;
        const double dy = y - cy - ty;
        const double sx = a * dx + b * dy + cx;
        const double sy = c * dx + d * dy + cy;
        out.at(n, ch, y, x) = bilinear(src, sy, sx);
      }
    }
  }
}

void clamp_sample(ImageBatch& b, int n) {
  b.pixels.row(n) = b.pixels.row(n).cwiseMax(0.0).cwiseMin(1.0);
}

double luminance(const ImageBatch& b, int n, int y, int x) {
  if (b.channels < 3) return b.at(n, 0, y, x);
  return 0.299 * b.at(n, 0, y, x) + 0.587 * b.at(n, 1, y, x) +
         0.114 * b.at(n, 2, y, x);
}

using OpFn = void (*)(ImageBatch&, int, double, std::mt19937_64&);

void op_shear_x(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double s = (std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : -1) * 0.3 * m;
  ImageBatch src = b;
  affine_sample(b, src, n, 1.0, s, 0.0, 1.0, 0.0, 0.0);
}

void op_shear_y(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double s = (std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : -1) * 0.3 * m;
  ImageBatch src = b;
  affine_sample(b, src, n, 1.0, 0.0, s, 1.0, 0.0, 0.0);
}

void op_translate_x(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double t = (std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : -1) * 0.3 * m * b.width;
  ImageBatch src = b;
  affine_sample(b, src, n, 1.0, 0.0, 0.0, 1.0, t, 0.0);
}

void op_translate_y(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double t = (std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : -1) * 0.3 * m * b.height;
  ImageBatch src = b;
  affine_sample(b, src, n, 1.0, 0.0, 0.0, 1.0, 0.0, t);
}

void op_rotate(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double deg = (std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : -1) * 30.0 * m;
  const double r = deg * kPi / 180.0;
  ImageBatch src = b;
  // inverse rotation
  affine_sample(b, src, n, std::cos(r), std::sin(r), -std::sin(r), std::cos(r), 0.0, 0.0);
}

double enhance_factor(double m, std::mt19937_64& rng) {
  const int sign = std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : -1;
  return 1.0 + sign * 0.9 * m;
}

void op_color(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double f = enhance_factor(m, rng);
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      const double g = luminance(b, n, y, x);
      for (int c = 0; c < b.channels; ++c)
        b.at(n, c, y, x) = g + f * (b.at(n, c, y, x) - g);
    }
  clamp_sample(b, n);
}

void op_brightness(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double f = enhance_factor(m, rng);
  b.pixels.row(n) *= f;
  clamp_sample(b, n);
}

void op_contrast(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double f = enhance_factor(m, rng);
  double mean = 0.0;
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) mean += luminance(b, n, y, x);
  mean /= b.height * b.width;
  b.pixels.row(n) = (b.pixels.row(n).array() - mean) * f + mean;
  clamp_sample(b, n);
}

void op_sharpness(ImageBatch& b, int n, double m, std::mt19937_64& rng) {
  const double f = enhance_factor(m, rng);
  ImageBatch src = b;
  for (int c = 0; c < b.channels; ++c) {
    ChannelView v(src, n, c);
    for (int y = 0; y < b.height; ++y)
      for (int x = 0; x < b.width; ++x) {
        double blur = 4.0 * v(y, x);
        blur += v(y - 1, x) + v(y + 1, x) + v(y, x - 1) + v(y, x + 1);
        blur += (v(y - 1, x - 1) + v(y - 1, x + 1) + v(y + 1, x - 1) + v(y + 1, x + 1)) * 0.5;
        blur /= 10.0;
        b.at(n, c, y, x) = blur + f * (v(y, x) - blur);
      }
  }
  clamp_sample(b, n);
}

void op_posterize(ImageBatch& b, int n, double m, std::mt19937_64&) {
  const int drop = static_cast<int>(std::lround(4.0 * m));  // keep 8..4 bits
  if (drop == 0) return;
  const int levels = 256 >> drop;
  const double step = 256.0 / levels;
  for (int j = 0; j < b.dim(); ++j) {
    const double v255 = b.pixels(n, j) * 255.0;
    b.pixels(n, j) = std::floor(v255 / step) * step / 255.0;
  }
  clamp_sample(b, n);
}

void op_solarize(ImageBatch& b, int n, double m, std::mt19937_64&) {
  const double threshold = 1.0 - m;
  for (int j = 0; j < b.dim(); ++j)
    if (b.pixels(n, j) > threshold) b.pixels(n, j) = 1.0 - b.pixels(n, j);
}

void op_autocontrast(ImageBatch& b, int n, double m, std::mt19937_64&) {
  for (int c = 0; c < b.channels; ++c) {
    double lo = 1.0, hi = 0.0;
    for (int y = 0; y < b.height; ++y)
      for (int x = 0; x < b.width; ++x) {
        lo = std::min(lo, b.at(n, c, y, x));
        hi = std::max(hi, b.at(n, c, y, x));
      }
    if (hi - lo < 1e-9) continue;
    for (int y = 0; y < b.height; ++y)
      for (int x = 0; x < b.width; ++x) {
        const double v = b.at(n, c, y, x);
        const double stretched = (v - lo) / (hi - lo);
        b.at(n, c, y, x) = (1.0 - m) * v + m * stretched;
      }
  }
  clamp_sample(b, n);
}

void op_equalize(ImageBatch& b, int n, double m, std::mt19937_64&) {
  const int npix = b.height * b.width;
  for (int c = 0; c < b.channels; ++c) {
    std::array<int, 256> hist{};
    for (int y = 0; y < b.height; ++y)
      for (int x = 0; x < b.width; ++x)
        hist[static_cast<int>(std::lround(b.at(n, c, y, x) * 255.0))]++;
    std::array<double, 256> cdf{};
    int acc = 0;
    for (int i = 0; i < 256; ++i) {
      acc += hist[i];
      cdf[i] = static_cast<double>(acc);
    }
    int first_nonzero = 0;
    while (first_nonzero < 255 && hist[first_nonzero] == 0) first_nonzero++;
    const double lo = cdf[first_nonzero];
    if (npix - lo < 1e-9) continue;  // constant channel
    for (int y = 0; y < b.height; ++y)
      for (int x = 0; x < b.width; ++x) {
        const double v = b.at(n, c, y, x);
        const int q = static_cast<int>(std::lround(v * 255.0));
        const double eq = (cdf[q] - lo) / (npix - lo);
        b.at(n, c, y, x) = (1.0 - m) * v + m * eq;
      }
  }
  clamp_sample(b, n);
}

struct OpEntry {
  const char* name;
  OpFn fn;
};

constexpr OpEntry kOps[] = {
    {"shear_x", op_shear_x},       {"shear_y", op_shear_y},
    {"translate_x", op_translate_x}, {"translate_y", op_translate_y},
    {"rotate", op_rotate},         {"color", op_color},
    {"posterize", op_posterize},   {"solarize", op_solarize},
    {"contrast", op_contrast},     {"brightness", op_brightness},
    {"sharpness", op_sharpness},   {"autocontrast", op_autocontrast},
    {"equalize", op_equalize},
};

OpFn find_op(const std::string& name) {
  for (const auto& e : kOps)
    if (name == e.name) return e.fn;
  throw ConfigError("unknown strong augmentation op: " + name);
}

}  // namespace

const std::vector<std::string>& strong_op_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& e : kOps) v.emplace_back(e.name);
    return v;
  }();
  return names;
}

AugPolicy AugPolicy::weak(int pad, double flip_prob) {
  AugPolicy p;
  p.kind = AugKind::weak_pc;
  p.pad = pad;
  p.flip_prob = flip_prob;
  return p;
}

AugPolicy AugPolicy::strong(double magnitude) {
  AugPolicy p;
  p.kind = AugKind::strong_auto;
  for (const auto& name : strong_op_names()) p.ops.push_back({name, magnitude});
  return p;
}

AugPolicy AugPolicy::identity() {
  AugPolicy p;
  p.kind = AugKind::identity;
  p.pad = 0;
  p.flip_prob = 0.0;
  return p;
}

void AugPolicy::validate() const {
  if (pad < 0) throw ConfigError("augment: pad must be >= 0");
  if (flip_prob < 0.0 || flip_prob > 1.0)
    throw ConfigError("augment: flip probability must be in [0,1]");
  if (ops_per_image < 0) throw ConfigError("augment: ops_per_image must be >= 0");
  for (const auto& op : ops) {
    find_op(op.name);
    if (op.magnitude < 0.0 || op.magnitude > 1.0)
      throw ConfigError("augment: op '" + op.name + "' magnitude " +
                        std::to_string(op.magnitude) + " outside [0,1]");
  }
}

ImageBatch weak_augment(const ImageBatch& b, std::uint64_t seed,
                        const AugPolicy& policy) {
  policy.validate();
  if (policy.pad >= std::min(b.height, b.width))
    throw ConfigError("weak_augment: pad must be smaller than the image side");
  ImageBatch out = b;
  for (int n = 0; n < b.size(); ++n) {
    auto rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(n)));
    int oy = 0, ox = 0;
    if (policy.pad > 0) {
      std::uniform_int_distribution<int> off(0, 2 * policy.pad);
      oy = off(rng);
      ox = off(rng);
    }
    const bool flip =
        policy.flip_prob > 0.0 &&
        std::uniform_real_distribution<double>(0.0, 1.0)(rng) < policy.flip_prob;
    for (int c = 0; c < b.channels; ++c) {
      ChannelView src(b, n, c);
      for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
          const int sx = flip ? b.width - 1 - x : x;
          out.at(n, c, y, x) = src(y + oy - policy.pad, sx + ox - policy.pad);
        }
    }
  }
  return out;
}

ImageBatch strong_augment(const ImageBatch& b, std::uint64_t seed,
                          const AugPolicy& policy) {
  if (policy.kind != AugKind::strong_auto)
    throw ConfigError("strong_augment requires a strong_auto policy");
  policy.validate();
  ImageBatch out = b;
  if (!policy.ops.empty()) {
    for (int n = 0; n < b.size(); ++n) {
      auto rng = make_rng(mix_seed(mix_seed(seed, 0x57a6), static_cast<std::uint64_t>(n)));
      std::uniform_int_distribution<std::size_t> pick(0, policy.ops.size() - 1);
      for (int k = 0; k < policy.ops_per_image; ++k) {
        const auto& op = policy.ops[pick(rng)];
        find_op(op.name)(out, n, op.magnitude, rng);
      }
    }
  }
  // same seed as a bare weak pass, so an empty op list reduces to it exactly
  AugPolicy pc = AugPolicy::weak(policy.pad, policy.flip_prob);
  return weak_augment(out, seed, pc);
}

std::pair<ImageBatch, ImageBatch> make_view_pair(const ImageBatch& b,
                                                 PairingMode pairing,
                                                 std::uint64_t seed,
                                                 const ViewPolicies& policies) {
  switch (pairing) {
    case PairingMode::common_weak: {
      ImageBatch v = weak_augment(b, mix_seed(seed, 1), policies.weak);
      return {v, v};
    }
    case PairingMode::common_strong: {
      ImageBatch v = strong_augment(b, mix_seed(seed, 1), policies.strong);
      return {v, v};
    }
    case PairingMode::independent_weak:
      return {weak_augment(b, mix_seed(seed, 1), policies.weak),
              weak_augment(b, mix_seed(seed, 2), policies.weak)};
    case PairingMode::independent_strong:
      return {strong_augment(b, mix_seed(seed, 1), policies.strong),
              strong_augment(b, mix_seed(seed, 2), policies.strong)};
    case PairingMode::strong_teacher_weak_student:
      return {strong_augment(b, mix_seed(seed, 1), policies.strong),
              weak_augment(b, mix_seed(seed, 2), policies.weak)};
    case PairingMode::weak_teacher_strong_student:
      return {weak_augment(b, mix_seed(seed, 1), policies.weak),
              strong_augment(b, mix_seed(seed, 2), policies.strong)};
  }
  throw ConfigError("make_view_pair: invalid pairing mode");
}

}  // namespace profeat::aug
