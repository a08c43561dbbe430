#pragma once

#include "profeat/common.hpp"

#include <memory>
#include <string>
#include <vector>

namespace profeat::nn {

struct Shape {
  int c = 0, h = 1, w = 1;
  int dim() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
};

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;  // lazily sized on first use
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) zero_grad();
  }
};

/// Per-forward saved state. A fresh Trace per forward call makes it possible
/// to run several forwards through one network (clean view, adversarial view)
/// and backpropagate each independently.
struct Trace {
  std::vector<Matrix> saved;
  std::vector<Trace> children;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Matrix forward(const Matrix& x, Trace& tr, bool training) = 0;
  /// Returns the gradient w.r.t. the layer input. Accumulates into parameter
  /// gradients only when `accumulate` is set (attack gradients pass false).
  virtual Matrix backward(const Matrix& gy, const Trace& tr, bool accumulate) = 0;
  virtual void collect(std::vector<Param*>& out) = 0;
  virtual void rename(const std::string& prefix) = 0;
  virtual Shape out_shape() const = 0;
  virtual const char* kind() const = 0;
};

std::unique_ptr<Layer> make_dense(Shape in, int out_dim, std::mt19937_64& rng);
std::unique_ptr<Layer> make_relu(Shape in);
std::unique_ptr<Layer> make_conv(Shape in, int out_channels, int kernel,
                                 int stride, int pad, std::mt19937_64& rng);
std::unique_ptr<Layer> make_batchnorm(Shape in);
std::unique_ptr<Layer> make_global_avg_pool(Shape in);
/// Post-activation residual block (CIFAR ResNet style).
std::unique_ptr<Layer> make_basic_block(Shape in, int out_channels, int stride,
                                        std::mt19937_64& rng);
/// Pre-activation wide residual block (WRN style).
std::unique_ptr<Layer> make_wide_block(Shape in, int out_channels, int stride,
                                       std::mt19937_64& rng);

/// A feed-forward stack of layers; the realization of the spec's
/// differentiable-module contract. Forwards with training=false never mutate
/// state (normalization statistics included) and are safe to run concurrently.
class Net {
 public:
  explicit Net(Shape in) : in_shape_(in), out_shape_(in) {}

  void add(std::unique_ptr<Layer> layer);

  Matrix forward(const Matrix& x, Trace& tr, bool training);
  Matrix forward(const Matrix& x);  // inference convenience

  Matrix backward(const Matrix& gy, const Trace& tr, bool accumulate = true);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  void set_trainable(bool trainable);
  void zero_grad();

  Shape in_shape() const { return in_shape_; }
  Shape out_shape() const { return out_shape_; }
  int out_dim() const { return out_shape_.dim(); }
  std::size_t num_layers() const { return layers_.size(); }

  std::uint64_t param_hash() const;
  /// Copies parameter values (and normalization statistics) from an
  /// architecturally identical network.
  void copy_params_from(const Net& other);

  struct LayerInfo {
    std::string kind;
    Shape out;
  };
  std::vector<LayerInfo> layer_info() const;

 private:
  Shape in_shape_, out_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

class Sgd {
 public:
  Sgd(std::vector<Param*> params, SgdConfig cfg);

  void zero_grad();
  void step(double lr);

  const std::vector<Param*>& tracked() const { return params_; }
  std::vector<Matrix>& momentum_buffers() { return velocity_; }

 private:
  std::vector<Param*> params_;
  std::vector<Matrix> velocity_;
  SgdConfig cfg_;
};

}  // namespace profeat::nn
