#include "profeat/nn.hpp"

#include <cmath>

namespace profeat::nn {

namespace {

Matrix he_init(int rows, int cols, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  return m;
}

void prefix_params(std::vector<Param*> params, const std::string& prefix) {
  for (auto* p : params) p->name = prefix + p->name;
}

class Dense final : public Layer {
 public:
  Dense(Shape in, int out_dim, std::mt19937_64& rng) : in_(in) {
    w_.name = "W";
    w_.value = he_init(in.dim(), out_dim, in.dim(), rng);
    b_.name = "b";
    b_.value = Matrix::Zero(1, out_dim);
  }

  Matrix forward(const Matrix& x, Trace& tr, bool) override {
    tr.saved.assign(1, x);
    return (x * w_.value).rowwise() + b_.value.row(0);
  }

  Matrix backward(const Matrix& gy, const Trace& tr, bool accumulate) override {
    const Matrix& x = tr.saved[0];
    if (accumulate) {
      w_.ensure_grad();
      b_.ensure_grad();
      w_.grad.noalias() += x.transpose() * gy;
      b_.grad.row(0) += gy.colwise().sum();
    }
    return gy * w_.value.transpose();
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  void rename(const std::string& prefix) override {
    prefix_params({&w_, &b_}, prefix);
  }
  Shape out_shape() const override {
    return {static_cast<int>(w_.value.cols()), 1, 1};
  }
  const char* kind() const override { return "dense"; }

 private:
  Shape in_;
  Param w_, b_;
};

class Relu final : public Layer {
 public:
  explicit Relu(Shape in) : in_(in) {}

  Matrix forward(const Matrix& x, Trace& tr, bool) override {
    tr.saved.assign(1, x);
    return x.cwiseMax(0.0);
  }

  Matrix backward(const Matrix& gy, const Trace& tr, bool) override {
    return ((tr.saved[0].array() > 0.0).cast<double>() * gy.array()).matrix();
  }

  void collect(std::vector<Param*>&) override {}
  void rename(const std::string&) override {}
  Shape out_shape() const override { return in_; }
  const char* kind() const override { return "relu"; }

 private:
  Shape in_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(Shape in, int out_channels, int kernel, int stride, int pad,
         std::mt19937_64& rng)
      : in_(in), k_(kernel), stride_(stride), pad_(pad) {
    out_.c = out_channels;
    out_.h = (in.h + 2 * pad - kernel) / stride + 1;
    out_.w = (in.w + 2 * pad - kernel) / stride + 1;
    if (out_.h < 1 || out_.w < 1)
      throw ConfigError("conv layer output would be empty");
    const int fan_in = in.c * kernel * kernel;
    w_.name = "W";  // (Cout x Cin*k*k)
    w_.value = he_init(out_channels, fan_in, fan_in, rng);
    b_.name = "b";
    b_.value = Matrix::Zero(1, out_channels);
  }

  Matrix forward(const Matrix& x, Trace& tr, bool) override {
    const Eigen::Index n = x.rows();
    Matrix col = im2col(x);
    Matrix ycol = col * w_.value.transpose();  // (N*OH*OW) x Cout
    ycol.rowwise() += b_.value.row(0);
    tr.saved.assign(1, std::move(col));

    const int ohw = out_.h * out_.w;
    Matrix y(n, out_.dim());
    for (Eigen::Index i = 0; i < n; ++i)
      for (int co = 0; co < out_.c; ++co)
        for (int p = 0; p < ohw; ++p)
          y(i, co * ohw + p) = ycol(i * ohw + p, co);
    return y;
  }

  Matrix backward(const Matrix& gy, const Trace& tr, bool accumulate) override {
    const Eigen::Index n = gy.rows();
    const int ohw = out_.h * out_.w;
    Matrix gycol(n * ohw, out_.c);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int co = 0; co < out_.c; ++co)
        for (int p = 0; p < ohw; ++p)
          gycol(i * ohw + p, co) = gy(i, co * ohw + p);

    const Matrix& col = tr.saved[0];
    if (accumulate) {
      w_.ensure_grad();
      b_.ensure_grad();
      w_.grad.noalias() += gycol.transpose() * col;
      b_.grad.row(0) += gycol.colwise().sum();
    }
    Matrix gcol = gycol * w_.value;  // (N*OH*OW) x (Cin*k*k)
    return col2im(gcol, n);
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  void rename(const std::string& prefix) override {
    prefix_params({&w_, &b_}, prefix);
  }
  Shape out_shape() const override { return out_; }
  const char* kind() const override { return "conv"; }

 private:
  Matrix im2col(const Matrix& x) const {
    const Eigen::Index n = x.rows();
    const int ohw = out_.h * out_.w;
    Matrix col = Matrix::Zero(n * ohw, in_.c * k_ * k_);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int oy = 0; oy < out_.h; ++oy) {
        for (int ox = 0; ox < out_.w; ++ox) {
          const Eigen::Index r = i * ohw + oy * out_.w + ox;
          for (int c = 0; c < in_.c; ++c) {
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= in_.h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = ox * stride_ - pad_ + kx;
                if (ix < 0 || ix >= in_.w) continue;
                col(r, (c * k_ + ky) * k_ + kx) = x(i, (c * in_.h + iy) * in_.w + ix);
              }
            }
          }
        }
      }
    }
    return col;
  }

  Matrix col2im(const Matrix& gcol, Eigen::Index n) const {
    const int ohw = out_.h * out_.w;
    Matrix gx = Matrix::Zero(n, in_.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int oy = 0; oy < out_.h; ++oy) {
        for (int ox = 0; ox < out_.w; ++ox) {
          const Eigen::Index r = i * ohw + oy * out_.w + ox;
          for (int c = 0; c < in_.c; ++c) {
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= in_.h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = ox * stride_ - pad_ + kx;
                if (ix < 0 || ix >= in_.w) continue;
                gx(i, (c * in_.h + iy) * in_.w + ix) += gcol(r, (c * k_ + ky) * k_ + kx);
              }
            }
          }
        }
      }
    }
    return gx;
  }

  Shape in_, out_;
  int k_, stride_, pad_;
  Param w_, b_;
};

// Channel-wise batch normalization over N and the spatial extent. Running
// statistics live in non-trainable params so they are checkpointed and hashed
// with the rest of the model, but never touched by the optimizer.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(Shape in) : in_(in), spatial_(in.h * in.w) {
    gamma_.name = "gamma";
    gamma_.value = Matrix::Ones(1, in.c);
    beta_.name = "beta";
    beta_.value = Matrix::Zero(1, in.c);
    rmean_.name = "running_mean";
    rmean_.value = Matrix::Zero(1, in.c);
    rmean_.trainable = false;
    rvar_.name = "running_var";
    rvar_.value = Matrix::Ones(1, in.c);
    rvar_.trainable = false;
  }

  Matrix forward(const Matrix& x, Trace& tr, bool training) override {
    const Eigen::Index n = x.rows();
    const double m = static_cast<double>(n) * spatial_;
    Matrix y(n, x.cols());
    Matrix xhat(n, x.cols());
    Matrix invstd(1, in_.c);
    for (int c = 0; c < in_.c; ++c) {
      auto xc = x.middleCols(static_cast<Eigen::Index>(c) * spatial_, spatial_);
      double mean, var;
      if (training) {
        mean = xc.mean();
        var = (xc.array() - mean).square().sum() / m;
        const double unbiased = m > 1.5 ? var * m / (m - 1.0) : var;
        rmean_.value(0, c) = (1.0 - kMomentum) * rmean_.value(0, c) + kMomentum * mean;
        rvar_.value(0, c) = (1.0 - kMomentum) * rvar_.value(0, c) + kMomentum * unbiased;
      } else {
        mean = rmean_.value(0, c);
        var = rvar_.value(0, c);
      }
      const double is = 1.0 / std::sqrt(var + kEps);
      invstd(0, c) = is;
      auto xhc = xhat.middleCols(static_cast<Eigen::Index>(c) * spatial_, spatial_);
      xhc = ((xc.array() - mean) * is).matrix();
      y.middleCols(static_cast<Eigen::Index>(c) * spatial_, spatial_) =
          (xhc.array() * gamma_.value(0, c) + beta_.value(0, c)).matrix();
    }
    tr.saved.resize(3);
    tr.saved[0] = std::move(xhat);
    tr.saved[1] = std::move(invstd);
    tr.saved[2] = Matrix::Constant(1, 1, training ? 1.0 : 0.0);
    return y;
  }

  Matrix backward(const Matrix& gy, const Trace& tr, bool accumulate) override {
    const Matrix& xhat = tr.saved[0];
    const Matrix& invstd = tr.saved[1];
    const bool trained_stats = tr.saved[2](0, 0) > 0.5;
    const double m = static_cast<double>(gy.rows()) * spatial_;
    Matrix gx(gy.rows(), gy.cols());
    for (int c = 0; c < in_.c; ++c) {
      const Eigen::Index off = static_cast<Eigen::Index>(c) * spatial_;
      auto gc = gy.middleCols(off, spatial_);
      auto xc = xhat.middleCols(off, spatial_);
      const double dgamma = (gc.array() * xc.array()).sum();
      const double dbeta = gc.sum();
      if (accumulate) {
        gamma_.ensure_grad();
        beta_.ensure_grad();
        gamma_.grad(0, c) += dgamma;
        beta_.grad(0, c) += dbeta;
      }
      const double scale = gamma_.value(0, c) * invstd(0, c);
      if (trained_stats) {
        gx.middleCols(off, spatial_) =
            (scale * (gc.array() - dbeta / m - xc.array() * (dgamma / m))).matrix();
      } else {
        gx.middleCols(off, spatial_) = scale * gc;
      }
    }
    return gx;
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&rmean_);
    out.push_back(&rvar_);
  }
  void rename(const std::string& prefix) override {
    prefix_params({&gamma_, &beta_, &rmean_, &rvar_}, prefix);
  }
  Shape out_shape() const override { return in_; }
  const char* kind() const override { return "bn"; }

 private:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
  Shape in_;
  int spatial_;
  Param gamma_, beta_, rmean_, rvar_;
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(Shape in) : in_(in), spatial_(in.h * in.w) {}

  Matrix forward(const Matrix& x, Trace&, bool) override {
    Matrix y(x.rows(), in_.c);
    for (int c = 0; c < in_.c; ++c)
      y.col(c) = x.middleCols(static_cast<Eigen::Index>(c) * spatial_, spatial_)
                     .rowwise()
                     .mean();
    return y;
  }

  Matrix backward(const Matrix& gy, const Trace&, bool) override {
    Matrix gx(gy.rows(), in_.dim());
    for (int c = 0; c < in_.c; ++c)
      gx.middleCols(static_cast<Eigen::Index>(c) * spatial_, spatial_) =
          (gy.col(c) / spatial_).replicate(1, spatial_);
    return gx;
  }

  void collect(std::vector<Param*>&) override {}
  void rename(const std::string&) override {}
  Shape out_shape() const override { return {in_.c, 1, 1}; }
  const char* kind() const override { return "gap"; }

 private:
  Shape in_;
  int spatial_;
};

// conv-bn-relu-conv-bn plus (projected) identity, final relu.
class BasicBlock final : public Layer {
 public:
  BasicBlock(Shape in, int out_channels, int stride, std::mt19937_64& rng) {
    conv1_ = make_conv(in, out_channels, 3, stride, 1, rng);
    bn1_ = make_batchnorm(conv1_->out_shape());
    conv2_ = make_conv(conv1_->out_shape(), out_channels, 3, 1, 1, rng);
    bn2_ = make_batchnorm(conv2_->out_shape());
    out_ = conv2_->out_shape();
    if (stride != 1 || in.c != out_channels) {
      sc_conv_ = make_conv(in, out_channels, 1, stride, 0, rng);
      sc_bn_ = make_batchnorm(sc_conv_->out_shape());
    }
  }

  Matrix forward(const Matrix& x, Trace& tr, bool training) override {
    tr.children.resize(6);
    Matrix h = conv1_->forward(x, tr.children[0], training);
    h = bn1_->forward(h, tr.children[1], training);
    tr.saved.resize(2);
    tr.saved[0] = h;  // pre-activation of the middle relu
    h = h.cwiseMax(0.0);
    h = conv2_->forward(h, tr.children[2], training);
    h = bn2_->forward(h, tr.children[3], training);
    Matrix sc = x;
    if (sc_conv_) {
      sc = sc_conv_->forward(x, tr.children[4], training);
      sc = sc_bn_->forward(sc, tr.children[5], training);
    }
    Matrix pre = h + sc;
    tr.saved[1] = pre;
    return pre.cwiseMax(0.0);
  }

  Matrix backward(const Matrix& gy, const Trace& tr, bool acc) override {
    Matrix g = ((tr.saved[1].array() > 0.0).cast<double>() * gy.array()).matrix();
    Matrix gmain = bn2_->backward(g, tr.children[3], acc);
    gmain = conv2_->backward(gmain, tr.children[2], acc);
    gmain = ((tr.saved[0].array() > 0.0).cast<double>() * gmain.array()).matrix();
    gmain = bn1_->backward(gmain, tr.children[1], acc);
    gmain = conv1_->backward(gmain, tr.children[0], acc);
    if (sc_conv_) {
      Matrix gsc = sc_bn_->backward(g, tr.children[5], acc);
      gsc = sc_conv_->backward(gsc, tr.children[4], acc);
      return gmain + gsc;
    }
    return gmain + g;
  }

  void collect(std::vector<Param*>& out) override {
    conv1_->collect(out);
    bn1_->collect(out);
    conv2_->collect(out);
    bn2_->collect(out);
    if (sc_conv_) {
      sc_conv_->collect(out);
      sc_bn_->collect(out);
    }
  }
  void rename(const std::string& prefix) override {
    conv1_->rename(prefix + "conv1.");
    bn1_->rename(prefix + "bn1.");
    conv2_->rename(prefix + "conv2.");
    bn2_->rename(prefix + "bn2.");
    if (sc_conv_) {
      sc_conv_->rename(prefix + "sc_conv.");
      sc_bn_->rename(prefix + "sc_bn.");
    }
  }
  Shape out_shape() const override { return out_; }
  const char* kind() const override { return "basic_block"; }

 private:
  std::unique_ptr<Layer> conv1_, bn1_, conv2_, bn2_, sc_conv_, sc_bn_;
  Shape out_;
};

// Pre-activation wide residual block: bn-relu-conv-bn-relu-conv; the shortcut
// projection (when needed) consumes the activated input.
class WideBlock final : public Layer {
 public:
  WideBlock(Shape in, int out_channels, int stride, std::mt19937_64& rng)
      : equal_(stride == 1 && in.c == out_channels) {
    bn1_ = make_batchnorm(in);
    conv1_ = make_conv(in, out_channels, 3, stride, 1, rng);
    bn2_ = make_batchnorm(conv1_->out_shape());
    conv2_ = make_conv(conv1_->out_shape(), out_channels, 3, 1, 1, rng);
    out_ = conv2_->out_shape();
    if (!equal_) sc_conv_ = make_conv(in, out_channels, 1, stride, 0, rng);
  }

  Matrix forward(const Matrix& x, Trace& tr, bool training) override {
    tr.children.resize(5);
    tr.saved.resize(2);
    Matrix a = bn1_->forward(x, tr.children[0], training);
    tr.saved[0] = a;
    a = a.cwiseMax(0.0);
    Matrix h = conv1_->forward(a, tr.children[1], training);
    h = bn2_->forward(h, tr.children[2], training);
    tr.saved[1] = h;
    h = h.cwiseMax(0.0);
    h = conv2_->forward(h, tr.children[3], training);
    if (equal_) return h + x;
    return h + sc_conv_->forward(a, tr.children[4], training);
  }

  Matrix backward(const Matrix& gy, const Trace& tr, bool acc) override {
    Matrix g = conv2_->backward(gy, tr.children[3], acc);
    g = ((tr.saved[1].array() > 0.0).cast<double>() * g.array()).matrix();
    g = bn2_->backward(g, tr.children[2], acc);
    Matrix ga = conv1_->backward(g, tr.children[1], acc);
    if (!equal_) ga += sc_conv_->backward(gy, tr.children[4], acc);
    ga = ((tr.saved[0].array() > 0.0).cast<double>() * ga.array()).matrix();
    Matrix gx = bn1_->backward(ga, tr.children[0], acc);
    if (equal_) gx += gy;
    return gx;
  }

  void collect(std::vector<Param*>& out) override {
    bn1_->collect(out);
    conv1_->collect(out);
    bn2_->collect(out);
    conv2_->collect(out);
    if (sc_conv_) sc_conv_->collect(out);
  }
  void rename(const std::string& prefix) override {
    bn1_->rename(prefix + "bn1.");
    conv1_->rename(prefix + "conv1.");
    bn2_->rename(prefix + "bn2.");
    conv2_->rename(prefix + "conv2.");
    if (sc_conv_) sc_conv_->rename(prefix + "sc_conv.");
  }
  Shape out_shape() const override { return out_; }
  const char* kind() const override { return "wide_block"; }

 private:
  bool equal_;
  std::unique_ptr<Layer> bn1_, conv1_, bn2_, conv2_, sc_conv_;
  Shape out_;
};

}  // namespace

std::unique_ptr<Layer> make_dense(Shape in, int out_dim, std::mt19937_64& rng) {
  return std::make_unique<Dense>(in, out_dim, rng);
}
std::unique_ptr<Layer> make_relu(Shape in) { return std::make_unique<Relu>(in); }
std::unique_ptr<Layer> make_conv(Shape in, int out_channels, int kernel,
                                 int stride, int pad, std::mt19937_64& rng) {
  return std::make_unique<Conv2d>(in, out_channels, kernel, stride, pad, rng);
}
std::unique_ptr<Layer> make_batchnorm(Shape in) {
  return std::make_unique<BatchNorm>(in);
}
std::unique_ptr<Layer> make_global_avg_pool(Shape in) {
  return std::make_unique<GlobalAvgPool>(in);
}
std::unique_ptr<Layer> make_basic_block(Shape in, int out_channels, int stride,
                                        std::mt19937_64& rng) {
  return std::make_unique<BasicBlock>(in, out_channels, stride, rng);
}
std::unique_ptr<Layer> make_wide_block(Shape in, int out_channels, int stride,
                                       std::mt19937_64& rng) {
  return std::make_unique<WideBlock>(in, out_channels, stride, rng);
}

void Net::add(std::unique_ptr<Layer> layer) {
  layer->rename("L" + std::to_string(layers_.size()) + ".");
  out_shape_ = layer->out_shape();
  layers_.push_back(std::move(layer));
}

Matrix Net::forward(const Matrix& x, Trace& tr, bool training) {
  if (x.cols() != in_shape_.dim())
    throw ConfigError("net forward: input has " + std::to_string(x.cols()) +
                      " columns, expected " + std::to_string(in_shape_.dim()));
  tr.children.resize(layers_.size());
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    h = layers_[i]->forward(h, tr.children[i], training);
  return h;
}

Matrix Net::forward(const Matrix& x) {
  Trace tr;
  return forward(x, tr, false);
}

Matrix Net::backward(const Matrix& gy, const Trace& tr, bool accumulate) {
  Matrix g = gy;
  for (std::size_t i = layers_.size(); i-- > 0;)
    g = layers_[i]->backward(g, tr.children[i], accumulate);
  return g;
}

std::vector<Param*> Net::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) l->collect(out);
  return out;
}

std::vector<const Param*> Net::params() const {
  std::vector<Param*> out;
  for (const auto& l : layers_) const_cast<Layer&>(*l).collect(out);
  return {out.begin(), out.end()};
}

void Net::set_trainable(bool trainable) {
  for (auto* p : params())
    if (p->name.find("running_") == std::string::npos) p->trainable = trainable;
}

void Net::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

std::uint64_t Net::param_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : params()) {
    h = hash_bytes(p->name, h);
    h = hash_matrix(p->value, h);
  }
  return h;
}

std::vector<Net::LayerInfo> Net::layer_info() const {
  std::vector<LayerInfo> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) out.push_back({l->kind(), l->out_shape()});
  return out;
}

void Net::copy_params_from(const Net& other) {
  auto dst = params();
  auto src = other.params();
  if (dst.size() != src.size())
    throw ConfigError("copy_params_from: parameter group count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->value.rows() != src[i]->value.rows() ||
        dst[i]->value.cols() != src[i]->value.cols())
      throw ConfigError("copy_params_from: shape mismatch at " + dst[i]->name);
    dst[i]->value = src[i]->value;
  }
}

Sgd::Sgd(std::vector<Param*> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  velocity_.reserve(params_.size());
  for (auto* p : params_)
    velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
}

void Sgd::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (!p->trainable) continue;
    p->ensure_grad();
    Matrix update = p->grad + cfg_.weight_decay * p->value;
    velocity_[i] = cfg_.momentum * velocity_[i] + update;
    p->value -= lr * velocity_[i];
  }
}

}  // namespace profeat::nn
