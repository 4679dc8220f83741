#ifndef FTSEG_LAYERS_HPP
#define FTSEG_LAYERS_HPP

#include "ftseg/parameter.hpp"
#include "ftseg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <memory>
#include <vector>

namespace ftseg {

/// A differentiable layer with cached state from its last forward pass.
/// `backward` accumulates gradients into trainable parameters and returns the
/// input gradient only when `need_input_grad` is set (empty tensor otherwise).
template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) = 0;
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) = 0;
  virtual bool has_trainable() const { return false; }
};

template <typename Scalar>
using LayerPtr = std::unique_ptr<Layer<Scalar>>;

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Unfolds one sample (C x H x W) into a (C*k*k) x (Ho*Wo) patch matrix.
template <typename Scalar>
void im2col(const Scalar* src, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            RowMatrix<Scalar>& col) {
  col.resize(Eigen::Index(channels) * k * k, Eigen::Index(ho) * wo);
  for (int c = 0; c < channels; ++c) {
    const Scalar* plane = src + Eigen::Index(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = col.data() + ((Eigen::Index(c) * k + ky) * k + kx) * col.cols();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          Scalar* dst = row + Eigen::Index(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, Scalar(0));
            continue;
          }
          const Scalar* line = plane + Eigen::Index(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? line[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& col, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            Scalar* dst) {
  std::fill(dst, dst + Eigen::Index(channels) * h * w, Scalar(0));
  for (int c = 0; c < channels; ++c) {
    Scalar* plane = dst + Eigen::Index(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = col.data() + ((Eigen::Index(c) * k + ky) * k + kx) * col.cols();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const Scalar* src = row + Eigen::Index(oy) * wo;
          Scalar* line = plane + Eigen::Index(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Dense 2-D convolution, weight layout [out, in, k, k].
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(ParameterRegistry<Scalar>& reg, const std::string& name, int in, int out, int kernel, int stride, int pad,
         bool bias)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad) {
    weight_ = reg.he_uniform(name + ".weight", {out, in, kernel, kernel}, std::int64_t(in) * kernel * kernel);
    if (bias) bias_ = reg.constant(name + ".bias", {out}, Scalar(0));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) override {
    if (x.channels() != in_) throw ShapeError("Conv2d " + weight_->name + ": input " + x.shape_string());
    if (training) input_ = x;
    detail::RowMatrix<Scalar> col;
    const int ho = detail::conv_out_size(x.height(), k_, stride_, pad_);
    const int wo = detail::conv_out_size(x.width(), k_, stride_, pad_);
    Tensor<Scalar> y(x.batch(), out_, ho, wo);
    const auto w = weight_matrix();
    for (int n = 0; n < x.batch(); ++n) {
      auto out = y.plane(n);
      if (pointwise()) {
        out.noalias() = w * x.plane(n);
      } else {
        detail::im2col(x.sample_ptr(n), in_, x.height(), x.width(), k_, stride_, pad_, ho, wo, col);
        out.noalias() = w * col;
      }
      if (bias_) out.colwise() += bias_->value;
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    const bool wgrad = weight_->trainable;
    const bool bgrad = bias_ && bias_->trainable;
    Tensor<Scalar> gin;
    if (need_input_grad) gin = Tensor<Scalar>::zeros_like(input_);
    if (!wgrad && !bgrad && !need_input_grad) return gin;
    const auto w = weight_matrix();
    const int ho = grad.height(), wo = grad.width();
    detail::RowMatrix<Scalar> gcol, col;
    for (int n = 0; n < grad.batch(); ++n) {
      const auto g = grad.plane(n);
      if (bgrad) bias_->gradient() += g.rowwise().sum();
      if (pointwise()) {
        if (wgrad) weight_grad_matrix().noalias() += g * input_.plane(n).transpose();
        if (need_input_grad) gin.plane(n).noalias() = w.transpose() * g;
        continue;
      }
      if (wgrad) {
        detail::im2col(input_.sample_ptr(n), in_, input_.height(), input_.width(), k_, stride_, pad_, ho, wo, col);
        weight_grad_matrix().noalias() += g * col.transpose();
      }
      if (need_input_grad) {
        gcol.noalias() = w.transpose() * g;
        detail::col2im(gcol, in_, input_.height(), input_.width(), k_, stride_, pad_, ho, wo, gin.sample_ptr(n));
      }
    }
    return gin;
  }

  bool has_trainable() const override { return weight_->trainable || (bias_ && bias_->trainable); }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }
  auto weight_matrix() const {
    return Eigen::Map<const detail::RowMatrix<Scalar>>(weight_->value.data(), out_, Eigen::Index(in_) * k_ * k_);
  }
  auto weight_grad_matrix() {
    return Eigen::Map<detail::RowMatrix<Scalar>>(weight_->gradient().data(), out_, Eigen::Index(in_) * k_ * k_);
  }

  int in_, out_, k_, stride_, pad_;
  Parameter<Scalar>* weight_ = nullptr;
  Parameter<Scalar>* bias_ = nullptr;
  Tensor<Scalar> input_;
};

/// Depthwise 3x3 convolution (one filter per channel), weight [C, 1, 3, 3].
template <typename Scalar>
class DepthwiseConv2d final : public Layer<Scalar> {
 public:
  DepthwiseConv2d(ParameterRegistry<Scalar>& reg, const std::string& name, int channels, int stride)
      : channels_(channels), stride_(stride) {
    weight_ = reg.he_uniform(name + ".weight", {channels, 1, 3, 3}, 9);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) override {
    if (x.channels() != channels_) throw ShapeError("DepthwiseConv2d " + weight_->name + ": input " + x.shape_string());
    if (training) input_ = x;
    const int h = x.height(), w = x.width();
    const int ho = detail::conv_out_size(h, 3, stride_, 1), wo = detail::conv_out_size(w, 3, stride_, 1);
    Tensor<Scalar> y(x.batch(), channels_, ho, wo);
    for (int n = 0; n < x.batch(); ++n) {
      for (int c = 0; c < channels_; ++c) {
        const Scalar* k = weight_->value.data() + 9 * c;
        const Scalar* src = x.sample_ptr(n) + Eigen::Index(c) * h * w;
        Scalar* dst = y.sample_ptr(n) + Eigen::Index(c) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride_ - 1 + ky;
            if (iy < 0 || iy >= h) continue;
            const Scalar* line = src + Eigen::Index(iy) * w;
            Scalar* out = dst + Eigen::Index(oy) * wo;
            for (int kx = 0; kx < 3; ++kx) {
              const Scalar kv = k[ky * 3 + kx];
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride_ - 1 + kx;
                if (ix >= 0 && ix < w) out[ox] += kv * line[ix];
              }
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    const bool wgrad = weight_->trainable;
    Tensor<Scalar> gin;
    if (need_input_grad) gin = Tensor<Scalar>::zeros_like(input_);
    if (!wgrad && !need_input_grad) return gin;
    const int h = input_.height(), w = input_.width();
    const int ho = grad.height(), wo = grad.width();
    Scalar* gw = wgrad ? weight_->gradient().data() : nullptr;
    for (int n = 0; n < grad.batch(); ++n) {
      for (int c = 0; c < channels_; ++c) {
        const Scalar* k = weight_->value.data() + 9 * c;
        const Scalar* src = input_.sample_ptr(n) + Eigen::Index(c) * h * w;
        const Scalar* g = grad.sample_ptr(n) + Eigen::Index(c) * ho * wo;
        Scalar* gi = need_input_grad ? gin.sample_ptr(n) + Eigen::Index(c) * h * w : nullptr;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride_ - 1 + ky;
            if (iy < 0 || iy >= h) continue;
            const Scalar* line = src + Eigen::Index(iy) * w;
            const Scalar* gline = g + Eigen::Index(oy) * wo;
            for (int kx = 0; kx < 3; ++kx) {
              const Scalar kv = k[ky * 3 + kx];
              Scalar acc = 0;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride_ - 1 + kx;
                if (ix < 0 || ix >= w) continue;
                acc += gline[ox] * line[ix];
                if (gi) gi[Eigen::Index(iy) * w + ix] += kv * gline[ox];
              }
              if (gw) gw[9 * c + ky * 3 + kx] += acc;
            }
          }
        }
      }
    }
    return gin;
  }

  bool has_trainable() const override { return weight_->trainable; }

 private:
  int channels_, stride_;
  Parameter<Scalar>* weight_ = nullptr;
  Tensor<Scalar> input_;
};

/// Transposed convolution with kernel 2 and stride 2, weight [in, out, 2, 2].
template <typename Scalar>
class ConvTranspose2x2 final : public Layer<Scalar> {
 public:
  ConvTranspose2x2(ParameterRegistry<Scalar>& reg, const std::string& name, int in, int out) : in_(in), out_(out) {
    weight_ = reg.he_uniform(name + ".weight", {in, out, 2, 2}, std::int64_t(in) * 4);
    bias_ = reg.constant(name + ".bias", {out}, Scalar(0));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) override {
    if (x.channels() != in_) throw ShapeError("ConvTranspose2x2 " + weight_->name + ": input " + x.shape_string());
    if (training) input_ = x;
    const int h = x.height(), w = x.width();
    Tensor<Scalar> y(x.batch(), out_, 2 * h, 2 * w);
    detail::RowMatrix<Scalar> taps;
    for (int n = 0; n < x.batch(); ++n) {
      taps.noalias() = weight_matrix().transpose() * x.plane(n);  // (out*4) x (h*w)
      Scalar* dst = y.sample_ptr(n);
      for (int o = 0; o < out_; ++o) {
        const Scalar b = bias_->value[o];
        for (int d = 0; d < 4; ++d) {
          const int dy = d / 2, dx = d % 2;
          const Scalar* row = taps.data() + (Eigen::Index(o) * 4 + d) * taps.cols();
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx)
              dst[(Eigen::Index(o) * 2 * h + 2 * yy + dy) * 2 * w + 2 * xx + dx] = row[yy * w + xx] + b;
        }
      }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    const bool wgrad = weight_->trainable, bgrad = bias_->trainable;
    Tensor<Scalar> gin;
    if (need_input_grad) gin = Tensor<Scalar>::zeros_like(input_);
    if (!wgrad && !bgrad && !need_input_grad) return gin;
    const int h = input_.height(), w = input_.width();
    detail::RowMatrix<Scalar> gathered(Eigen::Index(out_) * 4, Eigen::Index(h) * w);
    for (int n = 0; n < grad.batch(); ++n) {
      const Scalar* g = grad.sample_ptr(n);
      for (int o = 0; o < out_; ++o)
        for (int d = 0; d < 4; ++d) {
          const int dy = d / 2, dx = d % 2;
          Scalar* row = gathered.data() + (Eigen::Index(o) * 4 + d) * gathered.cols();
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) row[yy * w + xx] = g[(Eigen::Index(o) * 2 * h + 2 * yy + dy) * 2 * w + 2 * xx + dx];
        }
      if (bgrad) {
        auto& gb = bias_->gradient();
        for (int o = 0; o < out_; ++o) gb[o] += gathered.middleRows(Eigen::Index(o) * 4, 4).sum();
      }
      if (wgrad) {
        Eigen::Map<detail::RowMatrix<Scalar>>(weight_->gradient().data(), in_, Eigen::Index(out_) * 4).noalias() +=
            input_.plane(n) * gathered.transpose();
      }
      if (need_input_grad) gin.plane(n).noalias() = weight_matrix() * gathered;
    }
    return gin;
  }

  bool has_trainable() const override { return weight_->trainable || bias_->trainable; }

 private:
  auto weight_matrix() const {
    return Eigen::Map<const detail::RowMatrix<Scalar>>(weight_->value.data(), in_, Eigen::Index(out_) * 4);
  }

  int in_, out_;
  Parameter<Scalar>* weight_ = nullptr;
  Parameter<Scalar>* bias_ = nullptr;
  Tensor<Scalar> input_;
};

/// Batch normalisation over N, H, W per channel. Uses batch statistics only
/// when training and the layer itself is trainable; a frozen layer always
/// normalises with its running statistics and never updates them.
template <typename Scalar>
class BatchNorm2d final : public Layer<Scalar> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d(ParameterRegistry<Scalar>& reg, const std::string& name, int channels) : channels_(channels) {
    gamma_ = reg.constant(name + ".weight", {channels}, Scalar(1));
    beta_ = reg.constant(name + ".bias", {channels}, Scalar(0));
    running_mean_ = reg.buffer(name + ".running_mean", {channels}, Scalar(0));
    running_var_ = reg.buffer(name + ".running_var", {channels}, Scalar(1));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) override {
    if (x.channels() != channels_) throw ShapeError("BatchNorm2d " + gamma_->name + ": input " + x.shape_string());
    const bool batch_mode = training && has_trainable();
    const Eigen::Index hw = x.plane_size();
    const double m = double(x.batch()) * double(hw);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(channels_);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean(channels_);
    if (batch_mode) {
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(channels_);
      for (int n = 0; n < x.batch(); ++n) sum += x.plane(n).rowwise().sum();
      mean = sum / Scalar(m);
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sq = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(channels_);
      for (int n = 0; n < x.batch(); ++n)
        sq += (x.plane(n).colwise() - mean).array().square().matrix().rowwise().sum();
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> var = sq / Scalar(m);
      inv_std = (var.array() + Scalar(kEps)).rsqrt().matrix();
      const Scalar unbias = m > 1 ? Scalar(m / (m - 1)) : Scalar(1);
      running_mean_->value = Scalar(1 - kMomentum) * running_mean_->value + Scalar(kMomentum) * mean;
      running_var_->value = Scalar(1 - kMomentum) * running_var_->value + Scalar(kMomentum) * unbias * var;
    } else {
      mean = running_mean_->value;
      inv_std = (running_var_->value.array() + Scalar(kEps)).rsqrt().matrix();
    }
    if (training) {
      inv_std_ = inv_std;
      batch_mode_ = batch_mode;
    }
    Tensor<Scalar> y = Tensor<Scalar>::zeros_like(x);
    for (int n = 0; n < x.batch(); ++n) {
      auto out = y.plane(n);
      out = inv_std.asDiagonal() * (x.plane(n).colwise() - mean);
    }
    if (training) xhat_ = y;
    for (int n = 0; n < x.batch(); ++n) {
      auto out = y.plane(n);
      out = (gamma_->value.asDiagonal() * out).colwise() + beta_->value;
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    const bool pgrad = has_trainable();
    Tensor<Scalar> gin;
    if (!pgrad && !need_input_grad) return gin;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_g = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(channels_);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_gx = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(channels_);
    for (int n = 0; n < grad.batch(); ++n) {
      sum_g += grad.plane(n).rowwise().sum();
      sum_gx += grad.plane(n).cwiseProduct(xhat_.plane(n)).rowwise().sum();
    }
    if (gamma_->trainable) gamma_->gradient() += sum_gx;
    if (beta_->trainable) beta_->gradient() += sum_g;
    if (!need_input_grad) return gin;
    gin = Tensor<Scalar>::zeros_like(grad);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scale = gamma_->value.cwiseProduct(inv_std_);
    if (!batch_mode_) {
      for (int n = 0; n < grad.batch(); ++n) gin.plane(n) = scale.asDiagonal() * grad.plane(n);
      return gin;
    }
    const Scalar m = Scalar(double(grad.batch()) * double(grad.plane_size()));
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_g = sum_g / m;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_gx = sum_gx / m;
    for (int n = 0; n < grad.batch(); ++n) {
      auto centered = (grad.plane(n).colwise() - mean_g) - mean_gx.asDiagonal() * xhat_.plane(n);
      gin.plane(n) = scale.asDiagonal() * centered;
    }
    return gin;
  }

  bool has_trainable() const override { return gamma_->trainable || beta_->trainable; }

 private:
  int channels_;
  Parameter<Scalar>* gamma_ = nullptr;
  Parameter<Scalar>* beta_ = nullptr;
  Buffer<Scalar>* running_mean_ = nullptr;
  Buffer<Scalar>* running_var_ = nullptr;
  bool batch_mode_ = false;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std_;
  Tensor<Scalar> xhat_;
};

/// ReLU clipped to [0, ceiling]; ceiling <= 0 means unclipped.
template <typename Scalar>
class ClippedRelu final : public Layer<Scalar> {
 public:
  explicit ClippedRelu(Scalar ceiling = Scalar(0)) : ceiling_(ceiling) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) override {
    if (training) input_ = x;
    Tensor<Scalar> y = Tensor<Scalar>::zeros_like(x);
    if (ceiling_ > 0)
      y.data() = x.data().cwiseMax(Scalar(0)).cwiseMin(ceiling_);
    else
      y.data() = x.data().cwiseMax(Scalar(0));
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    Tensor<Scalar> gin;
    if (!need_input_grad) return gin;
    gin = Tensor<Scalar>::zeros_like(grad);
    const auto& x = input_.data().array();
    auto pass = (x > Scalar(0)).template cast<Scalar>();
    if (ceiling_ > 0)
      gin.data().array() = grad.data().array() * pass * (x < ceiling_).template cast<Scalar>();
    else
      gin.data().array() = grad.data().array() * pass;
    return gin;
  }

 private:
  Scalar ceiling_;
  Tensor<Scalar> input_;
};

template <typename Scalar>
class MaxPool2x2 final : public Layer<Scalar> {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool) override {
    if (x.height() % 2 || x.width() % 2) throw ShapeError("MaxPool2x2: odd spatial size " + x.shape_string());
    in_shape_ = Tensor<Scalar>(0, x.channels(), x.height(), x.width());
    batch_ = x.batch();
    const int ho = x.height() / 2, wo = x.width() / 2;
    Tensor<Scalar> y(x.batch(), x.channels(), ho, wo);
    argmax_.assign(std::size_t(y.size()), 0);
    std::size_t idx = 0;
    for (int n = 0; n < x.batch(); ++n)
      for (int c = 0; c < x.channels(); ++c)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox, ++idx) {
            int best = 0;
            Scalar v = x.at(n, c, 2 * oy, 2 * ox);
            for (int d = 1; d < 4; ++d) {
              const Scalar cand = x.at(n, c, 2 * oy + d / 2, 2 * ox + d % 2);
              if (cand > v) v = cand, best = d;
            }
            y.data()[Eigen::Index(idx)] = v;
            argmax_[idx] = std::uint8_t(best);
          }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    Tensor<Scalar> gin;
    if (!need_input_grad) return gin;
    gin = Tensor<Scalar>(batch_, in_shape_.channels(), in_shape_.height(), in_shape_.width());
    std::size_t idx = 0;
    for (int n = 0; n < grad.batch(); ++n)
      for (int c = 0; c < grad.channels(); ++c)
        for (int oy = 0; oy < grad.height(); ++oy)
          for (int ox = 0; ox < grad.width(); ++ox, ++idx) {
            const int d = argmax_[idx];
            gin.at(n, c, 2 * oy + d / 2, 2 * ox + d % 2) = grad.data()[Eigen::Index(idx)];
          }
    return gin;
  }

 private:
  Tensor<Scalar> in_shape_;
  int batch_ = 0;
  std::vector<std::uint8_t> argmax_;
};

template <typename Scalar>
class UpsampleNearest2x final : public Layer<Scalar> {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool) override {
    Tensor<Scalar> y(x.batch(), x.channels(), 2 * x.height(), 2 * x.width());
    for (int n = 0; n < x.batch(); ++n)
      for (int c = 0; c < x.channels(); ++c)
        for (int yy = 0; yy < y.height(); ++yy)
          for (int xx = 0; xx < y.width(); ++xx) y.at(n, c, yy, xx) = x.at(n, c, yy / 2, xx / 2);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    Tensor<Scalar> gin;
    if (!need_input_grad) return gin;
    gin = Tensor<Scalar>(grad.batch(), grad.channels(), grad.height() / 2, grad.width() / 2);
    for (int n = 0; n < grad.batch(); ++n)
      for (int c = 0; c < grad.channels(); ++c)
        for (int yy = 0; yy < grad.height(); ++yy)
          for (int xx = 0; xx < grad.width(); ++xx) gin.at(n, c, yy / 2, xx / 2) += grad.at(n, c, yy, xx);
    return gin;
  }
};

/// Ordered chain of layers.
template <typename Scalar>
class Sequential final : public Layer<Scalar> {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void push(LayerPtr<Scalar> layer) { layers_.push_back(std::move(layer)); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) override {
    Tensor<Scalar> h = x;
    for (auto& l : layers_) h = l->forward(h, training);
    return h;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    // Layer i must produce an input gradient if anything before it is trainable.
    std::vector<bool> need(layers_.size(), need_input_grad);
    bool upstream = need_input_grad;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      need[i] = upstream;
      upstream = upstream || layers_[i]->has_trainable();
    }
    Tensor<Scalar> g = grad;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (!need[i] && !layers_[i]->has_trainable()) return Tensor<Scalar>();
      g = layers_[i]->backward(g, need[i]);
    }
    return g;
  }

  bool has_trainable() const override {
    return std::any_of(layers_.begin(), layers_.end(), [](const auto& l) { return l->has_trainable(); });
  }

  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<LayerPtr<Scalar>> layers_;
};

/// Adds the block input to the body output (identity shortcut).
template <typename Scalar>
class Residual final : public Layer<Scalar> {
 public:
  explicit Residual(std::unique_ptr<Sequential<Scalar>> body) : body_(std::move(body)) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) override {
    Tensor<Scalar> y = body_->forward(x, training);
    if (!y.same_shape(x)) throw ShapeError("Residual: body changes shape " + x.shape_string());
    y.data() += x.data();
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, bool need_input_grad) override {
    Tensor<Scalar> g = body_->backward(grad, need_input_grad);
    if (need_input_grad) g.data() += grad.data();
    return g;
  }

  bool has_trainable() const override { return body_->has_trainable(); }

 private:
  std::unique_ptr<Sequential<Scalar>> body_;
};

}  // namespace ftseg

#endif  // FTSEG_LAYERS_HPP
