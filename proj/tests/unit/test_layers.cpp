#include "ftseg/layers.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ftseg;
using T = Tensor<double>;

namespace {

T random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  T t(n, c, h, w);
  for (Eigen::Index i = 0; i < t.data().size(); ++i) t.data()[i] = d(rng);
  return t;
}

// Direct-summation convolution, the textbook definition.
T naive_conv(const T& x, const Eigen::VectorXd& w, const Eigen::VectorXd* b, int out, int k, int stride, int pad) {
  const int ho = (x.height() + 2 * pad - k) / stride + 1, wo = (x.width() + 2 * pad - k) / stride + 1;
  T y(x.batch(), out, ho, wo);
  for (int n = 0; n < x.batch(); ++n)
    for (int o = 0; o < out; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b ? (*b)[o] : 0.0;
          for (int c = 0; c < x.channels(); ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= x.height() || ix >= x.width()) continue;
                acc += w[((o * x.channels() + c) * k + ky) * k + kx] * x.at(n, c, iy, ix);
              }
          y.at(n, o, oy, ox) = acc;
        }
  return y;
}

double weighted_sum(const T& y, const T& r) { return y.data().dot(r.data()); }

// Checks input and parameter gradients of `layer` against central differences
// of L = <layer(x), r>.
void check_gradients(Layer<double>& layer, ParameterRegistry<double>& reg, T x, double tol = 1e-6) {
  T y = layer.forward(x, true);
  const T r = random_tensor(y.batch(), y.channels(), y.height(), y.width(), 99);
  for (auto& p : reg.parameters()) p.zero_grad();
  const T gx = layer.backward(r, true);
  ASSERT_TRUE(gx.same_shape(x));
  const double h = 1e-6;
  auto loss = [&] { return weighted_sum(layer.forward(x, true), r); };
  for (Eigen::Index i = 0; i < x.data().size(); i += std::max<Eigen::Index>(1, x.data().size() / 40)) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = loss();
    x.data()[i] = saved - h;
    const double down = loss();
    x.data()[i] = saved;
    EXPECT_NEAR(gx.data()[i], (up - down) / (2 * h), tol * std::max(1.0, std::abs(gx.data()[i]))) << "input " << i;
  }
  for (auto& p : reg.parameters()) {
    const auto analytic = p.gradient();
    for (Eigen::Index i = 0; i < p.value.size(); i += std::max<Eigen::Index>(1, p.value.size() / 20)) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = loss();
      p.value[i] = saved - h;
      const double down = loss();
      p.value[i] = saved;
      EXPECT_NEAR(analytic[i], (up - down) / (2 * h), tol * std::max(1.0, std::abs(analytic[i])))
          << p.name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(Conv2d, MatchesDirectSummation) {
  for (auto [k, stride, pad, bias] : {std::tuple{3, 1, 1, true}, {3, 2, 1, false}, {1, 1, 0, true}}) {
    ParameterRegistry<double> reg(1);
    Conv2d<double> conv(reg, "c", 3, 4, k, stride, pad, bias);
    if (bias) reg.parameters().back().value.setRandom();
    const T x = random_tensor(2, 3, 7, 6, 5);
    const T y = conv.forward(x, false);
    const auto& w = reg.parameters().front().value;
    const T ref = naive_conv(x, w, bias ? &reg.parameters().back().value : nullptr, 4, k, stride, pad);
    ASSERT_TRUE(y.same_shape(ref));
    EXPECT_LT((y.data() - ref.data()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Conv2d, SingleThreeByThreeWithBiasHasTwentyParameters) {
  ParameterRegistry<double> reg(0);
  Conv2d<double> conv(reg, "c", 1, 2, 3, 1, 1, true);
  std::int64_t n = 0;
  for (const auto& p : reg.parameters()) n += p.count();
  EXPECT_EQ(n, 20);
}

TEST(DepthwiseConv2d, MatchesPerChannelConvolution) {
  for (int stride : {1, 2}) {
    ParameterRegistry<double> reg(3);
    DepthwiseConv2d<double> dw(reg, "dw", 3, stride);
    const T x = random_tensor(2, 3, 8, 8, 11);
    const T y = dw.forward(x, false);
    const auto& w = reg.parameters().front().value;
    for (int c = 0; c < 3; ++c) {
      T xc(2, 1, 8, 8);
      for (int n = 0; n < 2; ++n) xc.plane(n) = x.plane(n).row(c);
      const T ref = naive_conv(xc, w.segment(9 * c, 9), nullptr, 1, 3, stride, 1);
      for (int n = 0; n < 2; ++n)
        EXPECT_LT((y.plane(n).row(c) - ref.plane(n).row(0)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(ConvTranspose2x2, ScattersEachInputIntoA2x2Block) {
  ParameterRegistry<double> reg(4);
  ConvTranspose2x2<double> up(reg, "up", 2, 3);
  reg.parameters().back().value.setRandom();
  const T x = random_tensor(1, 2, 3, 3, 21);
  const T y = up.forward(x, false);
  ASSERT_EQ(y.height(), 6);
  const auto& w = reg.parameters().front().value;  // [in, out, 2, 2]
  const auto& b = reg.parameters().back().value;
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 6; ++oy)
      for (int ox = 0; ox < 6; ++ox) {
        double ref = b[o];
        for (int c = 0; c < 2; ++c) ref += w[((c * 3 + o) * 2 + oy % 2) * 2 + ox % 2] * x.at(0, c, oy / 2, ox / 2);
        EXPECT_NEAR(y.at(0, o, oy, ox), ref, 1e-12);
      }
}

TEST(BatchNorm2d, EvalModeUsesRunningStatistics) {
  ParameterRegistry<double> reg(0);
  BatchNorm2d<double> bn(reg, "bn", 2);
  reg.parameters()[0].value << 2.0, 0.5;
  reg.parameters()[1].value << 1.0, -1.0;
  reg.buffers()[0].value << 0.5, -0.25;
  reg.buffers()[1].value << 4.0, 0.25;
  const T x = random_tensor(1, 2, 2, 2, 8);
  const T y = bn.forward(x, false);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 4; ++i) {
      const double ref = reg.parameters()[0].value[c] * (x.plane(0)(c, i) - reg.buffers()[0].value[c]) /
                             std::sqrt(reg.buffers()[1].value[c] + 1e-5) +
                         reg.parameters()[1].value[c];
      EXPECT_NEAR(y.plane(0)(c, i), ref, 1e-12);
    }
}

TEST(BatchNorm2d, TrainingModeUpdatesRunningStatsUnlessFrozen) {
  ParameterRegistry<double> reg(0);
  BatchNorm2d<double> bn(reg, "bn", 1);
  T x(2, 1, 1, 2);
  x.data() << 1, 2, 3, 4;  // mean 2.5, unbiased var 5/3
  bn.forward(x, true);
  EXPECT_NEAR(reg.buffers()[0].value[0], 0.25, 1e-12);
  EXPECT_NEAR(reg.buffers()[1].value[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);

  for (auto& p : reg.parameters()) p.trainable = false;
  const auto before = reg.buffers()[0].value;
  bn.forward(x, true);
  EXPECT_EQ(reg.buffers()[0].value, before);
}

TEST(Pooling, MaxPoolAndNearestUpsample) {
  T x(1, 1, 2, 4);
  x.data() << 1, 5, 2, 0, 3, 4, 8, 7;
  MaxPool2x2<double> pool;
  const T y = pool.forward(x, false);
  ASSERT_EQ(y.width(), 2);
  EXPECT_EQ(y.at(0, 0, 0, 0), 5);
  EXPECT_EQ(y.at(0, 0, 0, 1), 8);
  UpsampleNearest2x<double> up;
  const T z = up.forward(y, false);
  EXPECT_EQ(z.height(), 2);
  EXPECT_EQ(z.width(), 4);
  EXPECT_EQ(z.at(0, 0, 1, 1), 5);
  EXPECT_EQ(z.at(0, 0, 0, 2), 8);
}

TEST(LayerGradients, Conv2d) {
  ParameterRegistry<double> reg(2);
  Conv2d<double> conv(reg, "c", 3, 2, 3, 2, 1, true);
  check_gradients(conv, reg, random_tensor(2, 3, 6, 5, 1));
}

TEST(LayerGradients, PointwiseConv) {
  ParameterRegistry<double> reg(2);
  Conv2d<double> conv(reg, "c", 4, 3, 1, 1, 0, false);
  check_gradients(conv, reg, random_tensor(2, 4, 3, 3, 2));
}

TEST(LayerGradients, Depthwise) {
  for (int stride : {1, 2}) {
    ParameterRegistry<double> reg(3);
    DepthwiseConv2d<double> dw(reg, "dw", 3, stride);
    check_gradients(dw, reg, random_tensor(2, 3, 6, 6, 3));
  }
}

TEST(LayerGradients, TransposedConv) {
  ParameterRegistry<double> reg(4);
  ConvTranspose2x2<double> up(reg, "up", 3, 2);
  check_gradients(up, reg, random_tensor(2, 3, 3, 2, 4));
}

TEST(LayerGradients, BatchNormBatchMode) {
  ParameterRegistry<double> reg(5);
  BatchNorm2d<double> bn(reg, "bn", 3);
  reg.parameters()[0].value.setRandom();
  check_gradients(bn, reg, random_tensor(3, 3, 2, 2, 5), 1e-5);
}

TEST(LayerGradients, FrozenBatchNormIsAffine) {
  ParameterRegistry<double> reg(5);
  BatchNorm2d<double> bn(reg, "bn", 2);
  reg.buffers()[1].value << 2.0, 0.5;
  for (auto& p : reg.parameters()) p.trainable = false;
  const T x = random_tensor(2, 2, 3, 3, 6);
  const T y = bn.forward(x, true);
  const T r = random_tensor(2, 2, 3, 3, 7);
  const T gx = bn.backward(r, true);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 9; ++i)
        EXPECT_NEAR(gx.plane(n)(c, i), r.plane(n)(c, i) / std::sqrt(reg.buffers()[1].value[c] + 1e-5), 1e-12);
  (void)y;
}

TEST(LayerGradients, SequentialWithResidual) {
  ParameterRegistry<double> reg(6);
  auto body = std::make_unique<Sequential<double>>();
  body->emplace<Conv2d<double>>(reg, "a", 2, 2, 3, 1, 1, false);
  body->emplace<ClippedRelu<double>>(6.0);
  body->emplace<Conv2d<double>>(reg, "b", 2, 2, 1, 1, 0, true);
  Residual<double> res(std::move(body));
  check_gradients(res, reg, random_tensor(2, 2, 4, 4, 8));
}

TEST(Layers, FrozenParametersReceiveNoGradient) {
  ParameterRegistry<double> reg(7);
  Conv2d<double> conv(reg, "c", 2, 2, 3, 1, 1, true);
  for (auto& p : reg.parameters()) p.trainable = false;
  EXPECT_FALSE(conv.has_trainable());
  const T x = random_tensor(1, 2, 4, 4, 9);
  const T y = conv.forward(x, true);
  conv.backward(T::zeros_like(y), true);
  for (const auto& p : reg.parameters()) EXPECT_EQ(p.grad.size(), 0) << p.name;
}
