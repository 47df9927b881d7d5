// Copyright 2026 The vprior Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdint>
#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"
#include "vprior/nn/layers.h"
#include "vprior/nn/optimizer.h"
#include "vprior/nn/resnet.h"

namespace vprior::nn {
namespace {

Tensor RandomTensor(Rng& rng, std::vector<int> shape, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(Normal(rng, 0.0, stddev));
  return t;
}

double Dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Float layers are checked with a coarse step; the scalar objective is a
// fixed random projection of the output, accumulated in double.
constexpr double kStep = 1e-2;
constexpr double kTol = 2e-2;

void CheckInputGradient(const std::function<Tensor(const Tensor&)>& forward,
                        Tensor x, const Tensor& projection,
                        const Tensor& analytic, int samples, Rng& rng) {
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = rng() % x.size();
    const float orig = x[i];
    x[i] = orig + static_cast<float>(kStep);
    const double up = Dot(forward(x), projection);
    x[i] = orig - static_cast<float>(kStep);
    const double down = Dot(forward(x), projection);
    x[i] = orig;
    const double fd = (up - down) / (2 * kStep);
    EXPECT_LT(testing::GradientError(analytic[i], fd, 1e-2), kTol) << "index " << i;
  }
}

void CheckParamGradient(const std::function<double()>& objective, Parameter& p,
                        int samples, Rng& rng) {
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = rng() % p.value.size();
    const float orig = p.value[i];
    p.value[i] = orig + static_cast<float>(kStep);
    const double up = objective();
    p.value[i] = orig - static_cast<float>(kStep);
    const double down = objective();
    p.value[i] = orig;
    const double fd = (up - down) / (2 * kStep);
    EXPECT_LT(testing::GradientError(p.grad[i], fd, 1e-2), kTol)
        << p.name << " index " << i;
  }
}

TEST(TensorTest, StorageIsAlignedForVectorKernels) {
  for (int n : {1, 3, 17, 1000}) {
    const Tensor t({n});
    const TensorD d({n}, std::vector<double>(n, 1.0));
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data()) % EIGEN_MAX_ALIGN_BYTES, 0u);
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(d.data()) % EIGEN_MAX_ALIGN_BYTES, 0u);
  }
}

TEST(Conv2dTest, MatchesDirectConvolution) {
  Rng rng(1);
  Conv2d conv("c", 2, 3, 3, 2, 1);
  conv.Init(rng);
  const Tensor x = RandomTensor(rng, {2, 2, 5, 4});
  const Tensor y = conv.Forward(x, Mode::kInference);
  ASSERT_EQ(y.shape(), (std::vector<int>{3, 2, 3, 2}));
  for (int co = 0; co < 3; ++co)
    for (int n = 0; n < 2; ++n)
      for (int oh = 0; oh < 3; ++oh)
        for (int ow = 0; ow < 2; ++ow) {
          double s = 0.0;
          for (int ci = 0; ci < 2; ++ci)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const int ih = oh * 2 - 1 + ki, iw = ow * 2 - 1 + kj;
                if (ih < 0 || ih >= 5 || iw < 0 || iw >= 4) continue;
                s += conv.weight.value[(co * 2 + ci) * 9 + ki * 3 + kj] *
                     x[((ci * 2 + n) * 5 + ih) * 4 + iw];
              }
          EXPECT_NEAR(y[((co * 2 + n) * 3 + oh) * 2 + ow], s, 1e-5);
        }
}

TEST(Conv2dTest, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  for (int k : {1, 3}) {
    Conv2d conv("c", 3, 4, k, 2, k / 2);
    conv.Init(rng);
    const Tensor x = RandomTensor(rng, {3, 2, 6, 6});
    Tensor y = conv.Forward(x, Mode::kTrain);
    const Tensor proj = RandomTensor(rng, y.shape());
    ZeroGrad(std::vector<Parameter*>{&conv.weight});
    const Tensor dx = conv.Backward(proj);
    CheckInputGradient([&](const Tensor& in) { return conv.Forward(in, Mode::kInference); },
                       x, proj, dx, 20, rng);
    CheckParamGradient([&] { return Dot(conv.Forward(x, Mode::kInference), proj); },
                       conv.weight, 20, rng);
  }
}

TEST(BatchNorm2dTest, NormalizesAndBackpropagates) {
  Rng rng(3);
  BatchNorm2d bn("bn", 3);
  bn.gamma.value = RandomTensor(rng, {3});
  bn.beta.value = RandomTensor(rng, {3});
  const Tensor x = RandomTensor(rng, {3, 4, 3, 3}, 2.0);
  Tensor y = bn.Forward(x, Mode::kTrain);
  const Tensor proj = RandomTensor(rng, y.shape());
  ZeroGrad(std::vector<Parameter*>{&bn.gamma, &bn.beta});
  const Tensor dx = bn.Backward(proj);
  auto fwd = [&](const Tensor& in) {
    BatchNorm2d copy = bn;
    return copy.Forward(in, Mode::kNoGrad);
  };
  CheckInputGradient(fwd, x, proj, dx, 30, rng);
  CheckParamGradient([&] { return Dot(fwd(x), proj); }, bn.gamma, 3, rng);
  CheckParamGradient([&] { return Dot(fwd(x), proj); }, bn.beta, 3, rng);
}

TEST(BatchNorm2dTest, InferenceUsesRunningStatistics) {
  BatchNorm2d bn("bn", 1);
  bn.running_mean[0] = 2.0f;
  bn.running_var[0] = 4.0f;
  Tensor x({1, 1, 1, 2}, std::vector<float>{2.0f, 6.0f});
  const Tensor y = bn.Forward(x, Mode::kInference);
  EXPECT_NEAR(y[0], 0.0, 1e-6);
  EXPECT_NEAR(y[1], 2.0, 1e-5);
  // Inference leaves the statistics untouched; batch mode moves them.
  EXPECT_EQ(bn.running_mean[0], 2.0f);
  bn.Forward(x, Mode::kNoGrad);
  EXPECT_NEAR(bn.running_mean[0], 0.9 * 2.0 + 0.1 * 4.0, 1e-6);
}

TEST(LinearTest, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  Linear fc("fc", 5, 3);
  fc.Init(rng);
  const Tensor x = RandomTensor(rng, {4, 5});
  const Tensor y = fc.Forward(x, Mode::kTrain);
  const Tensor proj = RandomTensor(rng, y.shape());
  ZeroGrad(std::vector<Parameter*>{&fc.weight, &fc.bias});
  const Tensor dx = fc.Backward(proj);
  CheckInputGradient([&](const Tensor& in) { return fc.Forward(in, Mode::kInference); },
                     x, proj, dx, 10, rng);
  auto obj = [&] { return Dot(fc.Forward(x, Mode::kInference), proj); };
  CheckParamGradient(obj, fc.weight, 10, rng);
  CheckParamGradient(obj, fc.bias, 3, rng);
}

TEST(L2NormalizeTest, UnitRowsAndGradient) {
  Rng rng(5);
  const Tensor x = RandomTensor(rng, {3, 6}, 3.0);
  std::vector<float> norms;
  const Tensor y = L2NormalizeRows(x, &norms);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 6; ++j) s += y[i * 6 + j] * y[i * 6 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  const Tensor proj = RandomTensor(rng, y.shape());
  const Tensor dx = L2NormalizeRowsBackward(y, norms, proj);
  CheckInputGradient([&](const Tensor& in) { return L2NormalizeRows(in, nullptr); },
                     x, proj, dx, 18, rng);
}

class ResNetGradientTest : public ::testing::TestWithParam<int> {};

TEST_P(ResNetGradientTest, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(6);
  BackboneConfig cfg{.depth = GetParam(), .width = 4, .stem_stride = 1};
  ResNet net(cfg);
  net.Init(rng);
  const Tensor images = RandomTensor(rng, {3, 4, 16, 16});
  std::vector<Tensor> taps;
  const Tensor pooled = net.Forward(images, Mode::kTrain, &taps);
  const Tensor proj = RandomTensor(rng, pooled.shape());
  std::vector<Tensor> tap_proj;
  for (const Tensor& t : taps) tap_proj.push_back(RandomTensor(rng, t.shape(), 0.1));
  ParameterList params = net.Parameters();
  ZeroGrad(params);
  net.Backward(proj, tap_proj);

  auto objective = [&] {
    ResNet copy = net;
    std::vector<Tensor> t;
    double v = Dot(copy.Forward(images, Mode::kNoGrad, &t), proj);
    for (std::size_t s = 0; s < t.size(); ++s) v += Dot(t[s], tap_proj[s]);
    return v;
  };
  // Whole-network wiring check. A perturbation can cross a ReLU kink, so
  // individual samples may disagree (float32, tiny widths); require a large
  // majority to agree. Per-layer tests above are strict.
  const double h = 1e-3;
  int checked = 0, agreed = 0;
  for (Parameter* p : params) {
    for (int s = 0; s < 3; ++s) {
      const std::size_t i = rng() % p->value.size();
      const float orig = p->value[i];
      p->value[i] = orig + static_cast<float>(h);
      const double up = objective();
      p->value[i] = orig - static_cast<float>(h);
      const double down = objective();
      p->value[i] = orig;
      const double fd = (up - down) / (2 * h);
      ++checked;
      if (testing::GradientError(p->grad[i], fd, 1e-1) < 5e-2) ++agreed;
    }
  }
  EXPECT_GE(agreed, 0.8 * checked) << agreed << " of " << checked;
}

INSTANTIATE_TEST_SUITE_P(Depths, ResNetGradientTest, ::testing::Values(10, 18));

TEST(ResidualBlockTest, BasicAndBottleneckInputGradients) {
  Rng rng(8);
  for (BlockKind kind : {BlockKind::kBasic, BlockKind::kBottleneck}) {
    for (int stride : {1, 2}) {
      ResidualBlock block("b", kind, 4, 3, stride);
      block.Init(rng);
      const Tensor x = RandomTensor(rng, {4, 3, 6, 6});
      const Tensor y = block.Forward(x, Mode::kTrain);
      const Tensor proj = RandomTensor(rng, y.shape());
      const Tensor dx = block.Backward(proj);
      int agreed = 0;
      const int checked = 40;
      Tensor probe = x;
      for (int s = 0; s < checked; ++s) {
        const std::size_t i = rng() % x.size();
        const float orig = probe[i];
        probe[i] = orig + 1e-3f;
        ResidualBlock up = block;
        const double fu = Dot(up.Forward(probe, Mode::kNoGrad), proj);
        probe[i] = orig - 1e-3f;
        ResidualBlock down = block;
        const double fdn = Dot(down.Forward(probe, Mode::kNoGrad), proj);
        probe[i] = orig;
        if (testing::GradientError(dx[i], (fu - fdn) / 2e-3, 1e-1) < 5e-2) ++agreed;
      }
      EXPECT_GE(agreed, 36) << "kind " << static_cast<int>(kind) << " stride " << stride;
    }
  }
}

TEST(ResNetTest, StageShapes) {
  ResNet net(BackboneConfig{.depth = 18, .width = 8, .stem_stride = 2});
  Rng rng(7);
  net.Init(rng);
  std::vector<Tensor> taps;
  const Tensor pooled = net.Forward(RandomTensor(rng, {3, 2, 32, 32}), Mode::kInference, &taps);
  ASSERT_EQ(taps.size(), 4u);
  EXPECT_EQ(taps[0].shape(), (std::vector<int>{8, 2, 16, 16}));
  EXPECT_EQ(taps[3].shape(), (std::vector<int>{64, 2, 2, 2}));
  EXPECT_EQ(pooled.shape(), (std::vector<int>{2, 64}));
  EXPECT_EQ(net.stage_channels(), (std::vector<int>{8, 16, 32, 64}));
  EXPECT_THROW(ResNet(BackboneConfig{.depth = 12}), ConfigError);
}

TEST(SgdTest, MomentumAndWeightDecay) {
  Parameter p("w", {1});
  p.value[0] = 1.0f;
  Sgd opt({&p}, {.momentum = 0.9, .weight_decay = 0.1});
  p.grad[0] = 0.5f;
  opt.Step(0.1);
  // v = 0.5 + 0.1 * 1 = 0.6; w = 1 - 0.06
  EXPECT_NEAR(p.value[0], 0.94, 1e-6);
  opt.Step(0.1);
  // v = 0.9 * 0.6 + 0.5 + 0.094 = 1.134; w = 0.94 - 0.1134
  EXPECT_NEAR(p.value[0], 0.8266, 1e-6);

  Parameter frozen("f", {1});
  frozen.trainable = false;
  EXPECT_THROW(Sgd({&frozen}, {}), ValidationError);
}

}  // namespace
}  // namespace vprior::nn
