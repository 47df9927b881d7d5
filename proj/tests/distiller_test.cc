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

#include "vprior/distiller.h"

#include <cmath>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"
#include "vprior/errors.h"
#include "vprior/nn/optimizer.h"
#include "vprior/random.h"

namespace vprior {
namespace {

using ::vprior::testing::GradientError;

TensorD RandomMap(Rng& rng, std::vector<int> shape) {
  TensorD t(std::move(shape));
  for (double& v : t.values()) v = Normal(rng, 0.0, 1.0);
  return t;
}

void SetIdentity(Connector& c) {
  c.weight.value.fill(0.0f);
  for (int i = 0; i < c.teacher_channels(); ++i) {
    c.weight.value[i * c.student_channels() + i] = 1.0f;
  }
}

// Straight loop over every element, no Eigen.
double BruteForceLoss(const FeatureMapSet& fs, std::vector<Connector>& cs) {
  double total = 0.0;
  for (std::size_t s = 0; s < fs.size(); ++s) {
    const TensorD& ft = fs[s].teacher;
    const TensorD& x = fs[s].student;
    const int ct = ft.dim(0), cst = x.dim(0);
    const int m = static_cast<int>(ft.size() / ct);
    double sum = 0.0;
    for (int o = 0; o < ct; ++o) {
      for (int p = 0; p < m; ++p) {
        double y = 0.0;
        for (int i = 0; i < cst; ++i) {
          y += static_cast<double>(cs[s].weight.value[o * cst + i]) *
               x[static_cast<std::size_t>(i) * m + p];
        }
        const double d = y - ft[static_cast<std::size_t>(o) * m + p];
        sum += d * d;
      }
    }
    total += sum / static_cast<double>(ft.size());
  }
  return total;
}

TEST(DistillLossTest, IdentityConnectorOnEqualMapsIsZero) {
  Rng rng = MakeRng({1});
  TensorD f = RandomMap(rng, {4, 2, 3, 3});
  FeatureMapSet fs{{f, f}};
  std::vector<Connector> cs;
  cs.emplace_back("c0", 4, 4, false);
  SetIdentity(cs[0]);
  EXPECT_EQ(DistillLoss(fs, cs, nn::Mode::kInference), 0.0);
}

TEST(DistillLossTest, ZeroConnectorGivesMeanSquareOfTeacher) {
  // Eight teacher values of magnitude one.
  TensorD ft({2, 1, 2, 2}, std::vector<double>{1, -1, 1, -1, -1, 1, 1, 1});
  TensorD fsd({3, 1, 2, 2}, 0.5);
  FeatureMapSet fs{{ft, fsd}};
  std::vector<Connector> cs;
  cs.emplace_back("c0", 3, 2, false);
  cs[0].weight.value.fill(0.0f);
  EXPECT_DOUBLE_EQ(DistillLoss(fs, cs, nn::Mode::kInference), 1.0);
}

TEST(DistillLossTest, MatchesBruteForceOverStages) {
  Rng rng = MakeRng({2});
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMapSet fs;
    std::vector<Connector> cs;
    const int n = 1 + trial % 3;
    int hw = 8;
    for (int s = 0; s < 3; ++s, hw /= 2) {
      const int cst = 2 + s + trial % 2, ct = 3 + 2 * s;
      fs.push_back({RandomMap(rng, {ct, n, hw, hw}), RandomMap(rng, {cst, n, hw, hw})});
      cs.emplace_back("c" + std::to_string(s), cst, ct, false);
      for (float& w : cs.back().weight.value.values()) {
        w = static_cast<float>(Normal(rng, 0.0, 0.5));
      }
    }
    const double fast = DistillLoss(fs, cs, nn::Mode::kInference);
    EXPECT_NEAR(fast, BruteForceLoss(fs, cs), 1e-12 * std::max(1.0, fast));
  }
}

TEST(DistillLossTest, AppendingIdenticalStageLeavesLossUnchanged) {
  Rng rng = MakeRng({3});
  TensorD f = RandomMap(rng, {3, 2, 4, 4});
  TensorD g = RandomMap(rng, {3, 2, 4, 4});
  std::vector<Connector> one;
  one.emplace_back("c0", 3, 3, false);
  one[0].Init(rng);
  FeatureMapSet fs{{g, RandomMap(rng, {3, 2, 4, 4})}};
  const double base = DistillLoss(fs, one, nn::Mode::kInference);

  std::vector<Connector> two = one;
  two.emplace_back("c1", 3, 3, false);
  SetIdentity(two[1]);
  fs.push_back({f, f});
  EXPECT_DOUBLE_EQ(DistillLoss(fs, two, nn::Mode::kInference), base);
}

TEST(DistillLossTest, GradientMatchesFiniteDifferences) {
  Rng rng = MakeRng({4});
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const bool normalize = trial % 2 == 1;
    FeatureMapSet fs;
    std::vector<Connector> cs;
    fs.push_back({RandomMap(rng, {4, 2, 3, 3}), RandomMap(rng, {3, 2, 3, 3})});
    fs.push_back({RandomMap(rng, {5, 2, 2, 2}), RandomMap(rng, {6, 2, 2, 2})});
    cs.emplace_back("c0", 3, 4, normalize);
    cs.emplace_back("c1", 6, 5, normalize);
    for (Connector& c : cs) {
      for (float& w : c.weight.value.values()) {
        w = static_cast<float>(Normal(rng, 0.0, 0.5));
      }
    }
    std::vector<TensorD> grads;
    DistillLoss(fs, cs, nn::Mode::kTrain, &grads);
    ASSERT_EQ(grads.size(), 2u);
    // Batch statistics are recomputed on every evaluation, so the loss is a
    // deterministic function of the student maps in train mode.
    for (int s = 0; s < 2; ++s) {
      for (std::size_t i = 0; i < fs[s].student.size(); i += 3) {
        const double keep = fs[s].student[i];
        fs[s].student[i] = keep + h;
        const double up = DistillLoss(fs, cs, nn::Mode::kNoGrad);
        fs[s].student[i] = keep - h;
        const double down = DistillLoss(fs, cs, nn::Mode::kNoGrad);
        fs[s].student[i] = keep;
        const double numeric = (up - down) / (2 * h);
        EXPECT_LT(GradientError(grads[s][i], numeric, 1e-4), 1e-5)
            << "trial " << trial << " stage " << s << " index " << i;
        ++checked;
      }
    }
  }
  EXPECT_GE(checked, 20);
}

TEST(DistillLossTest, ConnectorWeightGradientMatchesFiniteDifferences) {
  Rng rng = MakeRng({5});
  FeatureMapSet fs{{RandomMap(rng, {3, 2, 3, 3}), RandomMap(rng, {2, 2, 3, 3})}};
  std::vector<Connector> cs;
  cs.emplace_back("c0", 2, 3, false);
  for (float& w : cs[0].weight.value.values()) w = 0.25f;
  std::vector<TensorD> grads;
  DistillLoss(fs, cs, nn::Mode::kTrain, &grads);
  // Perturbing a float weight: use a step that is exactly representable.
  const float h = 1.0f / 1024;
  for (std::size_t i = 0; i < cs[0].weight.value.size(); ++i) {
    const float keep = cs[0].weight.value[i];
    cs[0].weight.value[i] = keep + h;
    const double up = DistillLoss(fs, cs, nn::Mode::kInference);
    cs[0].weight.value[i] = keep - h;
    const double down = DistillLoss(fs, cs, nn::Mode::kInference);
    cs[0].weight.value[i] = keep;
    // The loss is quadratic in the weights, so central differences are exact
    // up to rounding.
    EXPECT_NEAR(cs[0].weight.grad[i], (up - down) / (2 * h), 1e-5);
  }
}

TEST(DistillLossTest, Errors) {
  Rng rng = MakeRng({6});
  FeatureMapSet fs{{RandomMap(rng, {4, 1, 2, 2}), RandomMap(rng, {3, 1, 2, 2})}};
  std::vector<Connector> none;
  EXPECT_THROW(DistillLoss(fs, none, nn::Mode::kInference), ValidationError);

  std::vector<Connector> wrong_out;
  wrong_out.emplace_back("c0", 3, 5, false);
  EXPECT_THROW(DistillLoss(fs, wrong_out, nn::Mode::kInference), ShapeError);

  std::vector<Connector> wrong_in;
  wrong_in.emplace_back("c0", 2, 4, false);
  EXPECT_THROW(DistillLoss(fs, wrong_in, nn::Mode::kInference), ShapeError);

  FeatureMapSet spatial{{RandomMap(rng, {4, 1, 2, 2}), RandomMap(rng, {3, 1, 4, 4})}};
  std::vector<Connector> ok;
  ok.emplace_back("c0", 3, 4, false);
  EXPECT_THROW(DistillLoss(spatial, ok, nn::Mode::kInference), ShapeError);
}

TEST(ConnectorTest, InitHasSmallSpread) {
  Rng rng = MakeRng({7});
  Connector c("c", 64, 64, true);
  c.Init(rng);
  double sum = 0.0, sq = 0.0;
  for (float w : c.weight.value.values()) {
    sum += w;
    sq += static_cast<double>(w) * w;
  }
  const double n = static_cast<double>(c.weight.value.size());
  EXPECT_NEAR(sum / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(sq / n), 0.01, 1e-3);
  EXPECT_EQ(c.Parameters().size(), 3u);
  EXPECT_EQ(Connector("d", 2, 2, false).Parameters().size(), 1u);
}

TEST(ConnectorTest, NormalizedOutputHasUnitBatchStatistics) {
  Rng rng = MakeRng({8});
  Connector c("c", 5, 3, true);
  for (float& w : c.weight.value.values()) {
    w = static_cast<float>(Normal(rng, 0.0, 1.0));
  }
  TensorD x = RandomMap(rng, {5, 4, 3, 3});
  TensorD y = c.Forward(x, nn::Mode::kNoGrad);
  const int m = 4 * 9;
  for (int ch = 0; ch < 3; ++ch) {
    double mean = 0.0, var = 0.0;
    for (int p = 0; p < m; ++p) mean += y[ch * m + p];
    mean /= m;
    for (int p = 0; p < m; ++p) var += std::pow(y[ch * m + p] - mean, 2);
    var /= m;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

class FrozenTeacherTest : public ::testing::Test {
 protected:
  static std::unique_ptr<nn::ResNet> MakeModel(std::uint64_t seed) {
    nn::BackboneConfig cfg;
    cfg.depth = 10;
    cfg.width = 4;
    auto model = std::make_unique<nn::ResNet>(cfg);
    Rng rng = MakeRng({seed});
    model->Init(rng);
    return model;
  }
};

TEST_F(FrozenTeacherTest, ParametersAreNotTrainable) {
  FrozenTeacher teacher = FreezeTeacher(MakeModel(9));
  for (nn::Parameter* p : teacher.parameters()) EXPECT_FALSE(p->trainable);
  EXPECT_THROW(nn::Sgd(teacher.parameters(), nn::SgdConfig{}), ValidationError);
}

TEST_F(FrozenTeacherTest, ForwardLeavesStateUntouched) {
  FrozenTeacher teacher = FreezeTeacher(MakeModel(10));
  const std::uint64_t before = teacher.Digest();
  Rng rng = MakeRng({11});
  Tensor images({3, 2, 16, 16});
  for (float& v : images.values()) v = static_cast<float>(Normal(rng, 0.0, 1.0));
  std::vector<Tensor> a = teacher.Forward(images);
  std::vector<Tensor> b = teacher.Forward(images);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(a[s], b[s]);
  EXPECT_EQ(teacher.Digest(), before);
}

TEST_F(FrozenTeacherTest, DistillationLeavesTeacherUnchanged) {
  FrozenTeacher teacher = FreezeTeacher(MakeModel(12));
  nn::ResNet student = *MakeModel(13);
  const std::uint64_t before = teacher.Digest();
  Rng rng = MakeRng({14});
  Tensor images({3, 2, 16, 16});
  for (float& v : images.values()) v = static_cast<float>(Normal(rng, 0.0, 1.0));

  std::vector<Connector> cs;
  for (std::size_t s = 0; s < 4; ++s) {
    const int c = student.stage_channels()[s];
    cs.emplace_back("connector." + std::to_string(s), c,
                    teacher.model().stage_channels()[s], true);
    cs.back().Init(rng);
  }
  std::vector<Tensor> t_taps = teacher.Forward(images);
  std::vector<Tensor> s_taps;
  student.Forward(images, nn::Mode::kTrain, &s_taps);
  FeatureMapSet fs;
  for (std::size_t s = 0; s < 4; ++s) {
    fs.push_back({t_taps[s].cast<double>(), s_taps[s].cast<double>()});
  }
  std::vector<TensorD> grads;
  const double loss = DistillLoss(fs, cs, nn::Mode::kTrain, &grads);
  EXPECT_GT(loss, 0.0);
  std::vector<Tensor> d_taps;
  for (const TensorD& g : grads) d_taps.push_back(g.cast<float>());
  student.Backward(Tensor({2, student.feature_dim()}, 0.0f), d_taps);

  double student_grad = 0.0;
  for (nn::Parameter* p : student.Parameters()) {
    for (float g : p->grad.values()) student_grad += std::abs(g);
  }
  EXPECT_GT(student_grad, 0.0);
  EXPECT_EQ(teacher.Digest(), before);
}

}  // namespace
}  // namespace vprior
