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
#include <utility>

#include <Eigen/Core>

#include "vprior/errors.h"

namespace vprior {
namespace {

using RowMatD =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapD = Eigen::Map<RowMatD>;
using ConstMapD = Eigen::Map<const RowMatD>;

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

}  // namespace

Connector::Connector(const std::string& name, int student_channels,
                     int teacher_channels, bool normalize)
    : weight(name + ".weight", {teacher_channels, student_channels}),
      gamma(name + ".bn.weight", {teacher_channels}),
      beta(name + ".bn.bias", {teacher_channels}),
      running_mean({teacher_channels}, 0.0f),
      running_var({teacher_channels}, 1.0f),
      name_(name),
      normalize_(normalize) {
  gamma.value.fill(1.0f);
}

void Connector::Init(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 0.01);
  for (float& v : weight.value.values()) v = static_cast<float>(normal(rng));
}

nn::ParameterList Connector::Parameters() {
  nn::ParameterList out{&weight};
  if (normalize_) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  return out;
}

nn::StateList Connector::State() {
  nn::StateList out{{weight.name, &weight.value}};
  if (normalize_) {
    out.push_back({gamma.name, &gamma.value});
    out.push_back({beta.name, &beta.value});
    out.push_back({name_ + ".bn.running_mean", &running_mean});
    out.push_back({name_ + ".bn.running_var", &running_var});
  }
  return out;
}

TensorD Connector::Forward(const TensorD& student, nn::Mode mode) {
  if (student.rank() != 4 || student.dim(0) != student_channels()) {
    throw ShapeError(name_ + ": expected " + std::to_string(student_channels()) +
                     "-channel {C,N,H,W} input, got " +
                     ShapeString(student.shape()));
  }
  const int cs = student_channels(), ct = teacher_channels();
  const int m = static_cast<int>(student.size() / cs);
  const RowMatD w = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>(
                        weight.value.data(), ct, cs)
                        .cast<double>();
  std::vector<int> shape = student.shape();
  shape[0] = ct;
  TensorD y(shape);
  MapD ym(y.data(), ct, m);
  ym.noalias() = w * ConstMapD(student.data(), cs, m);
  if (nn::Records(mode)) input_ = student;
  if (!normalize_) return y;

  if (nn::Records(mode)) {
    xhat_ = TensorD(shape);
    inv_std_.assign(static_cast<std::size_t>(ct), 0.0);
  }
  for (int c = 0; c < ct; ++c) {
    auto row = ym.row(c);
    double mean, var;
    if (nn::UsesBatchStats(mode)) {
      mean = row.mean();
      var = (row.array() - mean).square().mean();
      const double unbiased = m > 1 ? var * m / (m - 1) : var;
      running_mean[c] = static_cast<float>((1 - kBnMomentum) * running_mean[c] +
                                           kBnMomentum * mean);
      running_var[c] = static_cast<float>((1 - kBnMomentum) * running_var[c] +
                                          kBnMomentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + kBnEps);
    if (nn::Records(mode)) {
      inv_std_[c] = inv_std;
      MapD(xhat_.data(), ct, m).row(c) = (row.array() - mean) * inv_std;
    }
    row = ((row.array() - mean) * inv_std * gamma.value[c] + beta.value[c]).matrix();
  }
  return y;
}

TensorD Connector::Backward(const TensorD& d_out) {
  if (input_.empty()) throw Error(name_ + ": Backward without Forward");
  const int cs = student_channels(), ct = teacher_channels();
  const int m = static_cast<int>(input_.size() / cs);
  RowMatD g = ConstMapD(d_out.data(), ct, m);
  if (normalize_) {
    ConstMapD xh(xhat_.data(), ct, m);
    for (int c = 0; c < ct; ++c) {
      const double sum_g = g.row(c).sum();
      const double sum_gx = g.row(c).dot(xh.row(c));
      gamma.grad[c] += static_cast<float>(sum_gx);
      beta.grad[c] += static_cast<float>(sum_g);
      const double k = gamma.value[c] * inv_std_[c] / m;
      g.row(c) = k * (m * g.row(c).array() - sum_g - xh.row(c).array() * sum_gx);
    }
  }
  ConstMapD x(input_.data(), cs, m);
  const RowMatD dw = g * x.transpose();
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      weight.grad.data(), ct, cs) += dw.cast<float>();
  const RowMatD w = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>(
                        weight.value.data(), ct, cs)
                        .cast<double>();
  TensorD dx(input_.shape());
  MapD(dx.data(), cs, m).noalias() = w.transpose() * g;
  input_ = TensorD();
  xhat_ = TensorD();
  return dx;
}

TensorD ConnectorTransform(const TensorD& student, Connector& connector,
                           const std::vector<int>& teacher_shape,
                           nn::Mode mode) {
  if (teacher_shape.size() != 4 || student.rank() != 4) {
    throw ShapeError("connector expects {C,N,H,W} stage tensors");
  }
  for (int i = 1; i < 4; ++i) {
    if (student.dim(i) != teacher_shape[i]) {
      throw ShapeError("student stage " + ShapeString(student.shape()) +
                       " does not align with teacher stage " +
                       ShapeString(teacher_shape));
    }
  }
  if (connector.teacher_channels() != teacher_shape[0]) {
    throw ShapeError("connector outputs " +
                     std::to_string(connector.teacher_channels()) +
                     " channels, teacher stage has " +
                     std::to_string(teacher_shape[0]));
  }
  return connector.Forward(student, mode);
}

double DistillLoss(const FeatureMapSet& features,
                   std::span<Connector> connectors, nn::Mode mode,
                   std::vector<TensorD>* d_student) {
  if (features.size() != connectors.size()) {
    throw ValidationError("distillation has " + std::to_string(features.size()) +
                          " stages but " + std::to_string(connectors.size()) +
                          " connectors");
  }
  if (d_student) d_student->clear();
  const nn::Mode fwd_mode = d_student ? nn::Mode::kTrain : mode;
  double total = 0.0;
  for (std::size_t s = 0; s < features.size(); ++s) {
    const TensorD& ft = features[s].teacher;
    const TensorD out = ConnectorTransform(features[s].student, connectors[s],
                                           ft.shape(), fwd_mode);
    const double inv_count = 1.0 / static_cast<double>(ft.size());
    const auto diff = Eigen::Map<const Eigen::ArrayXd>(out.data(), out.size()) -
                      Eigen::Map<const Eigen::ArrayXd>(ft.data(), ft.size());
    total += diff.square().sum() * inv_count;
    if (d_student) {
      TensorD g(out.shape());
      Eigen::Map<Eigen::ArrayXd>(g.data(), g.size()) = 2.0 * inv_count * diff;
      d_student->push_back(connectors[s].Backward(g));
    }
  }
  return total;
}

FrozenTeacher::FrozenTeacher(std::unique_ptr<nn::ResNet> model)
    : model_(std::move(model)) {
  for (nn::Parameter* p : model_->Parameters()) {
    p->trainable = false;
    p->grad = Tensor();
  }
}

std::vector<Tensor> FrozenTeacher::Forward(const Tensor& images) {
  std::vector<Tensor> taps;
  model_->Forward(images, nn::Mode::kInference, &taps);
  return taps;
}

Tensor FrozenTeacher::Features(const Tensor& images) {
  return model_->Forward(images, nn::Mode::kInference);
}

std::uint64_t FrozenTeacher::Digest() const {
  return nn::StateDigest(model_->State());
}

FrozenTeacher FreezeTeacher(std::unique_ptr<nn::ResNet> model) {
  return FrozenTeacher(std::move(model));
}

}  // namespace vprior
