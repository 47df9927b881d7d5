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

#ifndef VPRIOR_DISTILLER_H_
#define VPRIOR_DISTILLER_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vprior/nn/layers.h"
#include "vprior/nn/resnet.h"
#include "vprior/tensor.h"

namespace vprior {

// Teacher and student feature maps of one tapped stage, channel-major
// {C, N, H, W}. The teacher map is a constant: nothing is ever propagated
// back into it.
struct StageFeatures {
  TensorD teacher;
  TensorD student;
};

// Ordered by network depth.
using FeatureMapSet = std::vector<StageFeatures>;

// Maps student features into the teacher's channel space: a 1x1 channel
// projection, optionally followed by per-channel batch normalization.
// Parameters are float (they live in the student's optimizer group); the
// arithmetic is carried out in double.
class Connector {
 public:
  Connector(const std::string& name, int student_channels,
            int teacher_channels, bool normalize);

  // Zero-mean normal weights with standard deviation 0.01.
  void Init(Rng& rng);

  TensorD Forward(const TensorD& student, nn::Mode mode);
  // Accumulates parameter gradients; returns d(student).
  TensorD Backward(const TensorD& d_out);

  int student_channels() const { return weight.value.dim(1); }
  int teacher_channels() const { return weight.value.dim(0); }
  bool normalize() const { return normalize_; }

  nn::ParameterList Parameters();
  nn::StateList State();

  nn::Parameter weight;  // {C_t, C_s}
  nn::Parameter gamma;   // {C_t}, used when normalize()
  nn::Parameter beta;    // {C_t}, used when normalize()
  Tensor running_mean;
  Tensor running_var;

 private:
  std::string name_;
  bool normalize_;
  TensorD input_;
  TensorD xhat_;
  std::vector<double> inv_std_;
};

// Applies the connector and checks the result against the teacher's stage
// shape. Throws ShapeError on any mismatch.
TensorD ConnectorTransform(const TensorD& student, Connector& connector,
                           const std::vector<int>& teacher_shape,
                           nn::Mode mode = nn::Mode::kInference);

// Sum over stages of the mean squared difference between the teacher map
// and the connected student map. When `d_student` is non-null it receives
// one gradient per stage w.r.t. the student map, and connector parameter
// gradients are accumulated. Throws ValidationError when the number of
// connectors differs from the number of stages.
double DistillLoss(const FeatureMapSet& features,
                   std::span<Connector> connectors, nn::Mode mode,
                   std::vector<TensorD>* d_student = nullptr);

// A backbone that can only be run forward in inference mode. Construction
// marks every parameter non-trainable, so no optimizer accepts them.
class FrozenTeacher {
 public:
  explicit FrozenTeacher(std::unique_ptr<nn::ResNet> model);

  // Stage outputs (one per stage) using stored normalization statistics.
  std::vector<Tensor> Forward(const Tensor& images);
  // Pooled features, inference mode.
  Tensor Features(const Tensor& images);

  // Digest over every parameter and running statistic.
  std::uint64_t Digest() const;
  const nn::ResNet& model() const { return *model_; }
  // Exposed for audits; the parameters are non-trainable.
  nn::ParameterList parameters() const { return model_->Parameters(); }

 private:
  std::unique_ptr<nn::ResNet> model_;
};

FrozenTeacher FreezeTeacher(std::unique_ptr<nn::ResNet> model);

}  // namespace vprior

#endif  // VPRIOR_DISTILLER_H_
