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

#ifndef VPRIOR_NN_LAYERS_H_
#define VPRIOR_NN_LAYERS_H_

#include <string>
#include <vector>

#include "vprior/nn/parameter.h"
#include "vprior/random.h"
#include "vprior/tensor.h"

namespace vprior::nn {

enum class Mode {
  kTrain,      // batch statistics; caches everything Backward() needs
  kNoGrad,     // batch statistics; nothing cached (momentum encoder)
  kInference,  // running statistics; nothing cached
};

inline bool UsesBatchStats(Mode m) { return m != Mode::kInference; }
inline bool Records(Mode m) { return m == Mode::kTrain; }

// 2-d convolution without bias over channel-major {C, N, H, W} input,
// lowered to one GEMM per call.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels,
         int kernel, int stride, int padding);

  // He-normal initialization (fan-out, ReLU gain).
  void Init(Rng& rng);

  Tensor Forward(const Tensor& x, Mode mode);
  // Accumulates into weight.grad; returns d(input) unless
  // `need_input_grad` is false, in which case the result is empty.
  Tensor Backward(const Tensor& dy, bool need_input_grad = true);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int OutputSize(int input) const { return (input + 2 * pad_ - k_) / stride_ + 1; }

  void CollectParameters(ParameterList& out) { out.push_back(&weight); }
  void CollectState(StateList& out) { out.push_back({weight.name, &weight.value}); }

  Parameter weight;  // {out, in * k * k}

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  std::vector<int> in_shape_;
  Tensor col_;
};

// Per-channel batch normalization over channel-major input.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.1,
              double eps = 1e-5);

  Tensor Forward(const Tensor& x, Mode mode);
  Tensor Backward(const Tensor& dy);

  void CollectParameters(ParameterList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void CollectState(StateList& out);

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  std::string name_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

// Affine map over row-major {N, in} input.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  // Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void Init(Rng& rng);
  void ZeroInit();

  Tensor Forward(const Tensor& x, Mode mode);
  Tensor Backward(const Tensor& dy);

  int in_features() const { return weight.value.dim(1); }
  int out_features() const { return weight.value.dim(0); }

  void CollectParameters(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  void CollectState(StateList& out) {
    out.push_back({weight.name, &weight.value});
    out.push_back({bias.name, &bias.value});
  }

  Parameter weight;  // {out, in}
  Parameter bias;    // {out}

 private:
  Tensor input_;
};

void ReluInPlace(Tensor& x);
// Zeroes dy wherever the ReLU output y was not positive.
void ReluBackwardInPlace(const Tensor& y, Tensor& dy);

// {C, N, H, W} -> {N, C}.
Tensor GlobalAvgPool(const Tensor& x);
Tensor GlobalAvgPoolBackward(const Tensor& dy, const std::vector<int>& in_shape);

// Row-wise unit normalization of {N, D}; `norms` receives the input norms.
Tensor L2NormalizeRows(const Tensor& x, std::vector<float>* norms);
Tensor L2NormalizeRowsBackward(const Tensor& y, const std::vector<float>& norms,
                               const Tensor& dy);

}  // namespace vprior::nn

#endif  // VPRIOR_NN_LAYERS_H_
