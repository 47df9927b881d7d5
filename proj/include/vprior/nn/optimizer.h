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

#ifndef VPRIOR_NN_OPTIMIZER_H_
#define VPRIOR_NN_OPTIMIZER_H_

#include <vector>

#include "vprior/nn/parameter.h"

namespace vprior::nn {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
//   v <- momentum * v + (g + wd * w);  w <- w - lr * v
class Sgd {
 public:
  // Throws ValidationError if any parameter is not trainable.
  Sgd(ParameterList params, SgdConfig cfg);

  void ZeroGrad();
  void Step(double lr);

  const ParameterList& parameters() const { return params_; }
  // Velocity buffers, named "<parameter>.momentum_buffer".
  StateList State();

 private:
  ParameterList params_;
  SgdConfig cfg_;
  std::vector<Tensor> velocity_;
  std::vector<std::string> names_;
};

}  // namespace vprior::nn

#endif  // VPRIOR_NN_OPTIMIZER_H_
