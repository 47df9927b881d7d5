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

#ifndef VPRIOR_NN_PARAMETER_H_
#define VPRIOR_NN_PARAMETER_H_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vprior/digest.h"
#include "vprior/tensor.h"

namespace vprior::nn {

// A trainable tensor and its gradient accumulator.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}

  std::string name;
  Tensor value;
  Tensor grad;
  // False for frozen teachers and momentum encoders; the optimizer refuses
  // non-trainable parameters.
  bool trainable = true;
};

using ParameterList = std::vector<Parameter*>;

// Named view of any persistent tensor (parameters and running statistics).
struct StateEntry {
  std::string name;
  Tensor* tensor;
};

using StateList = std::vector<StateEntry>;

inline void ZeroGrad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->grad.fill(0.0f);
}

// Digest over names, shapes and raw values of a state list.
inline std::uint64_t StateDigest(const StateList& state) {
  Digest d;
  for (const StateEntry& e : state) {
    d.Update(e.name);
    d.Update(std::span<const int>(e.tensor->shape()));
    d.Update(e.tensor->values());
  }
  return d.value();
}

}  // namespace vprior::nn

#endif  // VPRIOR_NN_PARAMETER_H_
