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

#include "vprior/nn/optimizer.h"

#include <utility>

#include "vprior/errors.h"

namespace vprior::nn {

Sgd::Sgd(ParameterList params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    if (!p->trainable) {
      throw ValidationError("optimizer given frozen parameter " + p->name);
    }
    velocity_.emplace_back(p->value.shape());
    names_.push_back(p->name + ".momentum_buffer");
  }
}

void Sgd::ZeroGrad() { nn::ZeroGrad(params_); }

void Sgd::Step(double lr) {
  const float mu = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  const float step = static_cast<float>(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    float* w = params_[i]->value.data();
    const float* g = params_[i]->grad.data();
    float* v = velocity_[i].data();
    const std::size_t n = params_[i]->value.size();
    for (std::size_t j = 0; j < n; ++j) {
      v[j] = mu * v[j] + (g[j] + wd * w[j]);
      w[j] -= step * v[j];
    }
  }
}

StateList Sgd::State() {
  StateList out;
  for (std::size_t i = 0; i < velocity_.size(); ++i) {
    out.push_back({names_[i], &velocity_[i]});
  }
  return out;
}

}  // namespace vprior::nn
