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

#ifndef VPRIOR_NN_RESNET_H_
#define VPRIOR_NN_RESNET_H_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vprior/nn/layers.h"

namespace vprior::nn {

enum class BlockKind { kBasic, kBottleneck };

struct BackboneConfig {
  // 10, 18, 34 (basic blocks) or 50 (bottleneck blocks).
  int depth = 18;
  // Channels of the first stage; doubled at every later stage.
  int width = 16;
  // Stride of the 3x3 stem convolution. There is no stem max-pool.
  int stem_stride = 2;
  int in_channels = 3;

  BlockKind block_kind() const;
  std::vector<int> blocks_per_stage() const;
  void Validate() const;
};

class ResidualBlock {
 public:
  ResidualBlock(const std::string& name, BlockKind kind, int in_channels,
                int width, int stride);

  void Init(Rng& rng);
  Tensor Forward(const Tensor& x, Mode mode);
  Tensor Backward(const Tensor& dy);

  int out_channels() const { return convs_.back().out_channels(); }
  void CollectParameters(ParameterList& out);
  void CollectState(StateList& out);

 private:
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm2d> bns_;
  std::optional<Conv2d> proj_conv_;
  std::optional<BatchNorm2d> proj_bn_;
  // Post-ReLU activations of the inner units and of the block output.
  std::vector<Tensor> inner_;
  Tensor out_;
};

// ResNet trunk: stem, four residual stages, global average pooling.
// Stage outputs ("layer1" .. "layer4") can be tapped for distillation.
class ResNet {
 public:
  explicit ResNet(const BackboneConfig& cfg, const std::string& prefix = "backbone");

  void Init(Rng& rng);

  // images: {3, N, H, W}. Returns pooled features {N, feature_dim()}. When
  // `taps` is non-null it receives a copy of every stage output.
  Tensor Forward(const Tensor& images, Mode mode,
                 std::vector<Tensor>* taps = nullptr);

  // d_pooled: {N, feature_dim()}. `d_taps` is empty or holds one tensor per
  // stage (an empty tensor meaning no gradient at that tap).
  void Backward(const Tensor& d_pooled, std::span<const Tensor> d_taps = {});

  int feature_dim() const { return stage_channels_.back(); }
  const std::vector<int>& stage_channels() const { return stage_channels_; }
  static std::vector<std::string> StageNames();
  const BackboneConfig& config() const { return cfg_; }

  ParameterList Parameters();
  StateList State();

 private:
  BackboneConfig cfg_;
  Conv2d stem_conv_;
  BatchNorm2d stem_bn_;
  std::vector<std::vector<ResidualBlock>> stages_;
  std::vector<int> stage_channels_;
  Tensor stem_out_;
  std::vector<int> last_shape_;
};

// Two-layer MLP projection head: Linear -> ReLU -> Linear.
class MlpHead {
 public:
  MlpHead(const std::string& prefix, int in_features, int hidden, int out);
  void Init(Rng& rng);
  Tensor Forward(const Tensor& x, Mode mode);
  Tensor Backward(const Tensor& dy);
  void CollectParameters(ParameterList& out);
  void CollectState(StateList& out);

 private:
  Linear fc1_;
  Linear fc2_;
  Tensor hidden_;
};

// Backbone + projection head + row normalization: the phase-1 encoder.
class EmbeddingModel {
 public:
  EmbeddingModel(const BackboneConfig& cfg, int embed_dim);

  void Init(Rng& rng);
  // Unit-norm embeddings {N, embed_dim}.
  Tensor Forward(const Tensor& images, Mode mode);
  void Backward(const Tensor& d_embed);

  ResNet& backbone() { return backbone_; }
  const ResNet& backbone() const { return backbone_; }
  int embed_dim() const { return embed_dim_; }

  ParameterList Parameters();
  StateList State();

 private:
  ResNet backbone_;
  MlpHead head_;
  int embed_dim_;
  Tensor embed_;
  std::vector<float> norms_;
};

}  // namespace vprior::nn

#endif  // VPRIOR_NN_RESNET_H_
