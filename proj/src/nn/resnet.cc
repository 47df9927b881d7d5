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

#include "vprior/nn/resnet.h"

#include <Eigen/Core>

#include "vprior/errors.h"

namespace vprior::nn {

BlockKind BackboneConfig::block_kind() const {
  return depth >= 50 ? BlockKind::kBottleneck : BlockKind::kBasic;
}

std::vector<int> BackboneConfig::blocks_per_stage() const {
  switch (depth) {
    case 10: return {1, 1, 1, 1};
    case 18: return {2, 2, 2, 2};
    case 34: return {3, 4, 6, 3};
    case 50: return {3, 4, 6, 3};
    default:
      throw ConfigError("unsupported backbone depth " + std::to_string(depth) +
                        " (expected 10, 18, 34 or 50)");
  }
}

void BackboneConfig::Validate() const {
  blocks_per_stage();
  if (width < 1) throw ConfigError("backbone width must be positive");
  if (stem_stride < 1) throw ConfigError("stem stride must be positive");
  if (in_channels < 1) throw ConfigError("input channels must be positive");
}

// ---------------------------------------------------------------------------

ResidualBlock::ResidualBlock(const std::string& name, BlockKind kind,
                             int in_channels, int width, int stride) {
  if (kind == BlockKind::kBasic) {
    convs_.emplace_back(name + ".conv1", in_channels, width, 3, stride, 1);
    convs_.emplace_back(name + ".conv2", width, width, 3, 1, 1);
  } else {
    convs_.emplace_back(name + ".conv1", in_channels, width, 1, 1, 0);
    convs_.emplace_back(name + ".conv2", width, width, 3, stride, 1);
    convs_.emplace_back(name + ".conv3", width, 4 * width, 1, 1, 0);
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    bns_.emplace_back(name + ".bn" + std::to_string(i + 1),
                      convs_[i].out_channels());
  }
  const int out = convs_.back().out_channels();
  if (stride != 1 || in_channels != out) {
    proj_conv_.emplace(name + ".downsample.0", in_channels, out, 1, stride, 0);
    proj_bn_.emplace(name + ".downsample.1", out);
  }
  inner_.resize(convs_.size());
}

void ResidualBlock::Init(Rng& rng) {
  for (Conv2d& c : convs_) c.Init(rng);
  if (proj_conv_) proj_conv_->Init(rng);
}

Tensor ResidualBlock::Forward(const Tensor& x, Mode mode) {
  const std::size_t last = convs_.size() - 1;
  Tensor h = convs_[0].Forward(x, mode);
  for (std::size_t i = 0;; ++i) {
    h = bns_[i].Forward(h, mode);
    if (i == last) break;
    ReluInPlace(h);
    if (Records(mode)) inner_[i] = h;
    h = convs_[i + 1].Forward(h, mode);
  }
  if (proj_conv_) {
    Tensor sc = proj_bn_->Forward(proj_conv_->Forward(x, mode), mode);
    Eigen::Map<Eigen::ArrayXf>(h.data(), h.size()) +=
        Eigen::Map<const Eigen::ArrayXf>(sc.data(), sc.size());
  } else {
    Eigen::Map<Eigen::ArrayXf>(h.data(), h.size()) +=
        Eigen::Map<const Eigen::ArrayXf>(x.data(), x.size());
  }
  ReluInPlace(h);
  if (Records(mode)) out_ = h;
  return h;
}

Tensor ResidualBlock::Backward(const Tensor& dy) {
  Tensor g = dy;
  ReluBackwardInPlace(out_, g);
  Tensor d_short = g;
  const int last = static_cast<int>(convs_.size()) - 1;
  for (int i = last; i >= 0; --i) {
    if (i < last) ReluBackwardInPlace(inner_[i], g);
    g = bns_[i].Backward(g);
    g = convs_[i].Backward(g);
  }
  if (proj_conv_) d_short = proj_conv_->Backward(proj_bn_->Backward(d_short));
  Eigen::Map<Eigen::ArrayXf>(g.data(), g.size()) +=
      Eigen::Map<const Eigen::ArrayXf>(d_short.data(), d_short.size());
  for (Tensor& t : inner_) t = Tensor();
  out_ = Tensor();
  return g;
}

void ResidualBlock::CollectParameters(ParameterList& out) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].CollectParameters(out);
    bns_[i].CollectParameters(out);
  }
  if (proj_conv_) {
    proj_conv_->CollectParameters(out);
    proj_bn_->CollectParameters(out);
  }
}

void ResidualBlock::CollectState(StateList& out) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].CollectState(out);
    bns_[i].CollectState(out);
  }
  if (proj_conv_) {
    proj_conv_->CollectState(out);
    proj_bn_->CollectState(out);
  }
}

// ---------------------------------------------------------------------------

ResNet::ResNet(const BackboneConfig& cfg, const std::string& prefix)
    : cfg_(cfg) {
  cfg.Validate();
  stem_conv_ = Conv2d(prefix + ".conv1", cfg.in_channels, cfg.width, 3,
                      cfg.stem_stride, 1);
  stem_bn_ = BatchNorm2d(prefix + ".bn1", cfg.width);
  const std::vector<int> blocks = cfg.blocks_per_stage();
  const BlockKind kind = cfg.block_kind();
  const std::vector<std::string> names = StageNames();
  int in = cfg.width;
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    const int width = cfg.width << s;
    std::vector<ResidualBlock> stage;
    for (int b = 0; b < blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      stage.emplace_back(prefix + "." + names[s] + "." + std::to_string(b),
                         kind, in, width, stride);
      in = stage.back().out_channels();
    }
    stages_.push_back(std::move(stage));
    stage_channels_.push_back(in);
  }
}

std::vector<std::string> ResNet::StageNames() {
  return {"layer1", "layer2", "layer3", "layer4"};
}

void ResNet::Init(Rng& rng) {
  stem_conv_.Init(rng);
  for (auto& stage : stages_) {
    for (ResidualBlock& b : stage) b.Init(rng);
  }
}

Tensor ResNet::Forward(const Tensor& images, Mode mode,
                       std::vector<Tensor>* taps) {
  Tensor h = stem_bn_.Forward(stem_conv_.Forward(images, mode), mode);
  ReluInPlace(h);
  if (Records(mode)) stem_out_ = h;
  if (taps) taps->clear();
  for (auto& stage : stages_) {
    for (ResidualBlock& b : stage) h = b.Forward(h, mode);
    if (taps) taps->push_back(h);
  }
  last_shape_ = h.shape();
  return GlobalAvgPool(h);
}

void ResNet::Backward(const Tensor& d_pooled, std::span<const Tensor> d_taps) {
  if (!d_taps.empty() && d_taps.size() != stages_.size()) {
    throw ShapeError("expected one tap gradient per stage");
  }
  Tensor g = GlobalAvgPoolBackward(d_pooled, last_shape_);
  for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
    if (!d_taps.empty() && !d_taps[s].empty()) {
      if (!d_taps[s].same_shape(g)) throw ShapeError("tap gradient shape mismatch");
      Eigen::Map<Eigen::ArrayXf>(g.data(), g.size()) +=
          Eigen::Map<const Eigen::ArrayXf>(d_taps[s].data(), d_taps[s].size());
    }
    auto& stage = stages_[s];
    for (auto it = stage.rbegin(); it != stage.rend(); ++it) g = it->Backward(g);
  }
  ReluBackwardInPlace(stem_out_, g);
  stem_conv_.Backward(stem_bn_.Backward(g), /*need_input_grad=*/false);
  stem_out_ = Tensor();
}

ParameterList ResNet::Parameters() {
  ParameterList out;
  stem_conv_.CollectParameters(out);
  stem_bn_.CollectParameters(out);
  for (auto& stage : stages_) {
    for (ResidualBlock& b : stage) b.CollectParameters(out);
  }
  return out;
}

StateList ResNet::State() {
  StateList out;
  stem_conv_.CollectState(out);
  stem_bn_.CollectState(out);
  for (auto& stage : stages_) {
    for (ResidualBlock& b : stage) b.CollectState(out);
  }
  return out;
}

// ---------------------------------------------------------------------------

MlpHead::MlpHead(const std::string& prefix, int in_features, int hidden,
                 int out)
    : fc1_(prefix + ".0", in_features, hidden), fc2_(prefix + ".2", hidden, out) {}

void MlpHead::Init(Rng& rng) {
  fc1_.Init(rng);
  fc2_.Init(rng);
}

Tensor MlpHead::Forward(const Tensor& x, Mode mode) {
  Tensor h = fc1_.Forward(x, mode);
  ReluInPlace(h);
  if (Records(mode)) hidden_ = h;
  return fc2_.Forward(h, mode);
}

Tensor MlpHead::Backward(const Tensor& dy) {
  Tensor g = fc2_.Backward(dy);
  ReluBackwardInPlace(hidden_, g);
  hidden_ = Tensor();
  return fc1_.Backward(g);
}

void MlpHead::CollectParameters(ParameterList& out) {
  fc1_.CollectParameters(out);
  fc2_.CollectParameters(out);
}

void MlpHead::CollectState(StateList& out) {
  fc1_.CollectState(out);
  fc2_.CollectState(out);
}

// ---------------------------------------------------------------------------

EmbeddingModel::EmbeddingModel(const BackboneConfig& cfg, int embed_dim)
    : backbone_(cfg),
      head_("head", backbone_.feature_dim(), backbone_.feature_dim(), embed_dim),
      embed_dim_(embed_dim) {
  if (embed_dim < 2) throw ConfigError("embedding dimension must be >= 2");
}

void EmbeddingModel::Init(Rng& rng) {
  backbone_.Init(rng);
  head_.Init(rng);
}

Tensor EmbeddingModel::Forward(const Tensor& images, Mode mode) {
  Tensor z = head_.Forward(backbone_.Forward(images, mode), mode);
  std::vector<float> norms;
  Tensor y = L2NormalizeRows(z, &norms);
  if (Records(mode)) {
    embed_ = y;
    norms_ = std::move(norms);
  }
  return y;
}

void EmbeddingModel::Backward(const Tensor& d_embed) {
  Tensor g = L2NormalizeRowsBackward(embed_, norms_, d_embed);
  backbone_.Backward(head_.Backward(g));
  embed_ = Tensor();
}

ParameterList EmbeddingModel::Parameters() {
  ParameterList out = backbone_.Parameters();
  head_.CollectParameters(out);
  return out;
}

StateList EmbeddingModel::State() {
  StateList out = backbone_.State();
  head_.CollectState(out);
  return out;
}

}  // namespace vprior::nn
