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

#ifndef VPRIOR_TRAINER_H_
#define VPRIOR_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vprior/checkpoint.h"
#include "vprior/config.h"
#include "vprior/data.h"
#include "vprior/losses.h"
#include "vprior/metrics.h"
#include "vprior/nn/layers.h"
#include "vprior/nn/optimizer.h"
#include "vprior/nn/resnet.h"

namespace vprior {

// ---------------------------------------------------------------------------
// Learning-rate schedules

enum class LrSchedule { kStep, kCosine };

struct ScheduleConfig {
  LrSchedule kind = LrSchedule::kStep;
  double base_lr = 0.1;
  double gamma = 0.1;
  // Step schedule: the rate is multiplied by gamma at every listed epoch and
  // additionally every `drop_every` epochs when that is positive.
  std::vector<int> drop_epochs;
  int drop_every = 0;
  // Cosine schedule length.
  int epochs = 1;
};

double LrAt(const ScheduleConfig& schedule, int epoch);

LrSchedule ParseLrSchedule(const std::string& name);
const char* LrScheduleName(LrSchedule kind);

// ---------------------------------------------------------------------------
// Configurations. Every field maps to a dotted key; see ToConfig().

enum class QueueInit { kRandom, kKeys };

struct Phase1Config {
  int epochs = 800;
  double lr = 0.03;
  LrSchedule lr_schedule = LrSchedule::kStep;
  std::vector<int> lr_drops{120, 160};
  double lr_gamma = 0.1;
  double key_momentum = 0.999;
  int queue_size = 4096;
  ContrastiveLossConfig loss;
  int batch_size = 256;
  int embed_dim = 128;
  std::uint64_t seed = 0;
  QueueInit queue_init = QueueInit::kRandom;
  // Keys are encoded in this many shuffled sub-batches so that their
  // normalization statistics differ from the queries'.
  int key_bn_groups = 4;
  int workers = 1;
  nn::BackboneConfig backbone;
  nn::SgdConfig sgd;
  AugmentationPolicy augment = AugmentationPolicy::TwoView(32);

  ScheduleConfig schedule() const;
  // Throws ConfigError; logs a warning for drop epochs beyond the run.
  void Validate() const;
  void ToConfig(FlatConfig& out) const;
  static Phase1Config FromConfig(const FlatConfig& in);
};

struct Phase2Config {
  int epochs = 100;
  double lr = 0.1;
  LrSchedule lr_schedule = LrSchedule::kStep;
  int lr_step_every = 30;
  double lr_gamma = 0.1;
  bool distill = true;
  Phase2LossConfig loss;
  std::vector<std::string> taps{"layer1", "layer2", "layer3", "layer4"};
  bool connector_norm = true;
  // Which phase-1 encoder initializes the teacher: "query" or "key".
  std::string teacher_source = "query";
  int batch_size = 256;
  std::uint64_t seed = 0;
  int workers = 1;
  nn::BackboneConfig backbone;
  nn::SgdConfig sgd;
  AugmentationPolicy augment = AugmentationPolicy::SupervisedTrain(32);
  AugmentationPolicy eval = AugmentationPolicy::Eval(32);

  ScheduleConfig schedule() const;
  void Validate() const;
  void ToConfig(FlatConfig& out) const;
  static Phase2Config FromConfig(const FlatConfig& in);
};

struct ProbeConfig {
  int epochs = 100;
  double lr = 0.1;
  int batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  AugmentationPolicy eval = AugmentationPolicy::Eval(32);

  void Validate() const;
  void ToConfig(FlatConfig& out) const;
  static ProbeConfig FromConfig(const FlatConfig& in);
};

// Every recognised key with its default value.
FlatConfig DefaultTrainingConfig();

// ---------------------------------------------------------------------------
// Training

struct TrainHooks {
  MetricsLog* metrics = nullptr;
  // Where a diagnostic dump is written before NonFiniteLossError is thrown.
  std::filesystem::path dump_dir;
  // Called after every epoch with (phase, epoch, mean step loss).
  std::function<void(const std::string&, int, double)> on_epoch;
};

// The query encoder as initialized for `cfg` (before any training).
std::unique_ptr<nn::EmbeddingModel> InitialEncoder(const Phase1Config& cfg);

// Contrastive pre-training of a query/key encoder pair. Consumes images
// only. When `resume` is given, training continues after its epoch.
Checkpoint PretrainPhase1(const Phase1Config& cfg, const UnlabeledImageSet& images,
                          const TrainHooks& hooks = {}, const Checkpoint* resume = nullptr);

// Supervised training of a backbone plus zero-initialized classifier.
// With `phase1` the student (and the teacher, when distilling) start from
// that checkpoint; without it the student is randomly initialized and
// distillation must be disabled. `val`, when given, is scored every epoch.
Checkpoint FinetunePhase2(const Phase2Config& cfg, const LabeledImageSet& train,
                          const Checkpoint* phase1, const TrainHooks& hooks = {},
                          const LabeledImageSet* val = nullptr);

// Supervised-from-scratch baseline: FinetunePhase2 without checkpoint or
// distillation.
Checkpoint TrainSupervised(Phase2Config cfg, const LabeledImageSet& train,
                           const TrainHooks& hooks = {},
                           const LabeledImageSet* val = nullptr);

// ---------------------------------------------------------------------------
// Models from checkpoints

nn::BackboneConfig BackboneFromConfig(const FlatConfig& cfg);
void BackboneToConfig(const nn::BackboneConfig& backbone, FlatConfig& out);

// `source`: "query" or "key" for phase-1 checkpoints, "model" for
// classifier checkpoints; empty picks "query" or "model" by phase.
std::unique_ptr<nn::ResNet> LoadBackbone(const Checkpoint& ckpt,
                                         const std::string& source = "");
std::unique_ptr<nn::EmbeddingModel> LoadEncoder(const Checkpoint& ckpt,
                                                const std::string& source = "query");

// A backbone with an affine classifier on its pooled features.
struct Classifier {
  std::unique_ptr<nn::ResNet> backbone;
  nn::Linear head;
};

// Throws ValidationError when the checkpoint carries no classifier head.
Classifier LoadClassifier(const Checkpoint& ckpt);
Checkpoint ClassifierCheckpoint(Classifier& model, const std::string& phase,
                                const FlatConfig& config);

// ---------------------------------------------------------------------------
// Evaluation

// Pooled inference-mode features {N, feature_dim} of every image.
Tensor ExtractFeatures(nn::ResNet& backbone, const LabeledImageSet& data,
                       const AugmentationPolicy& eval, int batch_size = 128);

double Top1(const Tensor& logits, const std::vector<int>& labels);

// Fraction of images whose arg-max class equals the label.
double EvaluateTop1(nn::ResNet& backbone, nn::Linear& head, const LabeledImageSet& data,
                    const AugmentationPolicy& eval, int batch_size = 128);
double EvaluateTop1(const Checkpoint& ckpt, const LabeledImageSet& data,
                    const AugmentationPolicy& eval);

struct ProbeResult {
  double val_top1 = 0.0;
  double train_top1 = 0.0;
  // Acts on raw features; the feature standardization is folded in.
  nn::Linear head;
};

// Trains an affine classifier on frozen, standardized features of `train`
// and scores it on `val`. The backbone is only run in inference mode.
ProbeResult LinearProbe(nn::ResNet& backbone, const LabeledImageSet& train,
                        const LabeledImageSet& val, const ProbeConfig& cfg,
                        MetricsLog* metrics = nullptr);

}  // namespace vprior

#endif  // VPRIOR_TRAINER_H_
