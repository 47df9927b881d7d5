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

#include "vprior/trainer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vprior/distiller.h"
#include "vprior/encoder_state.h"
#include "vprior/errors.h"
#include "vprior/log.h"

namespace vprior {
namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;
constexpr std::uint64_t kQueueTag = 0x71756575;
constexpr std::uint64_t kKeyShuffleTag = 0x6b736866;
constexpr std::uint64_t kConnectorTag = 0x636f6e6e;
constexpr std::uint64_t kProbeTag = 0x70726f62;

std::string Hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Augmentation keys. Both phases write the shared geometry keys; each
// writes the keys specific to its own policy.
void SharedPolicyToConfig(const AugmentationPolicy& p, FlatConfig& out) {
  out.Set("augment.crop_size", p.crop_size);
  out.Set("augment.scale_max", p.scale_max);
  out.Set("augment.ratio_min", p.ratio_min);
  out.Set("augment.ratio_max", p.ratio_max);
  out.Set("augment.flip_p", p.flip_p);
  out.Set("augment.eval_crop_fraction", p.eval_crop_fraction);
}

void TwoViewPolicyToConfig(const AugmentationPolicy& p, FlatConfig& out) {
  SharedPolicyToConfig(p, out);
  out.Set("augment.scale_min", p.scale_min);
  out.Set("augment.jitter_p", p.jitter_p);
  out.Set("augment.brightness", p.brightness);
  out.Set("augment.contrast", p.contrast);
  out.Set("augment.saturation", p.saturation);
  out.Set("augment.hue", p.hue);
  out.Set("augment.grayscale_p", p.grayscale_p);
  out.Set("augment.blur_p", p.blur_p);
  out.Set("augment.blur_sigma_min", p.blur_sigma_min);
  out.Set("augment.blur_sigma_max", p.blur_sigma_max);
  out.Set("augment.blur_reference_size", p.blur_reference_size);
}

void SupervisedPolicyToConfig(const AugmentationPolicy& train, const AugmentationPolicy& eval,
                              FlatConfig& out) {
  SharedPolicyToConfig(train, out);
  out.Set("augment.eval_crop_fraction", eval.eval_crop_fraction);
  out.Set("augment.supervised_scale_min", train.scale_min);
}

AugmentationPolicy PolicyFromConfig(const FlatConfig& in, AugmentMode mode) {
  const int crop = in.GetInt("augment.crop_size", 32);
  AugmentationPolicy p;
  switch (mode) {
    case AugmentMode::kTwoView:
      p = AugmentationPolicy::TwoView(crop);
      break;
    case AugmentMode::kSupervisedTrain:
      p = AugmentationPolicy::SupervisedTrain(crop);
      break;
    case AugmentMode::kEval:
      p = AugmentationPolicy::Eval(crop);
      break;
  }
  p.eval_crop_fraction = in.GetDouble("augment.eval_crop_fraction", p.eval_crop_fraction);
  p.ratio_min = in.GetDouble("augment.ratio_min", p.ratio_min);
  p.ratio_max = in.GetDouble("augment.ratio_max", p.ratio_max);
  p.scale_max = in.GetDouble("augment.scale_max", p.scale_max);
  if (mode == AugmentMode::kEval) return p;
  p.flip_p = in.GetDouble("augment.flip_p", p.flip_p);
  if (mode == AugmentMode::kSupervisedTrain) {
    p.scale_min = in.GetDouble("augment.supervised_scale_min", p.scale_min);
    return p;
  }
  p.scale_min = in.GetDouble("augment.scale_min", p.scale_min);
  p.jitter_p = in.GetDouble("augment.jitter_p", p.jitter_p);
  p.brightness = in.GetDouble("augment.brightness", p.brightness);
  p.contrast = in.GetDouble("augment.contrast", p.contrast);
  p.saturation = in.GetDouble("augment.saturation", p.saturation);
  p.hue = in.GetDouble("augment.hue", p.hue);
  p.grayscale_p = in.GetDouble("augment.grayscale_p", p.grayscale_p);
  p.blur_p = in.GetDouble("augment.blur_p", p.blur_p);
  p.blur_sigma_min = in.GetDouble("augment.blur_sigma_min", p.blur_sigma_min);
  p.blur_sigma_max = in.GetDouble("augment.blur_sigma_max", p.blur_sigma_max);
  p.blur_reference_size = in.GetInt("augment.blur_reference_size", p.blur_reference_size);
  return p;
}

Matrix ToMatrix(const Tensor& t) {
  Matrix m(t.dim(0), t.dim(1));
  for (int i = 0; i < t.dim(0); ++i) {
    for (int j = 0; j < t.dim(1); ++j) m(i, j) = t[static_cast<std::size_t>(i) * t.dim(1) + j];
  }
  return m;
}

Tensor ToTensor2(const Matrix& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      t[static_cast<std::size_t>(i) * m.cols() + j] = static_cast<float>(m(i, j));
    }
  }
  return t;
}

// Copies sample `src` of a {C, N, ...} tensor into sample `dst` of another.
void CopySample(const Tensor& from, int src, Tensor& to, int dst) {
  const int c = from.dim(0);
  const std::size_t plane = from.size() / (static_cast<std::size_t>(c) * from.dim(1));
  for (int ch = 0; ch < c; ++ch) {
    std::copy_n(from.data() + (static_cast<std::size_t>(ch) * from.dim(1) + src) * plane, plane,
                to.data() + (static_cast<std::size_t>(ch) * to.dim(1) + dst) * plane);
  }
}

// Keys of a batch, encoded in `groups` shuffled sub-batches.
Tensor EncodeKeys(nn::EmbeddingModel& key, const Tensor& images, int groups, Rng rng) {
  const int n = images.dim(1);
  groups = std::clamp(groups, 1, n);
  if (groups == 1) return key.Forward(images, nn::Mode::kNoGrad);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor out({n, key.embed_dim()});
  int start = 0;
  for (int g = 0; g < groups; ++g) {
    const int len = n / groups + (g < n % groups ? 1 : 0);
    std::vector<int> shape = images.shape();
    shape[1] = len;
    Tensor chunk(shape);
    for (int i = 0; i < len; ++i) CopySample(images, perm[start + i], chunk, i);
    const Tensor k = key.Forward(chunk, nn::Mode::kNoGrad);
    for (int i = 0; i < len; ++i) {
      std::copy_n(k.data() + static_cast<std::size_t>(i) * key.embed_dim(), key.embed_dim(),
                  out.data() + static_cast<std::size_t>(perm[start + i]) * key.embed_dim());
    }
    start += len;
  }
  return out;
}

[[noreturn]] void AbortNonFinite(const TrainHooks& hooks, const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["phase"] = m.phase;
  j["epoch"] = m.epoch;
  j["step"] = m.step;
  j["lr"] = m.lr;
  auto num = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(std::isfinite(*v) ? nlohmann::ordered_json(*v)
                                                        : nlohmann::ordered_json(std::to_string(*v)))
             : nlohmann::ordered_json(nullptr);
  };
  j["loss_total"] = num(m.loss_total);
  j["loss_ce"] = num(m.loss_ce);
  j["loss_distill"] = num(m.loss_distill);
  j["loss_contrastive"] = num(m.loss_contrastive);
  const std::string dump = j.dump();
  if (!hooks.dump_dir.empty()) {
    std::ofstream(hooks.dump_dir / "nonfinite_dump.json") << dump << "\n";
  }
  throw NonFiniteLossError("non-finite loss: " + dump);
}

void Emit(const TrainHooks& hooks, const StepMetrics& m) {
  if (hooks.metrics) hooks.metrics->LogStep(m);
}

void FillMeta(Checkpoint& ck, const std::string& phase, int epoch, int steps,
              const TrainHooks& hooks) {
  ck.meta["phase"] = phase;
  ck.meta["epoch"] = std::to_string(epoch);
  ck.meta["steps"] = std::to_string(steps);
  ck.meta["config_hash"] = Hex(ck.config.Hash());
  ck.meta["metrics_digest"] = hooks.metrics ? Hex(hooks.metrics->digest()) : "none";
}

int StageIndex(const std::string& name) {
  const std::vector<std::string> names = nn::ResNet::StageNames();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw ConfigError("unknown stage tap '" + name + "'");
  }
  return static_cast<int>(it - names.begin());
}

}  // namespace

// ---------------------------------------------------------------------------

double LrAt(const ScheduleConfig& s, int epoch) {
  if (epoch < 0) throw ValidationError("epoch must be nonnegative");
  if (s.kind == LrSchedule::kCosine) {
    const double t = std::min(1.0, static_cast<double>(epoch) / std::max(1, s.epochs));
    return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  int drops = 0;
  for (int e : s.drop_epochs) drops += epoch >= e ? 1 : 0;
  if (s.drop_every > 0) drops += epoch / s.drop_every;
  return s.base_lr * std::pow(s.gamma, drops);
}

LrSchedule ParseLrSchedule(const std::string& name) {
  if (name == "step") return LrSchedule::kStep;
  if (name == "cosine") return LrSchedule::kCosine;
  throw ConfigError("unknown lr schedule '" + name + "'");
}

const char* LrScheduleName(LrSchedule kind) {
  return kind == LrSchedule::kStep ? "step" : "cosine";
}

ScheduleConfig Phase1Config::schedule() const {
  ScheduleConfig s;
  s.kind = lr_schedule;
  s.base_lr = lr;
  s.gamma = lr_gamma;
  s.drop_epochs = lr_drops;
  s.epochs = epochs;
  return s;
}

void Phase1Config::Validate() const {
  if (epochs < 1 || lr <= 0 || batch_size < 1 || queue_size < 1 || embed_dim < 2 ||
      key_bn_groups < 1 || workers < 0 || lr_gamma <= 0) {
    throw ConfigError("phase1: epochs, lr, batch_size, queue_size, key_bn_groups and "
                      "lr_gamma must be positive and embed_dim >= 2");
  }
  if (!(key_momentum >= 0.0 && key_momentum <= 1.0)) {
    throw ConfigError("phase1.key_momentum must lie in [0, 1]");
  }
  if (!std::is_sorted(lr_drops.begin(), lr_drops.end())) {
    throw ConfigError("phase1.lr_drops must be sorted ascending");
  }
  if (lr_schedule == LrSchedule::kStep && !lr_drops.empty() && lr_drops.back() >= epochs) {
    Log(LogLevel::kWarning, "phase1.lr_drops contains epochs at or beyond phase1.epochs=" +
                                std::to_string(epochs) + "; those drops never happen");
  }
  if (batch_size > queue_size) {
    throw ConfigError("phase1.batch_size must not exceed phase1.queue_size");
  }
  loss.Validate();
  augment.Validate();
  if (augment.mode != AugmentMode::kTwoView) throw ConfigError("phase1 needs a two_view policy");
}

void Phase1Config::ToConfig(FlatConfig& out) const {
  out.Set("phase1.epochs", epochs);
  out.Set("phase1.lr", lr);
  out.Set("phase1.lr_schedule", LrScheduleName(lr_schedule));
  out.Set("phase1.lr_drops", lr_drops);
  out.Set("phase1.lr_gamma", lr_gamma);
  out.Set("phase1.key_momentum", key_momentum);
  out.Set("phase1.queue_size", queue_size);
  out.Set("phase1.temperature", loss.temperature);
  out.Set("phase1.margin", loss.margin);
  out.Set("phase1.batch_size", batch_size);
  out.Set("phase1.embed_dim", embed_dim);
  out.Set("phase1.seed", seed);
  out.Set("phase1.queue_init", queue_init == QueueInit::kRandom ? "random" : "keys");
  out.Set("phase1.key_bn_groups", key_bn_groups);
  out.Set("phase1.workers", workers);
  out.Set("phase1.sgd_momentum", sgd.momentum);
  out.Set("phase1.weight_decay", sgd.weight_decay);
  BackboneToConfig(backbone, out);
  TwoViewPolicyToConfig(augment, out);
}

Phase1Config Phase1Config::FromConfig(const FlatConfig& in) {
  Phase1Config c;
  c.epochs = in.GetInt("phase1.epochs", c.epochs);
  c.lr = in.GetDouble("phase1.lr", c.lr);
  c.lr_schedule = ParseLrSchedule(in.GetString("phase1.lr_schedule", "step"));
  c.lr_drops = in.GetIntList("phase1.lr_drops", c.lr_drops);
  c.lr_gamma = in.GetDouble("phase1.lr_gamma", c.lr_gamma);
  c.key_momentum = in.GetDouble("phase1.key_momentum", c.key_momentum);
  c.queue_size = in.GetInt("phase1.queue_size", c.queue_size);
  c.loss.temperature = in.GetDouble("phase1.temperature", c.loss.temperature);
  c.loss.margin = in.GetDouble("phase1.margin", c.loss.margin);
  c.batch_size = in.GetInt("phase1.batch_size", c.batch_size);
  c.embed_dim = in.GetInt("phase1.embed_dim", c.embed_dim);
  c.seed = in.GetUint("phase1.seed", c.seed);
  const std::string init = in.GetString("phase1.queue_init", "random");
  if (init != "random" && init != "keys") {
    throw ConfigError("phase1.queue_init must be 'random' or 'keys'");
  }
  c.queue_init = init == "random" ? QueueInit::kRandom : QueueInit::kKeys;
  c.key_bn_groups = in.GetInt("phase1.key_bn_groups", c.key_bn_groups);
  c.workers = in.GetInt("phase1.workers", c.workers);
  c.sgd.momentum = in.GetDouble("phase1.sgd_momentum", c.sgd.momentum);
  c.sgd.weight_decay = in.GetDouble("phase1.weight_decay", c.sgd.weight_decay);
  c.backbone = BackboneFromConfig(in);
  c.augment = PolicyFromConfig(in, AugmentMode::kTwoView);
  return c;
}

ScheduleConfig Phase2Config::schedule() const {
  ScheduleConfig s;
  s.kind = lr_schedule;
  s.base_lr = lr;
  s.gamma = lr_gamma;
  s.drop_every = lr_step_every;
  s.epochs = epochs;
  return s;
}

void Phase2Config::Validate() const {
  if (epochs < 1 || lr <= 0 || batch_size < 1 || lr_step_every < 0 || workers < 0 ||
      lr_gamma <= 0) {
    throw ConfigError("phase2: epochs, lr, batch_size and lr_gamma must be positive");
  }
  if (teacher_source != "query" && teacher_source != "key") {
    throw ConfigError("phase2.teacher_source must be 'query' or 'key'");
  }
  if (distill && taps.empty()) throw ConfigError("phase2.taps is empty");
  for (const std::string& t : taps) StageIndex(t);
  loss.Validate();
  augment.Validate();
  eval.Validate();
  if (augment.mode != AugmentMode::kSupervisedTrain || eval.mode != AugmentMode::kEval) {
    throw ConfigError("phase2 needs supervised_train and eval policies");
  }
}

void Phase2Config::ToConfig(FlatConfig& out) const {
  out.Set("phase2.epochs", epochs);
  out.Set("phase2.lr", lr);
  out.Set("phase2.lr_schedule", LrScheduleName(lr_schedule));
  out.Set("phase2.lr_step_every", lr_step_every);
  out.Set("phase2.lr_gamma", lr_gamma);
  out.Set("phase2.distill", distill);
  out.Set("phase2.distill_weight", loss.distill_weight);
  out.Set("phase2.distill_variant", "plain");
  out.Set("phase2.taps", taps);
  out.Set("phase2.connector_norm", connector_norm);
  out.Set("phase2.teacher_source", teacher_source);
  out.Set("phase2.batch_size", batch_size);
  out.Set("phase2.seed", seed);
  out.Set("phase2.workers", workers);
  out.Set("phase2.sgd_momentum", sgd.momentum);
  out.Set("phase2.weight_decay", sgd.weight_decay);
  BackboneToConfig(backbone, out);
  SupervisedPolicyToConfig(augment, eval, out);
}

Phase2Config Phase2Config::FromConfig(const FlatConfig& in) {
  Phase2Config c;
  c.epochs = in.GetInt("phase2.epochs", c.epochs);
  c.lr = in.GetDouble("phase2.lr", c.lr);
  c.lr_schedule = ParseLrSchedule(in.GetString("phase2.lr_schedule", "step"));
  c.lr_step_every = in.GetInt("phase2.lr_step_every", c.lr_step_every);
  c.lr_gamma = in.GetDouble("phase2.lr_gamma", c.lr_gamma);
  c.distill = in.GetBool("phase2.distill", c.distill);
  c.loss.distill_weight = in.GetDouble("phase2.distill_weight", c.loss.distill_weight);
  if (in.Has("phase2.distill_variant") && in.GetString("phase2.distill_variant", "") != "plain") {
    throw ConfigError("phase2.distill_variant '" + in.GetString("phase2.distill_variant", "") +
                      "' is not implemented; only 'plain' is available");
  }
  c.taps = in.GetStringList("phase2.taps", c.taps);
  c.connector_norm = in.GetBool("phase2.connector_norm", c.connector_norm);
  c.teacher_source = in.GetString("phase2.teacher_source", c.teacher_source);
  c.batch_size = in.GetInt("phase2.batch_size", c.batch_size);
  c.seed = in.GetUint("phase2.seed", c.seed);
  c.workers = in.GetInt("phase2.workers", c.workers);
  c.sgd.momentum = in.GetDouble("phase2.sgd_momentum", c.sgd.momentum);
  c.sgd.weight_decay = in.GetDouble("phase2.weight_decay", c.sgd.weight_decay);
  c.backbone = BackboneFromConfig(in);
  c.augment = PolicyFromConfig(in, AugmentMode::kSupervisedTrain);
  c.eval = PolicyFromConfig(in, AugmentMode::kEval);
  return c;
}

void ProbeConfig::Validate() const {
  if (epochs < 1 || lr <= 0 || batch_size < 1 || weight_decay < 0 || momentum < 0) {
    throw ConfigError("probe: epochs, lr and batch_size must be positive");
  }
  eval.Validate();
}

void ProbeConfig::ToConfig(FlatConfig& out) const {
  out.Set("probe.epochs", epochs);
  out.Set("probe.lr", lr);
  out.Set("probe.batch_size", batch_size);
  out.Set("probe.momentum", momentum);
  out.Set("probe.weight_decay", weight_decay);
  out.Set("probe.seed", seed);
}

ProbeConfig ProbeConfig::FromConfig(const FlatConfig& in) {
  ProbeConfig c;
  c.epochs = in.GetInt("probe.epochs", c.epochs);
  c.lr = in.GetDouble("probe.lr", c.lr);
  c.batch_size = in.GetInt("probe.batch_size", c.batch_size);
  c.momentum = in.GetDouble("probe.momentum", c.momentum);
  c.weight_decay = in.GetDouble("probe.weight_decay", c.weight_decay);
  c.seed = in.GetUint("probe.seed", c.seed);
  c.eval = PolicyFromConfig(in, AugmentMode::kEval);
  return c;
}

FlatConfig DefaultTrainingConfig() {
  FlatConfig c;
  Phase2Config().ToConfig(c);
  Phase1Config().ToConfig(c);
  ProbeConfig().ToConfig(c);
  return c;
}

nn::BackboneConfig BackboneFromConfig(const FlatConfig& cfg) {
  nn::BackboneConfig b;
  b.depth = cfg.GetInt("model.depth", b.depth);
  b.width = cfg.GetInt("model.width", b.width);
  b.stem_stride = cfg.GetInt("model.stem_stride", b.stem_stride);
  return b;
}

void BackboneToConfig(const nn::BackboneConfig& b, FlatConfig& out) {
  out.Set("model.depth", b.depth);
  out.Set("model.width", b.width);
  out.Set("model.stem_stride", b.stem_stride);
}

// ---------------------------------------------------------------------------

std::unique_ptr<nn::EmbeddingModel> InitialEncoder(const Phase1Config& cfg) {
  auto model = std::make_unique<nn::EmbeddingModel>(cfg.backbone, cfg.embed_dim);
  Rng init = MakeRng({cfg.seed, kInitTag});
  model->Init(init);
  return model;
}

Checkpoint PretrainPhase1(const Phase1Config& cfg, const UnlabeledImageSet& images,
                          const TrainHooks& hooks, const Checkpoint* resume) {
  cfg.Validate();
  if (images.size() < cfg.batch_size) {
    throw ConfigError("phase1 needs at least batch_size=" + std::to_string(cfg.batch_size) +
                      " images, got " + std::to_string(images.size()));
  }
  std::unique_ptr<nn::EmbeddingModel> query = InitialEncoder(cfg);
  auto key = std::make_unique<nn::EmbeddingModel>(cfg.backbone, cfg.embed_dim);
  const nn::StateList query_state = query->State();
  const nn::StateList key_state = key->State();
  for (std::size_t i = 0; i < key_state.size(); ++i) {
    *key_state[i].tensor = *query_state[i].tensor;
  }
  MomentumEncoderPair pair(query->Parameters(), key->Parameters(), cfg.key_momentum);
  nn::Sgd opt(query->Parameters(), cfg.sgd);
  NegativeQueue queue(cfg.queue_size, cfg.embed_dim);

  LoaderOptions lo;
  lo.batch_size = cfg.batch_size;
  lo.seed = cfg.seed;
  lo.workers = cfg.workers;
  ContrastiveLoader loader(images, cfg.augment, lo);
  const int per_epoch = loader.BatchesPerEpoch();

  int start_epoch = 0;
  if (resume) {
    if (resume->phase() != "phase1") throw ValidationError("resume needs a phase1 checkpoint");
    resume->GetState("query.", query_state);
    resume->GetState("key.", key_state);
    resume->GetState("optim.", opt.State());
    const auto it = resume->tensors64.find("queue.storage");
    if (it == resume->tensors64.end()) throw ValidationError("checkpoint lacks queue state");
    QueueState qs;
    qs.capacity = it->second.dim(0);
    qs.dim = it->second.dim(1);
    qs.count = std::stoi(resume->MetaOr("queue.count", "0"));
    qs.cursor = std::stoi(resume->MetaOr("queue.cursor", "0"));
    qs.storage = Eigen::Map<const Matrix>(it->second.data(), qs.capacity, qs.dim);
    queue = NegativeQueue::FromState(qs);
    start_epoch = resume->epoch() + 1;
  } else if (cfg.queue_init == QueueInit::kRandom) {
    Rng rng = MakeRng({cfg.seed, kQueueTag});
    queue.WarmStartRandom(rng);
  } else {
    // Keys of the untrained encoder over a dedicated pre-epoch pass.
    ContrastiveLoader warm(images, cfg.augment, lo);
    warm.StartEpoch(-1);
    int warm_step = 0;
    queue.WarmStart([&]() -> std::optional<Matrix> {
      if (queue.ready()) return std::nullopt;
      std::optional<ViewPairBatch> b = warm.Next();
      if (!b) {
        warm.StartEpoch(-1 - ++warm_step);
        b = warm.Next();
      }
      return ToMatrix(EncodeKeys(*key, b->view2, cfg.key_bn_groups,
                                 MakeRng({cfg.seed, kKeyShuffleTag, kQueueTag,
                                          static_cast<std::uint64_t>(warm_step)})));
    });
  }

  const ScheduleConfig schedule = cfg.schedule();
  int step = start_epoch * per_epoch;
  int last_epoch = start_epoch - 1;
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = LrAt(schedule, epoch);
    loader.StartEpoch(epoch);
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    while (std::optional<ViewPairBatch> batch = loader.Next()) {
      opt.ZeroGrad();
      const Tensor q = query->Forward(batch->view1, nn::Mode::kTrain);
      const Tensor k = EncodeKeys(*key, batch->view2, cfg.key_bn_groups,
                                  MakeRng({cfg.seed, kKeyShuffleTag,
                                           static_cast<std::uint64_t>(step)}));
      StepMetrics m;
      m.phase = "phase1";
      m.epoch = epoch;
      m.step = step;
      m.lr = lr;
      ContrastiveBatch cb{ToMatrix(q), ToMatrix(k), queue.Snapshot()};
      if (!cb.queries.allFinite() || !cb.positives.allFinite()) {
        m.loss_total = std::numeric_limits<double>::quiet_NaN();
        m.loss_contrastive = m.loss_total;
        AbortNonFinite(hooks, m);
      }
      ContrastiveGradients grads;
      const double loss = MarginInfoNceLoss(cb, cfg.loss, &grads);
      m.loss_total = loss;
      m.loss_contrastive = loss;
      if (!std::isfinite(loss)) AbortNonFinite(hooks, m);
      query->Backward(ToTensor2(grads.queries));
      opt.Step(lr);
      pair.Update();
      queue.Enqueue(cb.positives);
      Emit(hooks, m);
      epoch_loss += loss;
      ++epoch_steps;
      ++step;
    }
    last_epoch = epoch;
    const double mean = epoch_steps ? epoch_loss / epoch_steps : 0.0;
    if (hooks.metrics) hooks.metrics->LogEpoch("phase1", epoch, {{"loss_mean", mean}});
    if (hooks.on_epoch) hooks.on_epoch("phase1", epoch, mean);
  }

  Checkpoint ck;
  cfg.ToConfig(ck.config);
  ck.PutState("query.", query_state);
  ck.PutState("key.", key_state);
  ck.PutState("optim.", opt.State());
  const QueueState qs = queue.state();
  TensorD storage({qs.capacity, qs.dim});
  Eigen::Map<Matrix>(storage.data(), qs.capacity, qs.dim) = qs.storage;
  ck.tensors64.emplace("queue.storage", std::move(storage));
  ck.meta["queue.count"] = std::to_string(qs.count);
  ck.meta["queue.cursor"] = std::to_string(qs.cursor);
  FillMeta(ck, "phase1", last_epoch, step, hooks);
  return ck;
}

// ---------------------------------------------------------------------------

std::unique_ptr<nn::ResNet> LoadBackbone(const Checkpoint& ckpt, const std::string& source) {
  std::string src = source;
  if (src.empty()) src = ckpt.phase() == "phase1" ? "query" : "model";
  auto model = std::make_unique<nn::ResNet>(BackboneFromConfig(ckpt.config));
  if (!ckpt.HasPrefix(src + ".backbone.")) {
    throw ValidationError("checkpoint has no '" + src + "' backbone");
  }
  ckpt.GetState(src + ".", model->State());
  return model;
}

std::unique_ptr<nn::EmbeddingModel> LoadEncoder(const Checkpoint& ckpt, const std::string& source) {
  auto model = std::make_unique<nn::EmbeddingModel>(BackboneFromConfig(ckpt.config),
                                                    ckpt.config.GetInt("phase1.embed_dim", 128));
  ckpt.GetState(source + ".", model->State());
  return model;
}

Classifier LoadClassifier(const Checkpoint& ckpt) {
  const auto w = ckpt.tensors.find("classifier.weight");
  if (w == ckpt.tensors.end() || !ckpt.tensors.count("classifier.bias")) {
    throw ValidationError("checkpoint has no classifier head");
  }
  Classifier c{LoadBackbone(ckpt, "model"),
               nn::Linear("classifier", w->second.dim(1), w->second.dim(0))};
  nn::StateList head;
  c.head.CollectState(head);
  ckpt.GetState("", head);
  return c;
}

Checkpoint ClassifierCheckpoint(Classifier& model, const std::string& phase,
                                const FlatConfig& config) {
  Checkpoint ck;
  ck.config = config;
  BackboneToConfig(model.backbone->config(), ck.config);
  ck.PutState("model.", model.backbone->State());
  nn::StateList head;
  model.head.CollectState(head);
  ck.PutState("", head);
  ck.meta["phase"] = phase;
  ck.meta["epoch"] = "0";
  ck.meta["config_hash"] = Hex(ck.config.Hash());
  return ck;
}

Checkpoint FinetunePhase2(const Phase2Config& cfg, const LabeledImageSet& train,
                          const Checkpoint* phase1, const TrainHooks& hooks,
                          const LabeledImageSet* val) {
  cfg.Validate();
  if (train.size() < cfg.batch_size) {
    throw ConfigError("phase2 needs at least batch_size=" + std::to_string(cfg.batch_size) +
                      " labeled images, got " + std::to_string(train.size()));
  }
  if (cfg.distill && !phase1) {
    throw ConfigError("distillation needs a phase-1 checkpoint for the teacher");
  }
  if (phase1 && phase1->phase() != "phase1") {
    throw ValidationError("phase2 expects a phase1 checkpoint, got '" + phase1->phase() + "'");
  }
  std::unique_ptr<nn::ResNet> student;
  if (phase1) {
    student = LoadBackbone(*phase1, "query");
  } else {
    student = std::make_unique<nn::ResNet>(cfg.backbone);
    Rng init = MakeRng({cfg.seed, kInitTag});
    student->Init(init);
  }
  nn::Linear head("classifier", student->feature_dim(), train.class_count());
  head.ZeroInit();

  std::unique_ptr<FrozenTeacher> teacher;
  std::vector<Connector> connectors;
  std::vector<int> tap_stage;
  if (cfg.distill) {
    teacher = std::make_unique<FrozenTeacher>(FreezeTeacher(LoadBackbone(*phase1, cfg.teacher_source)));
    Rng rng = MakeRng({cfg.seed, kConnectorTag});
    for (const std::string& tap : cfg.taps) {
      const int s = StageIndex(tap);
      if (std::find(tap_stage.begin(), tap_stage.end(), s) != tap_stage.end()) {
        throw ConfigError("stage tap '" + tap + "' listed twice");
      }
      tap_stage.push_back(s);
      connectors.emplace_back("connector." + tap, student->stage_channels()[s],
                              teacher->model().stage_channels()[s], cfg.connector_norm);
      connectors.back().Init(rng);
    }
  }
  const std::uint64_t teacher_digest = teacher ? teacher->Digest() : 0;

  nn::ParameterList params = student->Parameters();
  head.CollectParameters(params);
  for (Connector& c : connectors) {
    for (nn::Parameter* p : c.Parameters()) params.push_back(p);
  }
  nn::Sgd opt(params, cfg.sgd);

  AugmentationPolicy augment = cfg.augment;
  LoaderOptions lo;
  lo.batch_size = cfg.batch_size;
  lo.seed = cfg.seed;
  lo.workers = cfg.workers;
  LabeledLoader loader(train, augment, lo);
  const int per_epoch = loader.BatchesPerEpoch();
  const ScheduleConfig schedule = cfg.schedule();
  const int stages = static_cast<int>(student->stage_channels().size());

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = LrAt(schedule, epoch);
    loader.StartEpoch(epoch);
    double epoch_loss = 0.0;
    int correct = 0, seen = 0;
    while (std::optional<LabeledBatch> batch = loader.Next()) {
      opt.ZeroGrad();
      std::vector<Tensor> taps;
      const Tensor pooled =
          student->Forward(batch->images, nn::Mode::kTrain, cfg.distill ? &taps : nullptr);
      const Tensor logits = head.Forward(pooled, nn::Mode::kTrain);
      Matrix d_logits;
      const double ce = CrossEntropyLoss(ToMatrix(logits), batch->labels, &d_logits);
      double distill = 0.0;
      std::vector<Tensor> d_taps;
      if (cfg.distill) {
        const std::vector<Tensor> t_taps = teacher->Forward(batch->images);
        FeatureMapSet features;
        for (int s : tap_stage) {
          features.push_back({t_taps[s].cast<double>(), taps[s].cast<double>()});
        }
        std::vector<TensorD> grads;
        distill = DistillLoss(features, connectors, nn::Mode::kTrain, &grads);
        d_taps.resize(static_cast<std::size_t>(stages));
        for (std::size_t i = 0; i < tap_stage.size(); ++i) {
          TensorD& g = grads[i];
          for (double& v : g.values()) v *= cfg.loss.distill_weight;
          d_taps[tap_stage[i]] = g.cast<float>();
        }
      }
      const double total = CombinedStudentLoss(ce, distill, cfg.loss);
      StepMetrics m;
      m.phase = "phase2";
      m.epoch = epoch;
      m.step = step;
      m.lr = lr;
      m.loss_total = total;
      m.loss_ce = ce;
      if (cfg.distill) m.loss_distill = distill;
      if (!std::isfinite(total)) AbortNonFinite(hooks, m);
      correct += static_cast<int>(std::lround(Top1(logits, batch->labels) * batch->labels.size()));
      seen += static_cast<int>(batch->labels.size());
      const Tensor d_pooled = head.Backward(ToTensor2(d_logits));
      student->Backward(d_pooled, d_taps);
      opt.Step(lr);
      Emit(hooks, m);
      epoch_loss += total;
      ++step;
    }
    std::map<std::string, double> summary{{"loss_mean", epoch_loss / per_epoch},
                                          {"train_top1", seen ? double(correct) / seen : 0.0}};
    if (val) summary["top1"] = EvaluateTop1(*student, head, *val, cfg.eval);
    if (hooks.metrics) hooks.metrics->LogEpoch("phase2", epoch, summary);
    if (hooks.on_epoch) hooks.on_epoch("phase2", epoch, summary["loss_mean"]);
  }

  if (teacher && teacher->Digest() != teacher_digest) {
    throw Error("teacher parameters changed during phase 2");
  }
  Checkpoint ck;
  cfg.ToConfig(ck.config);
  ck.PutState("model.", student->State());
  nn::StateList head_state;
  head.CollectState(head_state);
  ck.PutState("", head_state);
  for (Connector& c : connectors) ck.PutState("", c.State());
  ck.PutState("optim.", opt.State());
  ck.meta["distill"] = cfg.distill ? "true" : "false";
  ck.meta["init"] = phase1 ? "phase1" : "scratch";
  if (teacher) {
    ck.meta["teacher_digest_before"] = Hex(teacher_digest);
    ck.meta["teacher_digest_after"] = Hex(teacher->Digest());
  }
  FillMeta(ck, "phase2", cfg.epochs - 1, step, hooks);
  return ck;
}

Checkpoint TrainSupervised(Phase2Config cfg, const LabeledImageSet& train,
                           const TrainHooks& hooks, const LabeledImageSet* val) {
  cfg.distill = false;
  return FinetunePhase2(cfg, train, nullptr, hooks, val);
}

// ---------------------------------------------------------------------------

Tensor ExtractFeatures(nn::ResNet& backbone, const LabeledImageSet& data,
                       const AugmentationPolicy& eval, int batch_size) {
  if (eval.mode != AugmentMode::kEval) throw ConfigError("features need an eval policy");
  LoaderOptions lo;
  lo.batch_size = batch_size;
  lo.shuffle = false;
  lo.drop_last = false;
  lo.workers = 0;
  LabeledLoader loader(data, eval, lo);
  loader.StartEpoch(0);
  Tensor out({data.size(), backbone.feature_dim()});
  int row = 0;
  while (std::optional<LabeledBatch> b = loader.Next()) {
    const Tensor f = backbone.Forward(b->images, nn::Mode::kInference);
    std::copy_n(f.data(), f.size(), out.data() + static_cast<std::size_t>(row) * out.dim(1));
    row += f.dim(0);
  }
  return out;
}

double Top1(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int>(labels.size())) {
    throw ShapeError("logits " + ShapeString(logits.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) return 0.0;
  const int c = logits.dim(1);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float* row = logits.data() + i * c;
    correct += (std::max_element(row, row + c) - row) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / labels.size();
}

double EvaluateTop1(nn::ResNet& backbone, nn::Linear& head, const LabeledImageSet& data,
                    const AugmentationPolicy& eval, int batch_size) {
  if (data.size() == 0) throw ValidationError("cannot evaluate on an empty set");
  const Tensor features = ExtractFeatures(backbone, data, eval, batch_size);
  return Top1(head.Forward(features, nn::Mode::kInference), data.labels());
}

double EvaluateTop1(const Checkpoint& ckpt, const LabeledImageSet& data,
                    const AugmentationPolicy& eval) {
  Classifier model = LoadClassifier(ckpt);
  return EvaluateTop1(*model.backbone, model.head, data, eval);
}

ProbeResult LinearProbe(nn::ResNet& backbone, const LabeledImageSet& train,
                        const LabeledImageSet& val, const ProbeConfig& cfg,
                        MetricsLog* metrics) {
  cfg.Validate();
  if (train.size() == 0 || val.size() == 0) throw ValidationError("probe needs data");
  const Matrix x_train = ToMatrix(ExtractFeatures(backbone, train, cfg.eval));
  const Matrix x_val = ToMatrix(ExtractFeatures(backbone, val, cfg.eval));
  const int n = static_cast<int>(x_train.rows()), f = static_cast<int>(x_train.cols());
  const int classes = train.class_count();

  const Eigen::RowVectorXd mean = x_train.colwise().mean();
  Eigen::RowVectorXd scale =
      ((x_train.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  for (int j = 0; j < f; ++j) scale(j) = scale(j) > 1e-6 ? scale(j) : 1.0;
  const Matrix z = (x_train.rowwise() - mean).array().rowwise() / scale.array();

  Matrix w = Matrix::Zero(classes, f), vw = Matrix::Zero(classes, f);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(classes), vb = b;
  ScheduleConfig schedule;
  schedule.kind = LrSchedule::kCosine;
  schedule.base_lr = cfg.lr;
  schedule.epochs = cfg.epochs;
  LoaderOptions lo;
  lo.batch_size = cfg.batch_size;
  lo.seed = DeriveSeed({cfg.seed, kProbeTag});
  lo.drop_last = false;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = LrAt(schedule, epoch);
    double epoch_loss = 0.0;
    const auto batches = EpochBatches(n, lo, epoch);
    for (const std::vector<int>& idx : batches) {
      const int m = static_cast<int>(idx.size());
      Matrix xb(m, f);
      std::vector<int> yb(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        xb.row(i) = z.row(idx[i]);
        yb[i] = train.label(idx[i]);
      }
      const Matrix logits = (xb * w.transpose()).rowwise() + b;
      Matrix d_logits;
      epoch_loss += CrossEntropyLoss(logits, yb, &d_logits);
      const Matrix gw = d_logits.transpose() * xb + cfg.weight_decay * w;
      const Eigen::RowVectorXd gb = d_logits.colwise().sum();
      vw = cfg.momentum * vw + gw;
      vb = cfg.momentum * vb + gb;
      w -= lr * vw;
      b -= lr * vb;
    }
    if (metrics) {
      metrics->LogEpoch("probe", epoch, {{"loss_mean", epoch_loss / batches.size()}});
    }
  }

  // Fold the standardization into the head so it acts on raw features.
  const Matrix w_raw = w.array().rowwise() / scale.array();
  const Eigen::RowVectorXd b_raw = b - (w_raw * mean.transpose()).transpose();
  ProbeResult result;
  result.head = nn::Linear("classifier", f, classes);
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < f; ++j) {
      result.head.weight.value[static_cast<std::size_t>(c) * f + j] = static_cast<float>(w_raw(c, j));
    }
    result.head.bias.value[c] = static_cast<float>(b_raw(c));
  }
  result.train_top1 = Top1(result.head.Forward(ToTensor2(x_train), nn::Mode::kInference),
                           train.labels());
  result.val_top1 =
      Top1(result.head.Forward(ToTensor2(x_val), nn::Mode::kInference), val.labels());
  if (metrics) {
    metrics->LogEpoch("probe", cfg.epochs - 1,
                      {{"train_top1", result.train_top1}, {"top1", result.val_top1}});
  }
  return result;
}

}  // namespace vprior
