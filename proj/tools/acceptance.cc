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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
//
//   vprior_acceptance --suite fast     loss, gradient, state, degenerate and
//                                      determinism checks (minutes)
//   vprior_acceptance --suite trends   desk-scale ablation orderings (hours)

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ablation.h"
#include "run_config.h"
#include "vprior/distiller.h"
#include "vprior/encoder_state.h"
#include "vprior/errors.h"
#include "vprior/log.h"
#include "vprior/losses.h"
#include "vprior/random.h"
#include "vprior/synthetic.h"
#include "vprior/trainer.h"

namespace vprior::acceptance {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ----------------------------------------------------------------------------
// Tolerances and sizes.

constexpr int kLossBatches = 1000;
constexpr double kLossRelTol = 1e-6;
constexpr double kMarginZeroRelTol = 1e-12;
constexpr double kLossLimitSeconds = 60;

constexpr int kGradientInstances = 24;
constexpr double kGradientRelTol = 1e-4;
constexpr double kFiniteDifferenceStep = 1e-6;
constexpr double kGradientLimitSeconds = 120;

constexpr int kQueueSequences = 1000;
constexpr int kMomentumSteps = 200;
constexpr double kStateLimitSeconds = 300;

constexpr double kDegenerateRelTol = 1e-6;
constexpr double kDegenerateLimitSeconds = 600;

constexpr double kDeterminismRelTol = 1e-6;
constexpr double kDeterminismLimitSeconds = 600;

constexpr double kNegativesLimitSeconds = 4 * 3600;
constexpr double kPipelineLimitSeconds = 3 * 3600;

// ----------------------------------------------------------------------------

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Report {
 public:
  explicit Report(std::ostream& out) : out_(out) {}

  void Run(int id, const std::string& name, double limit_seconds,
           const std::function<Outcome()>& check) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    const bool in_time = seconds <= limit_seconds;
    const bool pass = o.pass && in_time;
    char timing[96];
    std::snprintf(timing, sizeof(timing), "%.1f s of %.0f s%s", seconds, limit_seconds,
                  in_time ? "" : " (over time limit)");
    out_ << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " ["
         << timing << "]" << std::endl;
    all_pass_ &= pass;
  }

  bool all_pass() const { return all_pass_; }

 private:
  std::ostream& out_;
  bool all_pass_ = true;
};

std::string Sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

std::string Fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

double RelDiff(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

int UniformInt(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Matrix UnitRows(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = Normal(rng, 0.0, 1.0);
    m.row(i).normalize();
  }
  return m;
}

// -log softmax at the positive, summed term by term in long double.
double BruteForceLoss(const ContrastiveBatch& b, double tau, double margin) {
  long double total = 0;
  for (Eigen::Index i = 0; i < b.queries.rows(); ++i) {
    long double pos = 0;
    for (Eigen::Index d = 0; d < b.queries.cols(); ++d) {
      pos += static_cast<long double>(b.queries(i, d)) * b.positives(i, d);
    }
    const long double l0 = (pos - margin) / tau;
    long double denom = std::exp(l0);
    for (Eigen::Index j = 0; j < b.negatives.rows(); ++j) {
      long double dot = 0;
      for (Eigen::Index d = 0; d < b.queries.cols(); ++d) {
        dot += static_cast<long double>(b.queries(i, d)) * b.negatives(j, d);
      }
      denom += std::exp(dot / tau);
    }
    total += std::log(denom) - l0;
  }
  return static_cast<double>(total / b.queries.rows());
}

// ----------------------------------------------------------------------------
// [1] Loss correctness.

Outcome CheckLosses() {
  Rng rng = MakeRng({1001});
  double worst_plain = 0, worst_margin = 0, worst_zero = 0;
  for (int t = 0; t < kLossBatches; ++t) {
    const int b = UniformInt(rng, 1, 16), n = UniformInt(rng, 1, 64), d = UniformInt(rng, 2, 32);
    ContrastiveLossConfig cfg;
    cfg.temperature = Uniform(rng, 0.05, 1.0);
    cfg.margin = Uniform(rng, 0.0, 0.95);
    const ContrastiveBatch batch{UnitRows(rng, b, d), UnitRows(rng, b, d), UnitRows(rng, n, d)};
    worst_plain = std::max(worst_plain, RelDiff(InfoNceLoss(batch, cfg),
                                                BruteForceLoss(batch, cfg.temperature, 0.0)));
    worst_margin = std::max(worst_margin, RelDiff(MarginInfoNceLoss(batch, cfg),
                                                  BruteForceLoss(batch, cfg.temperature, cfg.margin)));
    ContrastiveLossConfig zero = cfg;
    zero.margin = 0.0;
    worst_zero = std::max(worst_zero, RelDiff(MarginInfoNceLoss(batch, zero), InfoNceLoss(batch, cfg)));
  }
  const bool pass = worst_plain <= kLossRelTol && worst_margin <= kLossRelTol &&
                    worst_zero <= kMarginZeroRelTol;
  return {pass, std::to_string(kLossBatches) + " batches; max rel err plain " + Sci(worst_plain) +
                    ", margin " + Sci(worst_margin) + " (tol " + Sci(kLossRelTol) +
                    "); margin=0 vs plain " + Sci(worst_zero) + " (tol " + Sci(kMarginZeroRelTol) +
                    ")"};
}

// ----------------------------------------------------------------------------
// [2] Gradient correctness.

// ||a - n|| / max(||a||, ||n||) over all entries of one instance.
double VectorRelErr(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

double MarginGradientError(Rng& rng) {
  const int b = UniformInt(rng, 2, 6), n = UniformInt(rng, 4, 16), d = UniformInt(rng, 4, 12);
  ContrastiveLossConfig cfg;
  cfg.temperature = Uniform(rng, 0.1, 0.5);
  cfg.margin = Uniform(rng, 0.0, 0.8);
  ContrastiveBatch batch{UnitRows(rng, b, d), UnitRows(rng, b, d), UnitRows(rng, n, d)};
  ContrastiveGradients grads;
  MarginInfoNceLoss(batch, cfg, &grads);
  std::vector<double> analytic, numeric;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < d; ++j) {
      const double keep = batch.queries(i, j);
      batch.queries(i, j) = keep + kFiniteDifferenceStep;
      const double up = MarginInfoNceLoss(batch, cfg);
      batch.queries(i, j) = keep - kFiniteDifferenceStep;
      const double down = MarginInfoNceLoss(batch, cfg);
      batch.queries(i, j) = keep;
      analytic.push_back(grads.queries(i, j));
      numeric.push_back((up - down) / (2 * kFiniteDifferenceStep));
    }
  }
  return VectorRelErr(analytic, numeric);
}

TensorD RandomMap(Rng& rng, std::vector<int> shape) {
  TensorD t(std::move(shape));
  for (double& v : t.values()) v = Normal(rng, 0.0, 1.0);
  return t;
}

double DistillGradientError(Rng& rng, bool normalize) {
  const int n = UniformInt(rng, 2, 3);
  FeatureMapSet fs;
  std::vector<Connector> cs;
  const int stages = UniformInt(rng, 1, 3);
  for (int s = 0; s < stages; ++s) {
    const int cs_ch = UniformInt(rng, 2, 6), ct_ch = UniformInt(rng, 2, 6), hw = UniformInt(rng, 1, 3);
    fs.push_back({RandomMap(rng, {ct_ch, n, hw, hw}), RandomMap(rng, {cs_ch, n, hw, hw})});
    cs.emplace_back("c" + std::to_string(s), cs_ch, ct_ch, normalize);
    for (float& w : cs.back().weight.value.values()) w = static_cast<float>(Normal(rng, 0.0, 0.5));
  }
  std::vector<TensorD> grads;
  DistillLoss(fs, cs, nn::Mode::kTrain, &grads);
  std::vector<double> analytic, numeric;
  for (int s = 0; s < stages; ++s) {
    for (std::size_t i = 0; i < fs[s].student.size(); ++i) {
      const double keep = fs[s].student[i];
      fs[s].student[i] = keep + kFiniteDifferenceStep;
      const double up = DistillLoss(fs, cs, nn::Mode::kNoGrad);
      fs[s].student[i] = keep - kFiniteDifferenceStep;
      const double down = DistillLoss(fs, cs, nn::Mode::kNoGrad);
      fs[s].student[i] = keep;
      analytic.push_back(grads[s][i]);
      numeric.push_back((up - down) / (2 * kFiniteDifferenceStep));
    }
  }
  return VectorRelErr(analytic, numeric);
}

Outcome CheckGradients() {
  Rng rng = MakeRng({2002});
  double worst_q = 0, worst_fs = 0;
  for (int t = 0; t < kGradientInstances; ++t) {
    worst_q = std::max(worst_q, MarginGradientError(rng));
    worst_fs = std::max(worst_fs, DistillGradientError(rng, t % 2 == 1));
  }
  const bool pass = worst_q < kGradientRelTol && worst_fs < kGradientRelTol;
  return {pass, std::to_string(kGradientInstances) + " instances each; max rel err d/dq " +
                    Sci(worst_q) + ", d/dF_s " + Sci(worst_fs) + " (tol " + Sci(kGradientRelTol) +
                    ", central step " + Sci(kFiniteDifferenceStep) + ")"};
}

// ----------------------------------------------------------------------------
// Small on-disk dataset shared by criteria 3, 6 and 7.

struct ToyData {
  DatasetManifest manifest;
  UnlabeledImageSet unlabeled;
  LabeledImageSet labeled;
};

ToyData MakeToyData(const fs::path& dir) {
  ShapesDatasetConfig d;
  d.classes = 5;
  d.train_per_class = 8;
  d.val_per_class = 2;
  d.image_size = 24;
  d.seed = 7;
  if (!fs::exists(dir / "train")) WriteShapesDataset(dir, d);
  DatasetManifest m = LoadManifest(dir, "train");
  UnlabeledImageSet u = UnlabeledImageSet::FromManifest(m);
  LabeledImageSet l = LabeledImageSet::FromManifest(m);
  return {std::move(m), std::move(u), std::move(l)};
}

nn::BackboneConfig ToyBackbone() {
  nn::BackboneConfig b;
  b.depth = 10;
  b.width = 8;
  return b;
}

Phase1Config ToyPhase1(const ToyData& data) {
  Phase1Config c;
  c.epochs = 2;
  c.lr_drops = {};
  c.batch_size = 8;
  c.queue_size = 32;
  c.embed_dim = 16;
  c.key_momentum = 0.99;
  c.workers = 1;
  c.seed = 11;
  c.backbone = ToyBackbone();
  c.augment = AugmentationPolicy::TwoView(20);
  c.augment.stats = data.manifest.stats;
  return c;
}

Phase2Config ToyPhase2(const ToyData& data) {
  Phase2Config c;
  c.epochs = 3;
  c.batch_size = 8;
  c.workers = 1;
  c.seed = 12;
  c.backbone = ToyBackbone();
  c.loss.distill_weight = 1.0;
  c.augment = AugmentationPolicy::SupervisedTrain(20);
  c.augment.stats = data.manifest.stats;
  c.eval = AugmentationPolicy::Eval(20);
  c.eval.stats = data.manifest.stats;
  return c;
}

std::string Hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ----------------------------------------------------------------------------
// [3] State-machine invariants.

struct MomentumResult {
  long steps = 0;
  long mismatches = 0;
};

MomentumResult CheckMomentum(Rng& rng) {
  MomentumResult r;
  for (const double eta : {0.0, 0.5, 0.9, 0.99, 0.999, 1.0}) {
    std::vector<nn::Parameter> q, k;
    const int count = UniformInt(rng, 1, 6);
    for (int i = 0; i < count; ++i) {
      const int size = UniformInt(rng, 1, 300);
      q.emplace_back("p" + std::to_string(i), std::vector<int>{size});
      k.emplace_back("p" + std::to_string(i), std::vector<int>{size});
      for (float& v : q.back().value.values()) v = static_cast<float>(Normal(rng, 0, 1));
      for (float& v : k.back().value.values()) v = static_cast<float>(Normal(rng, 0, 1));
    }
    nn::ParameterList ql, kl;
    for (int i = 0; i < count; ++i) {
      ql.push_back(&q[i]);
      kl.push_back(&k[i]);
    }
    MomentumEncoderPair pair(ql, kl, eta);
    for (int step = 0; step < kMomentumSteps; ++step) {
      for (nn::Parameter& p : q) {
        for (float& v : p.value.values()) v += static_cast<float>(Normal(rng, 0, 0.1));
      }
      std::vector<std::vector<float>> expected;
      for (int i = 0; i < count; ++i) {
        std::vector<float> e(k[i].value.size());
        for (std::size_t j = 0; j < e.size(); ++j) {
          e[j] = static_cast<float>(eta * static_cast<double>(k[i].value[j]) +
                                    (1.0 - eta) * static_cast<double>(q[i].value[j]));
        }
        expected.push_back(std::move(e));
      }
      pair.Update();
      ++r.steps;
      for (int i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < expected[i].size(); ++j) {
          if (k[i].value[j] != expected[i][j]) ++r.mismatches;
        }
      }
    }
  }
  return r;
}

// Replays random enqueue sequences against a deque oracle.
long CheckQueues(Rng& rng) {
  long failures = 0;
  for (int seq = 0; seq < kQueueSequences; ++seq) {
    const int capacity = UniformInt(rng, 1, 48), dim = UniformInt(rng, 2, 6);
    NegativeQueue queue(capacity, dim);
    std::deque<Eigen::RowVectorXd> oracle;
    const int ops = UniformInt(rng, 1, 30);
    for (int op = 0; op < ops; ++op) {
      const Matrix keys = UnitRows(rng, UniformInt(rng, 1, capacity), dim);
      queue.Enqueue(keys);
      for (Eigen::Index i = 0; i < keys.rows(); ++i) {
        oracle.push_back(keys.row(i).normalized());
        if (static_cast<int>(oracle.size()) > capacity) oracle.pop_front();
      }
      if (UniformInt(rng, 0, 4) == 0) queue = NegativeQueue::FromState(queue.state());
      if (queue.count() != static_cast<int>(oracle.size())) {
        ++failures;
        break;
      }
      if (!queue.ready()) {
        bool threw = false;
        try {
          queue.Snapshot();
        } catch (const NotReadyError&) {
          threw = true;
        }
        failures += !threw;
        continue;
      }
      const Matrix snap = queue.Snapshot();
      for (int i = 0; i < capacity; ++i) {
        if ((snap.row(i) - oracle[i]).cwiseAbs().maxCoeff() > 1e-15) {
          ++failures;
          break;
        }
      }
    }
  }
  return failures;
}

Outcome CheckState(const fs::path& work) {
  Rng rng = MakeRng({3003});
  const MomentumResult m = CheckMomentum(rng);
  const long queue_failures = CheckQueues(rng);

  const ToyData data = MakeToyData(work / "toy");
  const Checkpoint phase1 = PretrainPhase1(ToyPhase1(data), data.unlabeled);
  const std::uint64_t before = FreezeTeacher(LoadBackbone(phase1, "query")).Digest();
  const Checkpoint phase2 = FinetunePhase2(ToyPhase2(data), data.labeled, &phase1);
  const std::string logged_before = phase2.MetaOr("teacher_digest_before", "");
  const std::string logged_after = phase2.MetaOr("teacher_digest_after", "");
  const bool teacher_ok = logged_before == Hex(before) && logged_after == Hex(before);

  const bool pass = m.mismatches == 0 && queue_failures == 0 && teacher_ok;
  return {pass, "momentum " + std::to_string(m.steps) + " steps, " + std::to_string(m.mismatches) +
                    " elementwise mismatches; queue " + std::to_string(kQueueSequences) +
                    " replayed sequences, " + std::to_string(queue_failures) +
                    " failures; teacher digest " + logged_before + " -> " + logged_after +
                    (teacher_ok ? " (unchanged)" : " (CHANGED)")};
}

// ----------------------------------------------------------------------------
// [6] Degenerate equivalence and [7] determinism.

std::vector<double> StepLosses(const std::function<void(MetricsLog&)>& run, const std::string& phase) {
  MetricsLog log;
  run(log);
  return log.TotalLosses(phase);
}

double MaxRelDiff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, RelDiff(a[i], b[i]));
  return worst;
}

TrainHooks Hooks(MetricsLog& log) {
  TrainHooks h;
  h.metrics = &log;
  return h;
}

Outcome CheckDegenerate(const fs::path& work) {
  const ToyData data = MakeToyData(work / "toy");
  const Checkpoint phase1 = PretrainPhase1(ToyPhase1(data), data.unlabeled);
  Phase2Config zero = ToyPhase2(data);
  zero.loss.distill_weight = 0.0;
  Phase2Config plain = zero;
  plain.distill = false;
  const std::vector<double> a = StepLosses(
      [&](MetricsLog& log) { FinetunePhase2(zero, data.labeled, &phase1, Hooks(log)); }, "phase2");
  const std::vector<double> b = StepLosses(
      [&](MetricsLog& log) { FinetunePhase2(plain, data.labeled, &phase1, Hooks(log)); }, "phase2");
  const double worst = MaxRelDiff(a, b);
  return {worst <= kDegenerateRelTol,
          std::to_string(a.size()) + " step losses; max rel diff " + Sci(worst) + " (tol " +
              Sci(kDegenerateRelTol) + ")"};
}

bool FileRoundTrip(const Checkpoint& ckpt, const fs::path& dir, const std::string& name) {
  const fs::path a = dir / (name + ".a.ckpt"), b = dir / (name + ".b.ckpt");
  ckpt.Save(a);
  Checkpoint::Load(a).Save(b);
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  return bytes(a) == bytes(b) && Checkpoint::Deserialize(ckpt.Serialize()).Serialize() == ckpt.Serialize();
}

Outcome CheckDeterminism(const fs::path& work) {
  const ToyData data = MakeToyData(work / "toy");
  const Phase1Config p1 = ToyPhase1(data);
  Checkpoint first;
  const std::vector<double> a = StepLosses(
      [&](MetricsLog& log) { first = PretrainPhase1(p1, data.unlabeled, Hooks(log)); }, "phase1");
  const std::vector<double> b = StepLosses(
      [&](MetricsLog& log) { PretrainPhase1(p1, data.unlabeled, Hooks(log)); }, "phase1");
  const Phase2Config p2 = ToyPhase2(data);
  Checkpoint tuned;
  const std::vector<double> c = StepLosses(
      [&](MetricsLog& log) { tuned = FinetunePhase2(p2, data.labeled, &first, Hooks(log)); }, "phase2");
  const std::vector<double> d = StepLosses(
      [&](MetricsLog& log) { FinetunePhase2(p2, data.labeled, &first, Hooks(log)); }, "phase2");
  const double worst1 = MaxRelDiff(a, b), worst2 = MaxRelDiff(c, d);
  fs::create_directories(work / "ckpt");
  const bool bytes_ok =
      FileRoundTrip(first, work / "ckpt", "phase1") && FileRoundTrip(tuned, work / "ckpt", "phase2");
  const bool pass = worst1 <= kDeterminismRelTol && worst2 <= kDeterminismRelTol && bytes_ok;
  return {pass, "phase1 " + std::to_string(a.size()) + " steps max rel diff " + Sci(worst1) +
                    ", phase2 " + std::to_string(c.size()) + " steps " + Sci(worst2) + " (tol " +
                    Sci(kDeterminismRelTol) + "); checkpoint round trip " +
                    (bytes_ok ? "byte-identical" : "DIFFERS")};
}

// ----------------------------------------------------------------------------
// [4] and [5] Desk-scale trends.

struct TrendSetup {
  FlatConfig cfg;
  cli::RunData data;
  cli::AblationOptions options;
};

TrendSetup LoadTrendSetup(const fs::path& data_root, const fs::path& config, const fs::path& work,
                          const std::vector<std::uint64_t>& seeds, bool parallel) {
  if (!fs::exists(data_root / "train")) {
    Log(LogLevel::kInfo, "writing synthetic dataset to " + data_root.string());
    WriteShapesDataset(data_root, ShapesDatasetConfig{});
  }
  cli::ConfigLayers layers;
  layers.config_file = config;
  layers.command_line.Set("data.root", data_root.string());
  FlatConfig cfg = cli::ResolveConfig(layers);
  cli::RunData data = cli::LoadRunData(cfg);
  cli::AblationOptions options;
  options.seeds = seeds;
  options.parallel = parallel;
  options.cache_dir = work / "phase1_cache";
  return {std::move(cfg), std::move(data), options};
}

Outcome CheckNegatives(TrendSetup& s, const fs::path& work) {
  s.options.work_dir = work / "negatives";
  const std::vector<int> ks{64, 256, 1024};
  const std::vector<double> margins{0.0, 0.6};
  const cli::NegativesTable t = cli::AblateNegatives(s.cfg, s.data, ks, margins, s.options);
  std::ofstream csv(work / "negatives.csv");
  cli::WriteCsv(t, csv);
  const double drop_plain = t.Drop(0.0), drop_margin = t.Drop(0.6);
  std::string cells;
  for (const cli::NegativesCell& c : t.cells) {
    cells += " m=" + FormatDouble(c.margin) + "/K=" + std::to_string(c.negatives) + ":" +
             Fixed(c.median());
  }
  // Drop: median accuracy at the largest K minus median at the smallest K.
  return {drop_margin < drop_plain,
          "drop(K 1024->64) m=0.6 " + Fixed(drop_margin) + " vs m=0 " + Fixed(drop_plain) +
              " (accuracy lost going to the smallest queue; requires m=0.6 < m=0); medians" + cells};
}

Outcome CheckPipeline(TrendSetup& s, const fs::path& work) {
  s.options.work_dir = work / "pipeline";
  const cli::PipelineTable t = cli::AblatePipeline(s.cfg, s.data, s.options);
  std::ofstream csv(work / "pipeline.csv");
  cli::WriteCsv(t, csv);
  const double scratch = t.row(cli::kArmScratch).median();
  const double random_probe = t.row(cli::kArmRandomProbe).median();
  const double probe = t.row(cli::kArmPhase1Probe).median();
  const double finetune = t.row(cli::kArmFinetune).median();
  const double phase2 = t.row(cli::kArmPhase2).median();
  const bool a = probe > random_probe, b = finetune >= probe, c = phase2 >= scratch;
  auto mark = [](bool ok) { return ok ? " ok" : " VIOLATED"; };
  return {a && b && c,
          "medians: phase1+probe " + Fixed(probe) + " > random-init probe " + Fixed(random_probe) +
              mark(a) + "; phase1+finetune " + Fixed(finetune) + " >= phase1+probe " +
              Fixed(probe) + mark(b) + "; phase1+phase2 " + Fixed(phase2) +
              " >= supervised scratch " + Fixed(scratch) + mark(c)};
}

}  // namespace
}  // namespace vprior::acceptance

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  using namespace vprior::acceptance;
  CLI::App app{"Acceptance suite", "vprior_acceptance"};
  std::string suite = "fast";
  std::string work = "acceptance_work";
  std::string data_root;
  std::string config = VPRIOR_DESK_CONFIG;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool parallel = false;
  bool quiet = false;
  app.add_option("--suite", suite, "fast, trends or all")
      ->check(CLI::IsMember({"fast", "trends", "all"}))
      ->capture_default_str();
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--data", data_root, "Desk-scale dataset root (generated if absent)");
  app.add_option("--config", config, "Desk-scale config")->capture_default_str();
  app.add_option("--seeds", seeds, "Seeds for the trend criteria")->delimiter(',');
  app.add_flag("--parallel", parallel, "Run ablation arms as separate processes");
  app.add_flag("--quiet", quiet, "Suppress progress logging");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  if (quiet) vprior::SetLogSink([](vprior::LogLevel, const std::string&) {});
  const fs::path work_dir = fs::absolute(work);
  fs::create_directories(work_dir);
  if (data_root.empty()) data_root = (work_dir / "shapes10").string();

  Report report(std::cout);
  if (suite == "fast" || suite == "all") {
    report.Run(1, "loss correctness", kLossLimitSeconds, CheckLosses);
    report.Run(2, "gradient correctness", kGradientLimitSeconds, CheckGradients);
    report.Run(3, "state-machine invariants", kStateLimitSeconds,
               [&] { return CheckState(work_dir); });
    report.Run(6, "degenerate equivalence", kDegenerateLimitSeconds,
               [&] { return CheckDegenerate(work_dir); });
    report.Run(7, "determinism and persistence", kDeterminismLimitSeconds,
               [&] { return CheckDeterminism(work_dir); });
  }
  if (suite == "trends" || suite == "all") {
    std::optional<TrendSetup> setup;
    try {
      setup = LoadTrendSetup(data_root, config, work_dir, seeds, parallel);
    } catch (const std::exception& e) {
      std::cerr << "cannot prepare trend criteria: " << e.what() << "\n";
    }
    report.Run(4, "negatives trend (margin less sensitive to K)", kNegativesLimitSeconds, [&] {
      if (!setup) return Outcome{false, "setup failed"};
      return CheckNegatives(*setup, work_dir);
    });
    report.Run(5, "pipeline trend", kPipelineLimitSeconds, [&] {
      if (!setup) return Outcome{false, "setup failed"};
      return CheckPipeline(*setup, work_dir);
    });
  }
  return report.all_pass() ? 0 : 1;
}
