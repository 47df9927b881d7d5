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

#ifndef VPRIOR_LOSSES_H_
#define VPRIOR_LOSSES_H_

#include <span>

#include <Eigen/Core>

namespace vprior {

// Row-major so that one row is one embedding.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Maximum deviation of an embedding norm from 1 accepted by the contrastive
// losses and the negative queue.
inline constexpr double kUnitNormTolerance = 1e-5;

// One contrastive step: B queries, their B positive keys, and N negative keys
// shared by every query. All rows are unit norm; similarities are plain dot
// products.
struct ContrastiveBatch {
  Matrix queries;    // B x D
  Matrix positives;  // B x D
  Matrix negatives;  // N x D
};

// Throws ShapeError on inconsistent dimensions (or B < 1, N < 1, D < 2) and
// ValidationError when a row is not unit norm.
void ValidateContrastiveBatch(const ContrastiveBatch& batch);

struct ContrastiveLossConfig {
  double temperature = 0.2;
  // Subtracted from the positive similarity before scaling. Must be in [0, 1).
  double margin = 0.6;

  void Validate() const;
};

struct Phase2LossConfig {
  // Weight of the feature-distillation term in the student objective.
  double distill_weight = 1e-4;

  void Validate() const;
};

// Gradients of a contrastive loss with respect to each input matrix.
struct ContrastiveGradients {
  Matrix queries;
  Matrix positives;
  Matrix negatives;
};

// Batch mean of -log softmax over {q.k+ / t, q.k-_1 / t, ..., q.k-_N / t},
// evaluated at the positive entry. cfg.margin is ignored. When `grad` is
// non-null it receives d(loss)/d(inputs).
double InfoNceLoss(const ContrastiveBatch& batch,
                   const ContrastiveLossConfig& cfg,
                   ContrastiveGradients* grad = nullptr);

// InfoNceLoss with the positive logit replaced by (q.k+ - margin) / t in both
// numerator and denominator. Equal to InfoNceLoss at margin 0 and strictly
// increasing in the margin.
double MarginInfoNceLoss(const ContrastiveBatch& batch,
                         const ContrastiveLossConfig& cfg,
                         ContrastiveGradients* grad = nullptr);

// Batch mean of -log softmax(logits)[label]. Labels must lie in [0, C).
double CrossEntropyLoss(const Matrix& logits, std::span<const int> labels,
                        Matrix* d_logits = nullptr);

// ce + distill_weight * distill.
double CombinedStudentLoss(double ce, double distill,
                           const Phase2LossConfig& cfg);

}  // namespace vprior

#endif  // VPRIOR_LOSSES_H_
