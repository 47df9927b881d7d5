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

#include "vprior/losses.h"

#include <cmath>
#include <string>

#include "vprior/errors.h"

namespace vprior {
namespace {

void CheckUnitRows(const Matrix& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (!(std::abs(norm - 1.0) <= kUnitNormTolerance)) {
      throw ValidationError(std::string(what) + " row " + std::to_string(i) +
                            " has norm " + std::to_string(norm) +
                            ", expected unit norm");
    }
  }
}

// Shared body of both contrastive losses; `margin` is already resolved.
double ContrastiveLoss(const ContrastiveBatch& batch, double temperature,
                       double margin, ContrastiveGradients* grad) {
  ValidateContrastiveBatch(batch);
  const Matrix& q = batch.queries;
  const Matrix& kpos = batch.positives;
  const Matrix& kneg = batch.negatives;
  const Eigen::Index b = q.rows();
  const Eigen::Index n = kneg.rows();
  const double inv_t = 1.0 / temperature;

  // B x N negative logits and B positive logits.
  const Matrix neg_logits = (q * kneg.transpose()) * inv_t;
  const Eigen::VectorXd pos_logits =
      ((q.cwiseProduct(kpos)).rowwise().sum().array() - margin) * inv_t;

  // Per-row softmax weights, filled only when gradients are requested.
  Matrix neg_weight;
  Eigen::VectorXd pos_weight;
  if (grad) {
    neg_weight.resize(b, n);
    pos_weight.resize(b);
  }

  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double lp = pos_logits(i);
    const double mx = std::max(lp, neg_logits.row(i).maxCoeff());
    double sum = std::exp(lp - mx);
    for (Eigen::Index j = 0; j < n; ++j) sum += std::exp(neg_logits(i, j) - mx);
    const double lse = mx + std::log(sum);
    total += lse - lp;
    if (grad) {
      pos_weight(i) = std::exp(lp - lse) - 1.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        neg_weight(i, j) = std::exp(neg_logits(i, j) - lse);
      }
    }
  }
  const double inv_b = 1.0 / static_cast<double>(b);

  if (grad) {
    const double scale = inv_t * inv_b;
    grad->queries = (kpos.array().colwise() * pos_weight.array()).matrix() +
                    neg_weight * kneg;
    grad->queries *= scale;
    grad->positives =
        (q.array().colwise() * pos_weight.array()).matrix() * scale;
    grad->negatives = neg_weight.transpose() * q * scale;
  }
  return total * inv_b;
}

}  // namespace

void ValidateContrastiveBatch(const ContrastiveBatch& batch) {
  const Matrix& q = batch.queries;
  const Matrix& kpos = batch.positives;
  const Matrix& kneg = batch.negatives;
  if (q.rows() < 1) throw ShapeError("contrastive batch needs B >= 1");
  if (kneg.rows() < 1) throw ShapeError("contrastive batch needs N >= 1");
  if (q.cols() < 2) throw ShapeError("contrastive batch needs D >= 2");
  if (kpos.rows() != q.rows() || kpos.cols() != q.cols()) {
    throw ShapeError("positives must match queries (" +
                     std::to_string(q.rows()) + "x" + std::to_string(q.cols()) +
                     "), got " + std::to_string(kpos.rows()) + "x" +
                     std::to_string(kpos.cols()));
  }
  if (kneg.cols() != q.cols()) {
    throw ShapeError("negatives have dimension " + std::to_string(kneg.cols()) +
                     ", queries have " + std::to_string(q.cols()));
  }
  CheckUnitRows(q, "query");
  CheckUnitRows(kpos, "positive");
  CheckUnitRows(kneg, "negative");
}

void ContrastiveLossConfig::Validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("temperature must be positive");
  }
  if (!(margin >= 0.0 && margin < 1.0)) {
    throw ValidationError("margin must lie in [0, 1)");
  }
}

void Phase2LossConfig::Validate() const {
  if (!(distill_weight >= 0.0) || !std::isfinite(distill_weight)) {
    throw ValidationError("distill weight must be nonnegative");
  }
}

double InfoNceLoss(const ContrastiveBatch& batch,
                   const ContrastiveLossConfig& cfg,
                   ContrastiveGradients* grad) {
  cfg.Validate();
  return ContrastiveLoss(batch, cfg.temperature, 0.0, grad);
}

double MarginInfoNceLoss(const ContrastiveBatch& batch,
                         const ContrastiveLossConfig& cfg,
                         ContrastiveGradients* grad) {
  cfg.Validate();
  return ContrastiveLoss(batch, cfg.temperature, cfg.margin, grad);
}

double CrossEntropyLoss(const Matrix& logits, std::span<const int> labels,
                        Matrix* d_logits) {
  const Eigen::Index b = logits.rows();
  const Eigen::Index c = logits.cols();
  if (b < 1 || c < 1) throw ShapeError("cross entropy needs a nonempty batch");
  if (static_cast<Eigen::Index>(labels.size()) != b) {
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b) + " rows of logits");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw ValidationError("label " + std::to_string(y) +
                            " out of range [0, " + std::to_string(c) + ")");
    }
  }
  if (d_logits) d_logits->resize(b, c);
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse =
        mx + std::log((logits.row(i).array() - mx).exp().sum());
    const int y = labels[static_cast<std::size_t>(i)];
    total += lse - logits(i, y);
    if (d_logits) {
      d_logits->row(i) = (logits.row(i).array() - lse).exp() * inv_b;
      (*d_logits)(i, y) -= inv_b;
    }
  }
  return total * inv_b;
}

double CombinedStudentLoss(double ce, double distill,
                           const Phase2LossConfig& cfg) {
  cfg.Validate();
  if (ce < 0.0 || distill < 0.0) {
    throw ValidationError("loss components must be nonnegative");
  }
  return ce + cfg.distill_weight * distill;
}

}  // namespace vprior
