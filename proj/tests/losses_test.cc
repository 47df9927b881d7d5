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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"
#include "vprior/errors.h"

namespace vprior {
namespace {

using testing::GradientError;
using testing::RandomBatch;
using testing::RandomUnitRows;
using testing::RelativeDiff;

// Materializes the full (N+1)-way softmax per row in long double, with no
// shared code with the library path.
double BruteForceContrastive(const ContrastiveBatch& b, double t, double m) {
  long double total = 0;
  for (int i = 0; i < b.queries.rows(); ++i) {
    std::vector<long double> logits;
    long double pos = 0;
    for (int d = 0; d < b.queries.cols(); ++d) {
      pos += static_cast<long double>(b.queries(i, d)) * b.positives(i, d);
    }
    logits.push_back((pos - m) / t);
    for (int j = 0; j < b.negatives.rows(); ++j) {
      long double s = 0;
      for (int d = 0; d < b.queries.cols(); ++d) {
        s += static_cast<long double>(b.queries(i, d)) * b.negatives(j, d);
      }
      logits.push_back(s / t);
    }
    long double denom = 0;
    for (long double l : logits) denom += std::exp(l);
    total += -std::log(std::exp(logits[0]) / denom);
  }
  return static_cast<double>(total / b.queries.rows());
}

double BruteForceCrossEntropy(const Matrix& logits, const std::vector<int>& y) {
  long double total = 0;
  for (int i = 0; i < logits.rows(); ++i) {
    long double denom = 0;
    for (int j = 0; j < logits.cols(); ++j) denom += std::exp((long double)logits(i, j));
    total += -std::log(std::exp((long double)logits(i, y[i])) / denom);
  }
  return static_cast<double>(total / logits.rows());
}

ContrastiveBatch TwoDimBatch() {
  ContrastiveBatch b;
  b.queries = Matrix{{1.0, 0.0}};
  b.positives = Matrix{{1.0, 0.0}};
  b.negatives = Matrix{{0.0, 1.0}};
  return b;
}

TEST(InfoNceLossTest, HandEvaluatedTwoDimensionalCase) {
  ContrastiveLossConfig cfg{.temperature = 1.0, .margin = 0.6};
  EXPECT_NEAR(InfoNceLoss(TwoDimBatch(), cfg), 0.31326, 1e-5);
  EXPECT_NEAR(InfoNceLoss(TwoDimBatch(), cfg), std::log1p(std::exp(-1.0)), 1e-15);
}

TEST(InfoNceLossTest, NegativesEqualToPositiveGiveLogNPlusOne) {
  Rng rng(7);
  for (int n : {1, 3, 17}) {
    for (double t : {0.05, 0.2, 1.0}) {
      Matrix k = RandomUnitRows(rng, 1, 6);
      ContrastiveBatch b{k, k, k.replicate(n, 1)};
      EXPECT_NEAR(InfoNceLoss(b, {.temperature = t, .margin = 0}),
                  std::log(n + 1.0), 1e-12);
    }
  }
}

TEST(InfoNceLossTest, MatchesBruteForceOracle) {
  Rng rng(11);
  ContrastiveBatch b = RandomBatch(rng, 4, 8, 16);
  const double got = InfoNceLoss(b, {.temperature = 0.2, .margin = 0.6});
  EXPECT_LT(RelativeDiff(got, BruteForceContrastive(b, 0.2, 0.0)), 1e-6);
  EXPECT_GT(got, 0.0);
}

TEST(MarginInfoNceLossTest, HandEvaluatedTwoDimensionalCase) {
  ContrastiveLossConfig cfg{.temperature = 1.0, .margin = 0.6};
  EXPECT_NEAR(MarginInfoNceLoss(TwoDimBatch(), cfg), 0.51302, 1e-5);
  EXPECT_NEAR(MarginInfoNceLoss(TwoDimBatch(), cfg), std::log1p(std::exp(-0.4)),
              1e-15);
}

TEST(MarginInfoNceLossTest, ZeroMarginEqualsInfoNce) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    ContrastiveBatch b = RandomBatch(rng, 1 + trial % 7, 2 + trial % 9, 1 + trial % 13);
    ContrastiveLossConfig cfg{.temperature = 0.05 + 0.01 * (trial % 20), .margin = 0.0};
    EXPECT_LE(RelativeDiff(MarginInfoNceLoss(b, cfg), InfoNceLoss(b, cfg)), 1e-12);
  }
}

TEST(MarginInfoNceLossTest, StrictlyIncreasingInMargin) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ContrastiveBatch b = RandomBatch(rng, 3, 8, 10);
    double prev = -1.0;
    for (double m : {0.0, 0.3, 0.6}) {
      const double l = MarginInfoNceLoss(b, {.temperature = 0.2, .margin = m});
      EXPECT_GT(l, prev);
      prev = l;
    }
  }
}

TEST(MarginInfoNceLossTest, MatchesBruteForceOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    ContrastiveBatch b = RandomBatch(rng, 4, 8, 16);
    const double m = 0.1 * (trial % 10);
    EXPECT_LT(RelativeDiff(MarginInfoNceLoss(b, {.temperature = 0.2, .margin = m}),
                           BruteForceContrastive(b, 0.2, m)),
              1e-6);
  }
}

TEST(MarginInfoNceLossTest, GradientMatchesCentralDifferences) {
  Rng rng(17);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    ContrastiveBatch b = RandomBatch(rng, 3, 8, 12);
    const ContrastiveLossConfig cfg{.temperature = 0.2, .margin = 0.6};
    ContrastiveGradients grad;
    MarginInfoNceLoss(b, cfg, &grad);
    for (Matrix* m : {&b.queries, &b.positives, &b.negatives}) {
      const Matrix& g = m == &b.queries     ? grad.queries
                        : m == &b.positives ? grad.positives
                                            : grad.negatives;
      for (int i = 0; i < m->rows(); ++i) {
        for (int j = 0; j < m->cols(); ++j) {
          const double orig = (*m)(i, j);
          (*m)(i, j) = orig + h;
          const double up = MarginInfoNceLoss(b, cfg);
          (*m)(i, j) = orig - h;
          const double down = MarginInfoNceLoss(b, cfg);
          (*m)(i, j) = orig;
          EXPECT_LT(GradientError(g(i, j), (up - down) / (2 * h)), 1e-4)
              << "trial " << trial << " entry " << i << "," << j;
        }
      }
    }
  }
}

// Rotates `v` toward `target` inside their common plane; keeps unit norm.
Eigen::RowVectorXd RotateToward(const Eigen::RowVectorXd& v,
                                const Eigen::RowVectorXd& target, double angle) {
  Eigen::RowVectorXd ortho = target - target.dot(v) * v;
  ortho.normalize();
  const double cur = std::acos(std::clamp(v.dot(target), -1.0, 1.0));
  const double a = std::min(angle, cur);
  return std::cos(a) * v + std::sin(a) * ortho;
}

TEST(MarginInfoNceLossTest, MonotoneInPositiveAndNegativeSimilarity) {
  Rng rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    ContrastiveBatch b = RandomBatch(rng, 1, 8, 6);
    const ContrastiveLossConfig cfg{.temperature = 0.2, .margin = 0.6};
    const double base = MarginInfoNceLoss(b, cfg);

    ContrastiveBatch closer_pos = b;
    closer_pos.positives = RotateToward(b.positives.row(0), b.queries.row(0), 0.1);
    EXPECT_LE(MarginInfoNceLoss(closer_pos, cfg), base);

    ContrastiveBatch closer_neg = b;
    const int j = trial % 6;
    closer_neg.negatives.row(j) = RotateToward(b.negatives.row(j), b.queries.row(0), 0.1);
    EXPECT_GE(MarginInfoNceLoss(closer_neg, cfg), base);
  }
}

TEST(MarginInfoNceLossTest, InvariantToNegativePermutation) {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    ContrastiveBatch b = RandomBatch(rng, 4, 8, 16);
    std::vector<int> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ContrastiveBatch p = b;
    for (int i = 0; i < 16; ++i) p.negatives.row(i) = b.negatives.row(perm[i]);
    for (double m : {0.0, 0.6}) {
      const ContrastiveLossConfig cfg{.temperature = 0.2, .margin = m};
      EXPECT_LE(RelativeDiff(MarginInfoNceLoss(b, cfg), MarginInfoNceLoss(p, cfg)), 1e-12);
      EXPECT_LE(RelativeDiff(InfoNceLoss(b, cfg), InfoNceLoss(p, cfg)), 1e-12);
    }
  }
}

TEST(ContrastiveLossTest, RejectsBadShapesAndNorms) {
  Rng rng(29);
  const ContrastiveLossConfig cfg;
  ContrastiveBatch b = RandomBatch(rng, 2, 4, 3);
  ContrastiveBatch bad = b;
  bad.positives = RandomUnitRows(rng, 3, 4);
  EXPECT_THROW(InfoNceLoss(bad, cfg), ShapeError);
  bad = b;
  bad.negatives = RandomUnitRows(rng, 3, 5);
  EXPECT_THROW(MarginInfoNceLoss(bad, cfg), ShapeError);
  bad = b;
  bad.queries(0, 0) += 0.1;
  EXPECT_THROW(InfoNceLoss(bad, cfg), ValidationError);
  bad = b;
  bad.negatives *= 2.0;
  EXPECT_THROW(MarginInfoNceLoss(bad, cfg), ValidationError);
  bad = b;
  bad.negatives.resize(0, 4);
  EXPECT_THROW(InfoNceLoss(bad, cfg), ShapeError);
}

TEST(ContrastiveLossTest, RejectsBadConfig) {
  Rng rng(31);
  ContrastiveBatch b = RandomBatch(rng, 2, 4, 3);
  EXPECT_THROW(InfoNceLoss(b, {.temperature = 0.0, .margin = 0.0}), ValidationError);
  EXPECT_THROW(MarginInfoNceLoss(b, {.temperature = 0.2, .margin = 1.0}), ValidationError);
  EXPECT_THROW(MarginInfoNceLoss(b, {.temperature = 0.2, .margin = -0.1}), ValidationError);
}

TEST(CrossEntropyLossTest, UniformLogits) {
  Matrix logits = Matrix::Zero(3, 10);
  std::vector<int> y{0, 4, 9};
  EXPECT_NEAR(CrossEntropyLoss(logits, y), 2.30259, 1e-5);
}

TEST(CrossEntropyLossTest, SaturatedCorrectLogits) {
  Matrix logits = Matrix::Zero(2, 5);
  logits(0, 1) = 1000.0;
  logits(1, 3) = 1000.0;
  std::vector<int> y{1, 3};
  EXPECT_NEAR(CrossEntropyLoss(logits, y), 0.0, 1e-12);
}

TEST(CrossEntropyLossTest, MatchesBruteForceOracleAndGradient) {
  Rng rng(37);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix logits(4, 7);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 7; ++j) logits(i, j) = normal(rng);
    std::vector<int> y{trial % 7, (trial + 3) % 7, 0, 6};
    Matrix grad;
    const double got = CrossEntropyLoss(logits, y, &grad);
    EXPECT_LT(RelativeDiff(got, BruteForceCrossEntropy(logits, y)), 1e-6);
    const double h = 1e-5;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 7; ++j) {
        Matrix up = logits, down = logits;
        up(i, j) += h;
        down(i, j) -= h;
        const double fd = (CrossEntropyLoss(up, y) - CrossEntropyLoss(down, y)) / (2 * h);
        EXPECT_LT(GradientError(grad(i, j), fd), 1e-4);
      }
    }
  }
}

TEST(CrossEntropyLossTest, RejectsOutOfRangeLabels) {
  Matrix logits = Matrix::Zero(2, 3);
  EXPECT_THROW(CrossEntropyLoss(logits, std::vector<int>{0, 3}), ValidationError);
  EXPECT_THROW(CrossEntropyLoss(logits, std::vector<int>{-1, 0}), ValidationError);
  EXPECT_THROW(CrossEntropyLoss(logits, std::vector<int>{0}), ShapeError);
}

TEST(CombinedStudentLossTest, Arithmetic) {
  EXPECT_NEAR(CombinedStudentLoss(1.0, 200.0, {.distill_weight = 1e-4}), 1.02, 1e-12);
  EXPECT_EQ(CombinedStudentLoss(0.731, 55.0, {.distill_weight = 0.0}), 0.731);
  EXPECT_EQ(CombinedStudentLoss(0.0, 0.0, {}), 0.0);
  EXPECT_THROW(CombinedStudentLoss(-1.0, 0.0, {}), ValidationError);
  EXPECT_THROW(CombinedStudentLoss(1.0, 1.0, {.distill_weight = -1.0}), ValidationError);
}

}  // namespace
}  // namespace vprior
