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

#include "vprior/encoder_state.h"

#include <deque>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"
#include "vprior/errors.h"

namespace vprior {
namespace {

using testing::RandomUnitRows;

nn::Parameter MakeParam(const std::string& name, std::vector<float> values) {
  const int n = static_cast<int>(values.size());
  nn::Parameter p(name, {n});
  p.value = Tensor({n}, std::move(values));
  return p;
}

TEST(MomentumUpdateTest, DegenerateMomenta) {
  nn::Parameter q = MakeParam("w", {1.0f, -2.0f, 3.5f});
  nn::Parameter k = MakeParam("w", {0.5f, 0.25f, -1.0f});
  const Tensor before = k.value;
  MomentumEncoderPair frozen({&q}, {&k}, 1.0);
  frozen.Update();
  EXPECT_EQ(k.value, before);

  MomentumEncoderPair copy({&q}, {&k}, 0.0);
  copy.Update();
  EXPECT_EQ(k.value, q.value);
}

TEST(MomentumUpdateTest, ScalarCase) {
  nn::Parameter q = MakeParam("w", {1.0f});
  nn::Parameter k = MakeParam("w", {0.0f});
  MomentumEncoderPair pair({&q}, {&k}, 0.999);
  pair.Update();
  EXPECT_NEAR(k.value[0], 0.001, 1e-7);
  EXPECT_EQ(q.value[0], 1.0f);
}

TEST(MomentumUpdateTest, MarksKeyFrozenAndChecksLayout) {
  nn::Parameter q = MakeParam("w", {1.0f, 2.0f});
  nn::Parameter k = MakeParam("w", {0.0f, 0.0f});
  MomentumEncoderPair pair({&q}, {&k}, 0.9);
  EXPECT_FALSE(k.trainable);
  EXPECT_TRUE(q.trainable);
  pair.Synchronize();
  EXPECT_EQ(k.value, q.value);

  nn::Parameter short_key = MakeParam("w", {0.0f});
  EXPECT_THROW(MomentumEncoderPair({&q}, {&short_key}, 0.9), ShapeError);
  EXPECT_THROW(MomentumEncoderPair({&q}, {}, 0.9), ShapeError);
  EXPECT_THROW(MomentumEncoderPair({&q}, {&k}, 1.5), ValidationError);
}

TEST(MomentumUpdateTest, MatchesBlendEveryStep) {
  Rng rng(3);
  std::vector<float> qv(64), kv(64);
  for (float& v : qv) v = static_cast<float>(Normal(rng, 0, 1));
  nn::Parameter q = MakeParam("w", qv);
  nn::Parameter k = MakeParam("w", kv);
  MomentumEncoderPair pair({&q}, {&k}, 0.99);
  pair.Synchronize();
  for (int step = 0; step < 100; ++step) {
    for (float& v : q.value.values()) v += static_cast<float>(Normal(rng, 0, 0.1));
    const Tensor prev = k.value;
    pair.Update();
    for (std::size_t i = 0; i < prev.size(); ++i) {
      const double want = 0.99 * prev[i] + (1.0 - 0.99) * q.value[i];
      EXPECT_NEAR(k.value[i], static_cast<float>(want), 1e-7);
    }
  }
}

Matrix Rows(std::initializer_list<std::vector<double>> rows) {
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
  int i = 0;
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.size(); ++j) m(i, j) = r[j];
    ++i;
  }
  return m;
}

TEST(NegativeQueueTest, FifoReplacesOldest) {
  // a, b, c, d, e, f as distinct unit vectors in 2-d.
  auto unit = [](double angle) {
    return std::vector<double>{std::cos(angle), std::sin(angle)};
  };
  const Matrix abcd = Rows({unit(0.1), unit(0.2), unit(0.3), unit(0.4)});
  const Matrix ef = Rows({unit(0.5), unit(0.6)});
  NegativeQueue q(4, 2);
  q.Enqueue(abcd);
  ASSERT_TRUE(q.ready());
  q.Enqueue(ef);
  const Matrix want = Rows({unit(0.3), unit(0.4), unit(0.5), unit(0.6)});
  EXPECT_TRUE(q.Snapshot().isApprox(want, 1e-15));
  EXPECT_EQ(q.count(), 4);
  EXPECT_EQ(q.cursor(), 2);
}

TEST(NegativeQueueTest, FullBatchReplacesEverything) {
  Rng rng(5);
  NegativeQueue q(6, 3);
  q.WarmStartRandom(rng);
  const Matrix keys = RandomUnitRows(rng, 6, 3);
  q.Enqueue(keys);
  EXPECT_TRUE(q.Snapshot().isApprox(keys, 1e-15));
}

TEST(NegativeQueueTest, ErrorsAndReadiness) {
  Rng rng(7);
  NegativeQueue q(4, 3);
  EXPECT_THROW(q.Snapshot(), NotReadyError);
  EXPECT_THROW(q.Enqueue(RandomUnitRows(rng, 5, 3)), CapacityError);
  EXPECT_THROW(q.Enqueue(RandomUnitRows(rng, 2, 2)), ShapeError);
  Matrix bad = RandomUnitRows(rng, 2, 3) * 1.1;
  EXPECT_THROW(q.Enqueue(bad), ValidationError);
  q.Enqueue(RandomUnitRows(rng, 3, 3));
  EXPECT_EQ(q.count(), 3);
  EXPECT_THROW(q.Snapshot(), NotReadyError);
  q.Enqueue(RandomUnitRows(rng, 1, 3));
  EXPECT_NO_THROW(q.Snapshot());
}

TEST(NegativeQueueTest, SnapshotIsAnIndependentCopy) {
  Rng rng(9);
  NegativeQueue q(5, 4);
  q.WarmStartRandom(rng);
  Matrix a = q.Snapshot();
  const Matrix b = q.Snapshot();
  EXPECT_EQ(a, b);
  a.setZero();
  EXPECT_EQ(q.Snapshot(), b);
}

TEST(NegativeQueueTest, SnapshotAfterEnqueueDiffersInExactlyBRows) {
  Rng rng(11);
  NegativeQueue q(8, 4);
  q.WarmStartRandom(rng);
  const Matrix before = q.Snapshot();
  q.Enqueue(RandomUnitRows(rng, 3, 4));
  const Matrix after = q.Snapshot();
  // Oldest-first order shifts by B; the surviving rows line up shifted.
  EXPECT_EQ(after.topRows(5), before.bottomRows(5));
  int differing = 0;
  for (int i = 0; i < 8; ++i) {
    bool present = false;
    for (int j = 0; j < 8; ++j) present |= (after.row(i) == before.row(j));
    differing += present ? 0 : 1;
  }
  EXPECT_EQ(differing, 3);
}

TEST(NegativeQueueTest, RenormalizesKeysWithinTolerance) {
  NegativeQueue q(1, 2);
  q.Enqueue(Rows({{1.0 + 5e-6, 0.0}}));
  EXPECT_EQ(q.Snapshot()(0, 0), 1.0);
}

TEST(NegativeQueueTest, WarmStartFromStream) {
  Rng rng(13);
  const Matrix keys = RandomUnitRows(rng, 12, 4);
  auto stream = [&](int total, int batch) {
    auto pos = std::make_shared<int>(0);
    return [&keys, pos, total, batch]() -> std::optional<Matrix> {
      if (*pos >= total) return std::nullopt;
      const int n = std::min(batch, total - *pos);
      Matrix m = keys.middleRows(*pos, n);
      *pos += n;
      return m;
    };
  };
  NegativeQueue exact(8, 4);
  exact.WarmStart(stream(8, 3));
  EXPECT_TRUE(exact.Snapshot().isApprox(keys.topRows(8), 1e-15));

  for (int batch : {1, 4, 5, 12}) {
    NegativeQueue q(8, 4);
    q.WarmStart(stream(12, batch));
    EXPECT_TRUE(q.Snapshot().isApprox(keys.bottomRows(8), 1e-15)) << batch;
  }

  NegativeQueue short_q(8, 4);
  EXPECT_THROW(short_q.WarmStart(stream(5, 2)), NotReadyError);
}

TEST(NegativeQueueTest, RandomWarmStartRowsAreUnitNorm) {
  Rng rng(17);
  NegativeQueue q(8, 4);
  q.WarmStartRandom(rng);
  const Matrix s = q.Snapshot();
  ASSERT_EQ(s.rows(), 8);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(s.row(i).norm(), 1.0, 1e-5);
}

// Property: after any random enqueue sequence the queue equals the tail of a
// plain list that records every enqueued key.
TEST(NegativeQueueTest, MatchesReplayOracle) {
  Rng rng(19);
  for (int seq = 0; seq < 1000; ++seq) {
    const int k = 1 + static_cast<int>(rng() % 16);
    const int d = 2 + static_cast<int>(rng() % 4);
    NegativeQueue q(k, d);
    std::deque<Eigen::RowVectorXd> replay;
    const int steps = 1 + static_cast<int>(rng() % 12);
    for (int s = 0; s < steps; ++s) {
      const int b = 1 + static_cast<int>(rng() % k);
      const Matrix keys = RandomUnitRows(rng, b, d);
      q.Enqueue(keys);
      for (int i = 0; i < b; ++i) replay.push_back(keys.row(i));
      EXPECT_EQ(q.count(), std::min<int>(k, static_cast<int>(replay.size())));
    }
    if (static_cast<int>(replay.size()) < k) {
      EXPECT_THROW(q.Snapshot(), NotReadyError);
      continue;
    }
    const Matrix snap = q.Snapshot();
    const int offset = static_cast<int>(replay.size()) - k;
    for (int i = 0; i < k; ++i) {
      ASSERT_TRUE(snap.row(i).isApprox(replay[offset + i], 1e-14)) << seq;
    }
  }
}

TEST(NegativeQueueTest, StateRoundTrip) {
  Rng rng(23);
  NegativeQueue q(7, 3);
  q.WarmStartRandom(rng);
  q.Enqueue(RandomUnitRows(rng, 4, 3));
  NegativeQueue r = NegativeQueue::FromState(q.state());
  EXPECT_EQ(r.Snapshot(), q.Snapshot());
  EXPECT_EQ(r.cursor(), q.cursor());
}

}  // namespace
}  // namespace vprior
