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

#include <cmath>
#include <string>
#include <utility>

#include "vprior/errors.h"

namespace vprior {

void MomentumUpdate(std::span<const float> query, std::span<float> key,
                    double momentum) {
  if (query.size() != key.size()) {
    throw ShapeError("momentum update: query has " +
                     std::to_string(query.size()) + " values, key has " +
                     std::to_string(key.size()));
  }
  const double rest = 1.0 - momentum;
  for (std::size_t i = 0; i < key.size(); ++i) {
    key[i] = static_cast<float>(momentum * key[i] + rest * query[i]);
  }
}

MomentumEncoderPair::MomentumEncoderPair(nn::ParameterList query,
                                         nn::ParameterList key,
                                         double momentum)
    : query_(std::move(query)), key_(std::move(key)), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw ValidationError("encoder momentum must lie in [0, 1]");
  }
  if (query_.size() != key_.size()) {
    throw ShapeError("query and key encoders have different parameter counts");
  }
  for (std::size_t i = 0; i < query_.size(); ++i) {
    if (query_[i]->value.shape() != key_[i]->value.shape()) {
      throw ShapeError("parameter layout mismatch at " + query_[i]->name +
                       ": " + ShapeString(query_[i]->value.shape()) + " vs " +
                       ShapeString(key_[i]->value.shape()));
    }
    key_[i]->trainable = false;
  }
}

void MomentumEncoderPair::Synchronize() {
  for (std::size_t i = 0; i < query_.size(); ++i) {
    key_[i]->value = query_[i]->value;
  }
}

void MomentumEncoderPair::Update() {
  for (std::size_t i = 0; i < query_.size(); ++i) {
    MomentumUpdate(query_[i]->value.values(), key_[i]->value.values(),
                   momentum_);
  }
}

NegativeQueue::NegativeQueue(int capacity, int dim)
    : capacity_(capacity), dim_(dim) {
  if (capacity < 1) throw ValidationError("queue capacity must be positive");
  if (dim < 1) throw ValidationError("queue dimension must be positive");
  storage_ = Matrix::Zero(capacity, dim);
}

void NegativeQueue::Enqueue(const Matrix& keys) {
  if (keys.cols() != dim_) {
    throw ShapeError("queue holds " + std::to_string(dim_) +
                     "-d keys, got " + std::to_string(keys.cols()));
  }
  if (keys.rows() > capacity_) {
    throw CapacityError("cannot enqueue " + std::to_string(keys.rows()) +
                        " keys into a queue of capacity " +
                        std::to_string(capacity_));
  }
  for (Eigen::Index i = 0; i < keys.rows(); ++i) {
    const double norm = keys.row(i).norm();
    if (!(std::abs(norm - 1.0) <= kUnitNormTolerance)) {
      throw ValidationError("enqueued key " + std::to_string(i) +
                            " has norm " + std::to_string(norm));
    }
  }
  for (Eigen::Index i = 0; i < keys.rows(); ++i) {
    storage_.row(cursor_) = keys.row(i) / keys.row(i).norm();
    cursor_ = (cursor_ + 1) % capacity_;
  }
  count_ = std::min<int>(capacity_, count_ + static_cast<int>(keys.rows()));
}

Matrix NegativeQueue::Snapshot() const {
  if (!ready()) {
    throw NotReadyError("negative queue holds " + std::to_string(count_) +
                        " of " + std::to_string(capacity_) + " keys");
  }
  // When full, the cursor points at the oldest slot.
  Matrix out(capacity_, dim_);
  const int tail = capacity_ - cursor_;
  out.topRows(tail) = storage_.bottomRows(tail);
  out.bottomRows(cursor_) = storage_.topRows(cursor_);
  return out;
}

void NegativeQueue::WarmStart(const KeySource& source) {
  while (std::optional<Matrix> batch = source()) {
    if (batch->rows() > capacity_) {
      Enqueue(batch->bottomRows(capacity_));
    } else {
      Enqueue(*batch);
    }
  }
  if (!ready()) {
    throw NotReadyError("key source exhausted after " +
                        std::to_string(count_) + " of " +
                        std::to_string(capacity_) + " keys");
  }
}

void NegativeQueue::WarmStartRandom(Rng& rng) {
  Matrix keys(capacity_, dim_);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < keys.rows(); ++i) {
    for (Eigen::Index j = 0; j < keys.cols(); ++j) keys(i, j) = normal(rng);
    keys.row(i).normalize();
  }
  Enqueue(keys);
}

QueueState NegativeQueue::state() const {
  return QueueState{capacity_, dim_, count_, cursor_, storage_};
}

NegativeQueue NegativeQueue::FromState(const QueueState& state) {
  NegativeQueue q(state.capacity, state.dim);
  if (state.storage.rows() != state.capacity ||
      state.storage.cols() != state.dim) {
    throw ShapeError("queue state storage does not match capacity x dim");
  }
  if (state.count < 0 || state.count > state.capacity || state.cursor < 0 ||
      state.cursor >= state.capacity) {
    throw ValidationError("queue state cursor/count out of range");
  }
  q.storage_ = state.storage;
  q.count_ = state.count;
  q.cursor_ = state.cursor;
  return q;
}

}  // namespace vprior
