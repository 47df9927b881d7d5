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

#ifndef VPRIOR_ENCODER_STATE_H_
#define VPRIOR_ENCODER_STATE_H_

#include <functional>
#include <optional>
#include <span>

#include "vprior/losses.h"
#include "vprior/nn/parameter.h"
#include "vprior/random.h"

namespace vprior {

// key <- momentum * key + (1 - momentum) * query, elementwise. The blend is
// evaluated in double and rounded once.
void MomentumUpdate(std::span<const float> query, std::span<float> key,
                    double momentum);

// Query-encoder parameters and the momentum (key) encoder that trails them.
// Holds non-owning views; the key parameters are marked non-trainable on
// construction and only ever change through Update() or Synchronize().
class MomentumEncoderPair {
 public:
  MomentumEncoderPair(nn::ParameterList query, nn::ParameterList key,
                      double momentum);

  // Copies the query parameters into the key parameters.
  void Synchronize();
  void Update();

  double momentum() const { return momentum_; }
  const nn::ParameterList& query() const { return query_; }
  const nn::ParameterList& key() const { return key_; }

 private:
  nn::ParameterList query_;
  nn::ParameterList key_;
  double momentum_;
};

// Snapshot of a queue's internals, used for checkpointing.
struct QueueState {
  int capacity = 0;
  int dim = 0;
  int count = 0;
  int cursor = 0;
  Matrix storage;  // capacity x dim, physical slot order
};

// Fixed-capacity FIFO of unit-norm key embeddings.
class NegativeQueue {
 public:
  // Produces key batches until it returns nullopt.
  using KeySource = std::function<std::optional<Matrix>()>;

  NegativeQueue(int capacity, int dim);

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int count() const { return count_; }
  int cursor() const { return cursor_; }
  bool ready() const { return count_ == capacity_; }

  // Overwrites the keys.rows() oldest slots. Rows are validated against
  // kUnitNormTolerance and then renormalized. Throws CapacityError when
  // keys.rows() > capacity.
  void Enqueue(const Matrix& keys);

  // All stored keys, oldest first. Throws NotReadyError before warm-up.
  Matrix Snapshot() const;

  // Enqueues every batch the source yields. Throws NotReadyError if the
  // queue is still not full afterwards. Batches longer than the capacity
  // contribute their last `capacity` rows.
  void WarmStart(const KeySource& source);

  // Fills the queue with normalized Gaussian vectors.
  void WarmStartRandom(Rng& rng);

  QueueState state() const;
  static NegativeQueue FromState(const QueueState& state);

 private:
  int capacity_;
  int dim_;
  int count_ = 0;
  int cursor_ = 0;
  Matrix storage_;
};

}  // namespace vprior

#endif  // VPRIOR_ENCODER_STATE_H_
