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

#ifndef VPRIOR_CHECKPOINT_H_
#define VPRIOR_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "vprior/config.h"
#include "vprior/nn/parameter.h"
#include "vprior/tensor.h"

namespace vprior {

// Single-file archive: a text header (format line, metadata, config
// snapshot, one descriptor per tensor with dtype, shape, offset and byte
// count) terminated by "end", followed by the raw little-endian tensor
// blobs. Everything is stored in sorted key order, so save -> load -> save
// reproduces the file byte for byte.
class Checkpoint {
 public:
  std::map<std::string, std::string> meta;
  FlatConfig config;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, TensorD> tensors64;

  std::string Serialize() const;
  // Throws ValidationError on malformed input.
  static Checkpoint Deserialize(std::string_view bytes);

  // Throws IoError on filesystem failures.
  void Save(const std::filesystem::path& path) const;
  static Checkpoint Load(const std::filesystem::path& path);

  // Stores every entry as "<prefix><name>".
  void PutState(const std::string& prefix, const nn::StateList& state);
  // Fills every entry from "<prefix><name>". Throws ValidationError when a
  // tensor is missing or has a different shape.
  void GetState(const std::string& prefix, const nn::StateList& state) const;
  bool HasPrefix(const std::string& prefix) const;

  std::string phase() const { return MetaOr("phase", ""); }
  int epoch() const;
  std::string MetaOr(const std::string& key, const std::string& fallback) const;
};

}  // namespace vprior

#endif  // VPRIOR_CHECKPOINT_H_
