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

#ifndef VPRIOR_SYNTHETIC_H_
#define VPRIOR_SYNTHETIC_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vprior/image.h"
#include "vprior/random.h"

namespace vprior {

// Procedural shape/texture classes. Class identity is carried by geometry
// only. Colors are drawn from a small shared palette, and position, scale,
// rotation and noise vary per sample.
struct ShapesDatasetConfig {
  int classes = 10;  // at most kShapeClassCount
  int train_per_class = 50;
  int val_per_class = 50;
  int image_size = 64;
  std::uint64_t seed = 0;
};

inline constexpr int kShapeClassCount = 10;

const std::vector<std::string>& ShapeClassNames();

Image RenderShape(int class_index, int size, Rng& rng);

// Writes root/{train,val}/<class>/<nnnn>.png. Existing files are replaced.
void WriteShapesDataset(const std::filesystem::path& root,
                        const ShapesDatasetConfig& config);

}  // namespace vprior

#endif  // VPRIOR_SYNTHETIC_H_
