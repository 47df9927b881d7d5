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

#ifndef VPRIOR_IMAGE_H_
#define VPRIOR_IMAGE_H_

#include <filesystem>
#include <vector>

namespace vprior {

// Planar RGB image, values in [0, 1]. Pixel (c, y, x) lives at
// pixels[(c * height + y) * width + x].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h),
        pixels(static_cast<std::size_t>(3) * w * h, fill) {}

  float& at(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool empty() const { return pixels.empty(); }
  bool operator==(const Image&) const = default;
};

// Decodes PNG (gray, gray+alpha, RGB, RGBA; 8 or 16 bit) and binary PPM/PGM.
// Throws IoError for unreadable or undecodable files.
Image ReadImage(const std::filesystem::path& path);

// Writes an 8-bit RGB PNG. Values are clamped to [0, 1].
void WritePng(const std::filesystem::path& path, const Image& image);

}  // namespace vprior

#endif  // VPRIOR_IMAGE_H_
