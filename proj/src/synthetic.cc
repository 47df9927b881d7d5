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

#include "vprior/synthetic.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "vprior/errors.h"

namespace vprior {
namespace {

using Color = std::array<float, 3>;

// A small shared palette: many images share a color pair, so color alone
// cannot tell two images apart.
constexpr std::array<Color, 8> kPalette = {{{0.90f, 0.20f, 0.20f},
                                            {0.20f, 0.60f, 0.25f},
                                            {0.20f, 0.30f, 0.85f},
                                            {0.95f, 0.85f, 0.25f},
                                            {0.10f, 0.10f, 0.12f},
                                            {0.92f, 0.92f, 0.90f},
                                            {0.60f, 0.30f, 0.70f},
                                            {0.95f, 0.55f, 0.15f}}};

float Luma(const Color& c) { return 0.299f * c[0] + 0.587f * c[1] + 0.114f * c[2]; }

// Background and foreground from the palette, separated in luminance so
// shapes stay visible after grayscale conversion, with a slight per-image
// tint.
std::pair<Color, Color> PickColors(Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kPalette.size()) - 1);
  Color bg = kPalette[pick(rng)], fg;
  do {
    fg = kPalette[pick(rng)];
  } while (std::abs(Luma(fg) - Luma(bg)) < 0.2f);
  for (Color* c : {&bg, &fg}) {
    for (float& v : *c) v = std::clamp(v + static_cast<float>(Uniform(rng, -0.05, 0.05)), 0.0f, 1.0f);
  }
  return {bg, fg};
}

// Coverage in [0, 1] of a shape at normalized, rotated coordinates (u, v),
// both roughly in [-1, 1].
float Coverage(int cls, double u, double v, double param) {
  const double r = std::hypot(u, v);
  switch (cls) {
    case 0:  // disc
      return r < 0.8 ? 1.0f : 0.0f;
    case 1:  // square
      return std::max(std::abs(u), std::abs(v)) < 0.7 ? 1.0f : 0.0f;
    case 2:  // triangle
      return (v > -0.6 && v < 0.7 && std::abs(u) < (0.7 - v) * 0.6) ? 1.0f : 0.0f;
    case 3:  // ring
      return (r > 0.5 && r < 0.8) ? 1.0f : 0.0f;
    case 4:  // cross
      return ((std::abs(u) < 0.2 && std::abs(v) < 0.8) ||
              (std::abs(v) < 0.2 && std::abs(u) < 0.8))
                 ? 1.0f
                 : 0.0f;
    case 5:  // stripes
      return std::sin(u * param) > 0 ? 1.0f : 0.0f;
    case 6:  // checkerboard
      return (std::sin(u * param) > 0) != (std::sin(v * param) > 0) ? 1.0f : 0.0f;
    case 7:  // dot lattice
      return std::hypot(std::remainder(u * param / std::numbers::pi, 2.0),
                        std::remainder(v * param / std::numbers::pi, 2.0)) < 0.5
                 ? 1.0f
                 : 0.0f;
    case 8:  // concentric rings
      return std::sin(r * param) > 0 ? 1.0f : 0.0f;
    default:  // four-point star
      return r < 0.25 + 0.6 * std::pow(std::abs(std::cos(2 * std::atan2(v, u))), 3) ? 1.0f
                                                                                   : 0.0f;
  }
}

}  // namespace

const std::vector<std::string>& ShapeClassNames() {
  static const std::vector<std::string> names = {
      "disc",    "square",       "triangle",    "ring",     "cross",
      "stripes", "checkerboard", "dot_lattice", "ripples",  "star"};
  return names;
}

Image RenderShape(int class_index, int size, Rng& rng) {
  if (class_index < 0 || class_index >= kShapeClassCount) {
    throw ConfigError("shape class out of range: " + std::to_string(class_index));
  }
  const auto [bg, fg] = PickColors(rng);
  const double cx = Uniform(rng, 0.35, 0.65) * size;
  const double cy = Uniform(rng, 0.35, 0.65) * size;
  const double scale = Uniform(rng, 0.25, 0.45) * size;
  const double angle = Uniform(rng, 0, 2 * std::numbers::pi);
  const double param = Uniform(rng, 8.0, 14.0);
  const double noise = Uniform(rng, 0.0, 0.08);
  const double ca = std::cos(angle), sa = std::sin(angle);
  // 2x2 supersampling for smooth edges.
  constexpr int kSub = 2;
  Image img(size, size);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float cover = 0.0f;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = (x + (sx + 0.5) / kSub - cx) / scale;
          const double py = (y + (sy + 0.5) / kSub - cy) / scale;
          const double u = ca * px + sa * py, v = -sa * px + ca * py;
          cover += Coverage(class_index, u, v, param);
        }
      }
      cover /= kSub * kSub;
      // Textures fill a bounded patch rather than the whole frame.
      if (class_index >= 5 && class_index <= 8) {
        const double px = (x + 0.5 - cx) / scale, py = (y + 0.5 - cy) / scale;
        if (std::max(std::abs(px), std::abs(py)) > 1.0) cover = 0.0f;
      }
      for (int c = 0; c < 3; ++c) {
        const double value = cover * fg[c] + (1 - cover) * bg[c] + noise * gauss(rng);
        img.at(c, y, x) = std::clamp(static_cast<float>(value), 0.0f, 1.0f);
      }
    }
  }
  return img;
}

void WriteShapesDataset(const std::filesystem::path& root,
                        const ShapesDatasetConfig& config) {
  if (config.classes < 1 || config.classes > kShapeClassCount) {
    throw ConfigError("shape dataset supports 1.." + std::to_string(kShapeClassCount) +
                      " classes");
  }
  if (config.image_size < 8) throw ConfigError("image_size must be at least 8");
  const struct {
    const char* name;
    int count;
    std::uint64_t tag;
  } splits[] = {{"train", config.train_per_class, 1}, {"val", config.val_per_class, 2}};
  for (const auto& split : splits) {
    for (int c = 0; c < config.classes; ++c) {
      const auto dir = root / split.name / ShapeClassNames()[c];
      std::filesystem::create_directories(dir);
      for (int i = 0; i < split.count; ++i) {
        Rng rng = MakeRng({config.seed, split.tag, static_cast<std::uint64_t>(c),
                           static_cast<std::uint64_t>(i)});
        char file[32];
        std::snprintf(file, sizeof(file), "%04d.png", i);
        WritePng(dir / file, RenderShape(c, config.image_size, rng));
      }
    }
  }
}

}  // namespace vprior
