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

#include "vprior/data.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vprior/config.h"
#include "vprior/errors.h"
#include "vprior/log.h"

namespace vprior {
namespace fs = std::filesystem;
namespace {

constexpr std::uint64_t kShuffleTag = 0x5368756666ULL;

bool IsImageFile(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

std::vector<std::string> SortedSubdirs(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> SortedImages(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && IsImageFile(e.path())) {
      out.push_back(e.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::array<double, 3> ParseTriple(const std::string& text) {
  std::array<double, 3> out{};
  std::istringstream is(text);
  char comma;
  if (!(is >> out[0] >> comma >> out[1] >> comma >> out[2])) {
    throw ValidationError("malformed channel triple '" + text + "'");
  }
  return out;
}

std::vector<Image> DecodeAll(const DatasetManifest& m,
                             std::vector<int>* kept_rows, int* skipped) {
  std::vector<Image> images;
  images.reserve(m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    try {
      images.push_back(ReadImage(m.Resolve(m.entries[i])));
      if (kept_rows) kept_rows->push_back(static_cast<int>(i));
    } catch (const IoError& e) {
      Log(LogLevel::kWarning, std::string("skipping undecodable image: ") + e.what());
      if (skipped) ++*skipped;
    }
  }
  return images;
}

float Clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

float Luma(const Image& img, int y, int x) {
  return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) +
         0.114f * img.at(2, y, x);
}

void Blend(Image& img, const Image& other, float factor) {
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = Clamp01(factor * img.pixels[i] + (1 - factor) * other.pixels[i]);
  }
}

Image Grayscale(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float g = Luma(img, y, x);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = g;
    }
  }
  return out;
}

void AdjustBrightness(Image& img, float f) {
  for (float& v : img.pixels) v = Clamp01(v * f);
}

void AdjustContrast(Image& img, float f) {
  double mean = 0.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) mean += Luma(img, y, x);
  }
  mean /= static_cast<double>(img.width) * img.height;
  Image flat(img.width, img.height, static_cast<float>(mean));
  Blend(img, flat, f);
}

void AdjustSaturation(Image& img, float f) { Blend(img, Grayscale(img), f); }

// Rotates hue by `shift` turns.
void AdjustHue(Image& img, float shift) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
      const float maxc = std::max({r, g, b}), minc = std::min({r, g, b});
      const float v = maxc, delta = maxc - minc;
      if (delta <= 0.0f) continue;
      const float s = delta / maxc;
      float h;
      if (maxc == r) {
        h = (g - b) / delta;
      } else if (maxc == g) {
        h = 2.0f + (b - r) / delta;
      } else {
        h = 4.0f + (r - g) / delta;
      }
      h = h / 6.0f + shift;
      h -= std::floor(h);
      const float h6 = h * 6.0f;
      const int sector = static_cast<int>(h6) % 6;
      const float frac = h6 - std::floor(h6);
      const float p = v * (1 - s), q = v * (1 - s * frac), t = v * (1 - s * (1 - frac));
      float rgb[3];
      switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = Clamp01(rgb[c]);
    }
  }
}

void ColorJitter(Image& img, const AugmentationPolicy& p, Rng& rng) {
  std::array<int, 4> order{0, 1, 2, 3};
  std::shuffle(order.begin(), order.end(), rng);
  for (int op : order) {
    switch (op) {
      case 0:
        if (p.brightness > 0) {
          AdjustBrightness(img, static_cast<float>(Uniform(
                                    rng, std::max(0.0, 1 - p.brightness), 1 + p.brightness)));
        }
        break;
      case 1:
        if (p.contrast > 0) {
          AdjustContrast(img, static_cast<float>(Uniform(
                                  rng, std::max(0.0, 1 - p.contrast), 1 + p.contrast)));
        }
        break;
      case 2:
        if (p.saturation > 0) {
          AdjustSaturation(img, static_cast<float>(Uniform(
                                    rng, std::max(0.0, 1 - p.saturation), 1 + p.saturation)));
        }
        break;
      default:
        if (p.hue > 0) AdjustHue(img, static_cast<float>(Uniform(rng, -p.hue, p.hue)));
        break;
    }
  }
}

int Reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

void GaussianBlur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    sum += k[i + radius];
  }
  for (float& v : k) v = static_cast<float>(v / sum);
  Image tmp(img.width, img.height);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i) {
          acc += k[i + radius] * img.at(c, y, Reflect(x + i, img.width));
        }
        tmp.at(c, y, x) = acc;
      }
    }
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i) {
          acc += k[i + radius] * tmp.at(c, Reflect(y + i, img.height), x);
        }
        img.at(c, y, x) = acc;
      }
    }
  }
}

void FlipHorizontal(Image& img) {
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      float* row = &img.at(c, y, 0);
      std::reverse(row, row + img.width);
    }
  }
}

struct Box {
  double x0, y0, w, h;
};

Box RandomResizedCropBox(const Image& img, const AugmentationPolicy& p, Rng& rng) {
  const double width = img.width, height = img.height, area = width * height;
  const double log_rmin = std::log(p.ratio_min), log_rmax = std::log(p.ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * Uniform(rng, p.scale_min, std::nextafter(p.scale_max, 2.0));
    const double ratio =
        std::exp(log_rmin == log_rmax ? log_rmin : Uniform(rng, log_rmin, log_rmax));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= img.width && h <= img.height) {
      const int x = std::uniform_int_distribution<int>(0, img.width - w)(rng);
      const int y = std::uniform_int_distribution<int>(0, img.height - h)(rng);
      return {double(x), double(y), double(w), double(h)};
    }
  }
  // Fallback: central crop with the aspect ratio clamped to the range.
  const double in_ratio = width / height;
  double w = width, h = height;
  if (in_ratio < p.ratio_min) {
    h = std::round(w / p.ratio_min);
  } else if (in_ratio > p.ratio_max) {
    w = std::round(h * p.ratio_max);
  }
  return {std::floor((width - w) / 2), std::floor((height - h) / 2), w, h};
}

Image EvalView(const Image& img, const AugmentationPolicy& p) {
  const double resize = p.crop_size / p.eval_crop_fraction;
  const double shorter = std::min(img.width, img.height);
  const int rw = static_cast<int>(std::lround(img.width * resize / shorter));
  const int rh = static_cast<int>(std::lround(img.height * resize / shorter));
  const Image resized = ResizeRegion(img, 0, 0, img.width, img.height, rw, rh);
  const int x0 = static_cast<int>(std::lround((rw - p.crop_size) / 2.0));
  const int y0 = static_cast<int>(std::lround((rh - p.crop_size) / 2.0));
  return ResizeRegion(resized, x0, y0, p.crop_size, p.crop_size, p.crop_size,
                      p.crop_size);
}

// Filter taps for one output axis.
struct Taps {
  std::vector<int> first;
  std::vector<std::vector<float>> weights;
};

Taps ComputeTaps(double start, double extent, int out, int limit) {
  Taps t;
  const double scale = extent / out;
  const double support = std::max(1.0, scale);
  for (int o = 0; o < out; ++o) {
    const double center = start + (o + 0.5) * scale;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    double sum = 0.0;
    std::vector<double> raw;
    for (int i = lo; i <= hi; ++i) {
      const double d = std::abs((i + 0.5 - center) / support);
      raw.push_back(std::max(0.0, 1.0 - d));
      sum += raw.back();
    }
    int first = lo;
    if (sum <= 0.0) {
      first = static_cast<int>(std::floor(center));
      raw = {1.0};
      sum = 1.0;
    }
    // Fold out-of-range taps onto the edge pixels.
    std::vector<float> folded(static_cast<std::size_t>(limit), 0.0f);
    int fmin = limit, fmax = -1;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      const int idx = std::clamp(first + static_cast<int>(k), 0, limit - 1);
      if (raw[k] == 0.0) continue;
      folded[idx] += static_cast<float>(raw[k] / sum);
      fmin = std::min(fmin, idx);
      fmax = std::max(fmax, idx);
    }
    t.first.push_back(fmin);
    t.weights.emplace_back(folded.begin() + fmin, folded.begin() + fmax + 1);
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------

ChannelStats ComputeChannelStats(const std::vector<Image>& images) {
  ChannelStats s;
  std::array<double, 3> sum{}, sq{};
  double count = 0.0;
  for (const Image& img : images) {
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = img.pixels[c * plane + i];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
    count += static_cast<double>(plane);
  }
  if (count == 0.0) return s;
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - s.mean[c] * s.mean[c]);
    s.std[c] = std::max(std::sqrt(var), 1e-3);
  }
  return s;
}

DatasetManifest LoadManifest(const fs::path& root, const std::string& split,
                             const std::string& stats_split) {
  const fs::path dir = root / split;
  if (!fs::is_directory(dir)) {
    throw IoError("split directory not found: " + dir.string());
  }
  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.class_names = SortedSubdirs(dir);
  for (int label = 0; label < m.class_count(); ++label) {
    const std::string& cls = m.class_names[label];
    const std::vector<std::string> files = SortedImages(dir / cls);
    if (files.empty()) {
      m.warnings.push_back("empty class directory: " + split + "/" + cls);
      Log(LogLevel::kWarning, m.warnings.back());
    }
    for (const std::string& f : files) {
      m.entries.push_back({split + "/" + cls + "/" + f, label});
    }
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });

  if (stats_split != split && fs::is_directory(root / stats_split)) {
    DatasetManifest source = LoadManifest(root, stats_split, stats_split);
    m.stats = source.stats;
  } else {
    if (stats_split != split) {
      m.warnings.push_back("statistics split '" + stats_split +
                           "' missing; using '" + split + "'");
    }
    m.stats = ComputeChannelStats(DecodeAll(m, nullptr, nullptr));
  }
  return m;
}

void SaveManifest(const DatasetManifest& m, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << "# vprior-manifest 1\n";
  out << "# root=" << m.root.string() << "\n";
  out << "# split=" << m.split << "\n";
  for (const std::string& c : m.class_names) out << "# class=" << c << "\n";
  out << "# mean=" << FormatDouble(m.stats.mean[0]) << "," << FormatDouble(m.stats.mean[1])
      << "," << FormatDouble(m.stats.mean[2]) << "\n";
  out << "# std=" << FormatDouble(m.stats.std[0]) << "," << FormatDouble(m.stats.std[1])
      << "," << FormatDouble(m.stats.std[2]) << "\n";
  for (const std::string& w : m.warnings) out << "# warning=" << w << "\n";
  for (const ManifestEntry& e : m.entries) out << e.path << "\t" << e.label << "\n";
  if (!out) throw IoError("failed writing " + file.string());
}

DatasetManifest ReadManifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  DatasetManifest m;
  std::string line;
  if (!std::getline(in, line) || line != "# vprior-manifest 1") {
    throw ValidationError("not a manifest file: " + file.string());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::size_t eq = line.find('=');
      if (line.size() < 2 || eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "root") {
        m.root = value;
      } else if (key == "split") {
        m.split = value;
      } else if (key == "class") {
        m.class_names.push_back(value);
      } else if (key == "mean") {
        m.stats.mean = ParseTriple(value);
      } else if (key == "std") {
        m.stats.std = ParseTriple(value);
      } else if (key == "warning") {
        m.warnings.push_back(value);
      }
      continue;
    }
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos) throw ValidationError("malformed manifest line: " + line);
    ManifestEntry e{line.substr(0, tab), std::stoi(line.substr(tab + 1))};
    if (e.label < 0 || e.label >= m.class_count()) {
      throw ValidationError("label out of range in manifest line: " + line);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

UnlabeledImageSet UnlabeledImageSet::FromManifest(const DatasetManifest& manifest) {
  UnlabeledImageSet set;
  set.images_ = DecodeAll(manifest, nullptr, &set.skipped_);
  return set;
}

LabeledImageSet::LabeledImageSet(std::vector<Image> images,
                                 std::vector<int> labels, int class_count)
    : images_(std::move(images)), labels_(std::move(labels)), class_count_(class_count) {
  if (images_.size() != labels_.size()) {
    throw ValidationError("image and label counts differ");
  }
  for (int l : labels_) {
    if (l < 0 || l >= class_count_) {
      throw ValidationError("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(class_count_) + ")");
    }
  }
}

LabeledImageSet LabeledImageSet::FromManifest(const DatasetManifest& manifest) {
  std::vector<int> rows;
  int skipped = 0;
  std::vector<Image> images = DecodeAll(manifest, &rows, &skipped);
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (int r : rows) labels.push_back(manifest.entries[r].label);
  LabeledImageSet set(std::move(images), std::move(labels), manifest.class_count());
  set.skipped_ = skipped;
  return set;
}

// ---------------------------------------------------------------------------

const char* AugmentModeName(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::kTwoView:
      return "two_view";
    case AugmentMode::kSupervisedTrain:
      return "supervised_train";
    case AugmentMode::kEval:
      return "eval";
  }
  return "?";
}

AugmentMode ParseAugmentMode(const std::string& name) {
  if (name == "two_view") return AugmentMode::kTwoView;
  if (name == "supervised_train") return AugmentMode::kSupervisedTrain;
  if (name == "eval") return AugmentMode::kEval;
  throw ConfigError("unknown augmentation mode '" + name + "'");
}

AugmentationPolicy AugmentationPolicy::TwoView(int crop_size) {
  AugmentationPolicy p;
  p.crop_size = crop_size;
  return p;
}

AugmentationPolicy AugmentationPolicy::SupervisedTrain(int crop_size) {
  AugmentationPolicy p;
  p.mode = AugmentMode::kSupervisedTrain;
  p.crop_size = crop_size;
  p.scale_min = 0.08;
  p.jitter_p = p.grayscale_p = p.blur_p = 0.0;
  return p;
}

AugmentationPolicy AugmentationPolicy::Eval(int crop_size) {
  AugmentationPolicy p;
  p.mode = AugmentMode::kEval;
  p.crop_size = crop_size;
  p.jitter_p = p.grayscale_p = p.blur_p = p.flip_p = 0.0;
  return p;
}

void AugmentationPolicy::Validate() const {
  auto prob = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string(name) + " must be a probability");
    }
  };
  if (crop_size < 1) throw ConfigError("crop_size must be positive");
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(ratio_min > 0.0 && ratio_min <= ratio_max)) {
    throw ConfigError("crop ratio range must satisfy 0 < min <= max");
  }
  prob(jitter_p, "jitter_p");
  prob(grayscale_p, "grayscale_p");
  prob(blur_p, "blur_p");
  prob(flip_p, "flip_p");
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5) {
    throw ConfigError("jitter strengths must be nonnegative (hue <= 0.5)");
  }
  if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) {
    throw ConfigError("blur sigma range must satisfy 0 < min <= max");
  }
  if (blur_reference_size < 0) throw ConfigError("blur_reference_size must be >= 0");
  if (!(eval_crop_fraction > 0.0 && eval_crop_fraction <= 1.0)) {
    throw ConfigError("eval_crop_fraction must lie in (0, 1]");
  }
  for (double s : stats.std) {
    if (!(s > 0.0)) throw ConfigError("channel std must be positive");
  }
}

Image ResizeRegion(const Image& src, double x0, double y0, double w, double h,
                   int out_w, int out_h) {
  if (src.empty() || out_w < 1 || out_h < 1 || w <= 0 || h <= 0) {
    throw ShapeError("invalid resize request");
  }
  const Taps tx = ComputeTaps(x0, w, out_w, src.width);
  const Taps ty = ComputeTaps(y0, h, out_h, src.height);
  Image tmp(out_w, src.height);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < src.height; ++y) {
      for (int ox = 0; ox < out_w; ++ox) {
        float acc = 0.0f;
        const auto& wts = tx.weights[ox];
        for (std::size_t k = 0; k < wts.size(); ++k) {
          acc += wts[k] * src.at(c, y, tx.first[ox] + static_cast<int>(k));
        }
        tmp.at(c, y, ox) = acc;
      }
    }
  }
  Image out(out_w, out_h);
  for (int c = 0; c < 3; ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& wts = ty.weights[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < wts.size(); ++k) {
          acc += wts[k] * tmp.at(c, ty.first[oy] + static_cast<int>(k), ox);
        }
        out.at(c, oy, ox) = acc;
      }
    }
  }
  return out;
}

Tensor ToTensor(const Image& image, const ChannelStats* stats) {
  Tensor t({3, image.height, image.width});
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  for (int c = 0; c < 3; ++c) {
    const double mean = stats ? stats->mean[c] : 0.0;
    const double inv_std = stats ? 1.0 / stats->std[c] : 1.0;
    for (std::size_t i = 0; i < plane; ++i) {
      t[c * plane + i] = static_cast<float>((image.pixels[c * plane + i] - mean) * inv_std);
    }
  }
  return t;
}

Tensor AugmentImage(const Image& image, const AugmentationPolicy& p, Rng& rng) {
  if (image.empty()) throw ShapeError("cannot augment an empty image");
  const ChannelStats* stats = p.normalize ? &p.stats : nullptr;
  if (p.mode == AugmentMode::kEval) return ToTensor(EvalView(image, p), stats);

  const Box box = RandomResizedCropBox(image, p, rng);
  Image view = ResizeRegion(image, box.x0, box.y0, box.w, box.h, p.crop_size, p.crop_size);
  if (p.mode == AugmentMode::kTwoView) {
    if (Bernoulli(rng, p.jitter_p)) ColorJitter(view, p, rng);
    if (Bernoulli(rng, p.grayscale_p)) view = Grayscale(view);
    if (Bernoulli(rng, p.blur_p)) {
      double sigma = Uniform(rng, p.blur_sigma_min, std::nextafter(p.blur_sigma_max, 1e9));
      if (p.blur_reference_size > 0) {
        sigma *= static_cast<double>(p.crop_size) / p.blur_reference_size;
      }
      GaussianBlur(view, sigma);
    }
  }
  if (Bernoulli(rng, p.flip_p)) FlipHorizontal(view);
  return ToTensor(view, stats);
}

std::pair<Tensor, Tensor> TwoViewAugment(const Image& image,
                                         const AugmentationPolicy& policy,
                                         std::uint64_t seed) {
  if (policy.mode != AugmentMode::kTwoView) {
    throw ConfigError("two-view augmentation needs a two_view policy");
  }
  Rng r1 = MakeRng({seed, 1});
  Rng r2 = MakeRng({seed, 2});
  Tensor a = AugmentImage(image, policy, r1);
  Tensor b = AugmentImage(image, policy, r2);
  return {std::move(a), std::move(b)};
}

Tensor SupervisedAugment(const Image& image, const AugmentationPolicy& policy,
                         std::uint64_t seed) {
  if (policy.mode == AugmentMode::kTwoView) {
    throw ConfigError("supervised augmentation needs a supervised_train or eval policy");
  }
  Rng rng = MakeRng({seed});
  return AugmentImage(image, policy, rng);
}

// ---------------------------------------------------------------------------

std::vector<std::vector<int>> EpochBatches(int dataset_size,
                                           const LoaderOptions& options,
                                           int epoch) {
  if (options.batch_size < 1) throw ConfigError("batch_size must be positive");
  std::vector<int> order(static_cast<std::size_t>(dataset_size));
  std::iota(order.begin(), order.end(), 0);
  if (options.shuffle) {
    Rng rng = MakeRng({options.seed, static_cast<std::uint64_t>(epoch), kShuffleTag});
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < dataset_size; start += options.batch_size) {
    const int end = std::min(dataset_size, start + options.batch_size);
    if (options.drop_last && end - start < options.batch_size) break;
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

namespace {

// Writes a {3, S, S} view into slot `b` of a {3, B, S, S} batch.
void PutSample(Tensor& batch, int b, const Tensor& view) {
  const std::size_t plane = static_cast<std::size_t>(view.dim(1)) * view.dim(2);
  const int n = batch.dim(1);
  for (int c = 0; c < 3; ++c) {
    std::copy_n(view.data() + c * plane, plane,
                batch.data() + (static_cast<std::size_t>(c) * n + b) * plane);
  }
}

}  // namespace

ContrastiveLoader::ContrastiveLoader(const UnlabeledImageSet& images,
                                     AugmentationPolicy policy,
                                     LoaderOptions options)
    : images_(&images), policy_(std::move(policy)), options_(options) {
  policy_.Validate();
  if (policy_.mode != AugmentMode::kTwoView) {
    throw ConfigError("contrastive loader needs a two_view policy");
  }
}

int ContrastiveLoader::BatchesPerEpoch() const {
  return static_cast<int>(EpochBatches(images_->size(), options_, 0).size());
}

void ContrastiveLoader::StartEpoch(int epoch) {
  stream_.reset();
  auto batches = std::make_shared<std::vector<std::vector<int>>>(
      EpochBatches(images_->size(), options_, epoch));
  const int s = policy_.crop_size;
  auto make = [this, batches, epoch, s](int i) {
    const std::vector<int>& idx = (*batches)[i];
    const int n = static_cast<int>(idx.size());
    ViewPairBatch out{Tensor({3, n, s, s}), Tensor({3, n, s, s}), idx};
    for (int b = 0; b < n; ++b) {
      auto [v1, v2] = TwoViewAugment(images_->image(idx[b]), policy_,
                                     SampleSeed(options_.seed, epoch, idx[b]));
      PutSample(out.view1, b, v1);
      PutSample(out.view2, b, v2);
    }
    return out;
  };
  stream_ = std::make_unique<internal::OrderedPrefetcher<ViewPairBatch>>(
      static_cast<int>(batches->size()), options_.workers, options_.prefetch, make);
}

std::optional<ViewPairBatch> ContrastiveLoader::Next() {
  if (!stream_) throw Error("ContrastiveLoader::Next before StartEpoch");
  return stream_->Next();
}

LabeledLoader::LabeledLoader(const LabeledImageSet& data,
                             AugmentationPolicy policy, LoaderOptions options)
    : data_(&data), policy_(std::move(policy)), options_(options) {
  policy_.Validate();
  if (policy_.mode == AugmentMode::kTwoView) {
    throw ConfigError("labeled loader needs a supervised_train or eval policy");
  }
}

int LabeledLoader::BatchesPerEpoch() const {
  return static_cast<int>(EpochBatches(data_->size(), options_, 0).size());
}

void LabeledLoader::StartEpoch(int epoch) {
  stream_.reset();
  auto batches = std::make_shared<std::vector<std::vector<int>>>(
      EpochBatches(data_->size(), options_, epoch));
  const int s = policy_.crop_size;
  auto make = [this, batches, epoch, s](int i) {
    const std::vector<int>& idx = (*batches)[i];
    const int n = static_cast<int>(idx.size());
    LabeledBatch out{Tensor({3, n, s, s}), {}, idx};
    out.labels.reserve(idx.size());
    for (int b = 0; b < n; ++b) {
      PutSample(out.images, b,
                SupervisedAugment(data_->image(idx[b]), policy_,
                                  SampleSeed(options_.seed, epoch, idx[b])));
      out.labels.push_back(data_->label(idx[b]));
    }
    return out;
  };
  stream_ = std::make_unique<internal::OrderedPrefetcher<LabeledBatch>>(
      static_cast<int>(batches->size()), options_.workers, options_.prefetch, make);
}

std::optional<LabeledBatch> LabeledLoader::Next() {
  if (!stream_) throw Error("LabeledLoader::Next before StartEpoch");
  return stream_->Next();
}

}  // namespace vprior
