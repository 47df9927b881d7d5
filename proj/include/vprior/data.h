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

#ifndef VPRIOR_DATA_H_
#define VPRIOR_DATA_H_

#include <algorithm>
#include <array>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vprior/image.h"
#include "vprior/random.h"
#include "vprior/tensor.h"

namespace vprior {

// ---------------------------------------------------------------------------
// Manifests

struct ChannelStats {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.25, 0.25, 0.25};
};

ChannelStats ComputeChannelStats(const std::vector<Image>& images);

struct ManifestEntry {
  std::string path;  // relative to the manifest root
  int label = 0;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::vector<std::string> class_names;  // index == class label
  std::vector<ManifestEntry> entries;
  ChannelStats stats;
  std::vector<std::string> warnings;

  int class_count() const { return static_cast<int>(class_names.size()); }
  std::filesystem::path Resolve(const ManifestEntry& e) const { return root / e.path; }
};

// Scans root/<split>/<class>/<image> (png, ppm, pgm, pnm). Classes are
// indexed by sorted directory name and entries are sorted by path.
// Normalization statistics come from root/<stats_split>, falling back to
// the scanned split when that directory does not exist. Throws IoError when
// the split directory is missing.
DatasetManifest LoadManifest(const std::filesystem::path& root,
                             const std::string& split,
                             const std::string& stats_split = "train");

// Text form: '#'-prefixed metadata lines followed by "path<TAB>label".
void SaveManifest(const DatasetManifest& manifest,
                  const std::filesystem::path& file);
DatasetManifest ReadManifest(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Decoded image sets

// Images only; this is the sole input type accepted by phase-1 training.
class UnlabeledImageSet {
 public:
  UnlabeledImageSet() = default;
  explicit UnlabeledImageSet(std::vector<Image> images)
      : images_(std::move(images)) {}
  // Undecodable files are logged and skipped.
  static UnlabeledImageSet FromManifest(const DatasetManifest& manifest);

  int size() const { return static_cast<int>(images_.size()); }
  const Image& image(int i) const { return images_[i]; }
  int skipped() const { return skipped_; }

 private:
  std::vector<Image> images_;
  int skipped_ = 0;
};

class LabeledImageSet {
 public:
  LabeledImageSet() = default;
  // Throws ValidationError for mismatched sizes or labels outside [0, C).
  LabeledImageSet(std::vector<Image> images, std::vector<int> labels,
                  int class_count);
  static LabeledImageSet FromManifest(const DatasetManifest& manifest);

  int size() const { return static_cast<int>(images_.size()); }
  const Image& image(int i) const { return images_[i]; }
  int label(int i) const { return labels_[i]; }
  const std::vector<int>& labels() const { return labels_; }
  int class_count() const { return class_count_; }
  int skipped() const { return skipped_; }

 private:
  std::vector<Image> images_;
  std::vector<int> labels_;
  int class_count_ = 0;
  int skipped_ = 0;
};

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentMode { kTwoView, kSupervisedTrain, kEval };

const char* AugmentModeName(AugmentMode mode);
AugmentMode ParseAugmentMode(const std::string& name);

struct AugmentationPolicy {
  AugmentMode mode = AugmentMode::kTwoView;
  int crop_size = 32;
  // Random resized crop.
  double scale_min = 0.2;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  // Color jitter (applied in random order).
  double jitter_p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_p = 0.2;
  // Gaussian blur; sigma is drawn in [min, max] and scaled by
  // crop_size / blur_reference_size (no scaling when the reference is 0).
  double blur_p = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  int blur_reference_size = 224;
  double flip_p = 0.5;
  // Eval: resize the shorter side to crop_size / eval_crop_fraction, then
  // center crop.
  double eval_crop_fraction = 0.875;
  bool normalize = true;
  ChannelStats stats;

  static AugmentationPolicy TwoView(int crop_size);
  static AugmentationPolicy SupervisedTrain(int crop_size);
  static AugmentationPolicy Eval(int crop_size);

  // Throws ConfigError for out-of-range values.
  void Validate() const;
};

// Resamples the box [x0, x0 + w) x [y0, y0 + h) to out_w x out_h with a
// separable triangle filter (antialiased when shrinking).
Image ResizeRegion(const Image& src, double x0, double y0, double w, double h,
                   int out_w, int out_h);

// One pass of the stochastic pipeline for the policy's mode; output is
// {3, S, S}.
Tensor AugmentImage(const Image& image, const AugmentationPolicy& policy,
                    Rng& rng);

// Two independent draws of the two-view pipeline. Same (image, seed) gives
// the same pair.
std::pair<Tensor, Tensor> TwoViewAugment(const Image& image,
                                         const AugmentationPolicy& policy,
                                         std::uint64_t seed);

// supervised_train or eval. Eval ignores the seed.
Tensor SupervisedAugment(const Image& image, const AugmentationPolicy& policy,
                         std::uint64_t seed);

// Converts to {3, H, W} with optional per-channel normalization.
Tensor ToTensor(const Image& image, const ChannelStats* stats);

// ---------------------------------------------------------------------------
// Batching

struct LoaderOptions {
  int batch_size = 32;
  std::uint64_t seed = 0;
  int workers = 1;   // 0 runs augmentation on the consuming thread
  int prefetch = 4;  // batches buffered ahead of the consumer
  bool shuffle = true;
  bool drop_last = true;
};

// Dataset indices of each batch for one epoch.
std::vector<std::vector<int>> EpochBatches(int dataset_size,
                                           const LoaderOptions& options,
                                           int epoch);

// Per-sample augmentation seed; independent of batch order and workers.
inline std::uint64_t SampleSeed(std::uint64_t seed, int epoch, int index) {
  return DeriveSeed({seed, static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(index)});
}

namespace internal {

// Produces items 0..count-1 with `workers` threads into a bounded buffer and
// hands them out in index order. A failed item rethrows its exception when
// its turn comes.
template <typename T>
class OrderedPrefetcher {
 public:
  OrderedPrefetcher(int count, int workers, int capacity,
                    std::function<T(int)> make)
      : count_(count), capacity_(std::max(1, capacity)), make_(std::move(make)) {
    for (int w = 0; w < workers; ++w) {
      threads_.emplace_back([this, w, workers] { Work(w, workers); });
    }
  }
  ~OrderedPrefetcher() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (std::thread& t : threads_) t.join();
  }
  OrderedPrefetcher(const OrderedPrefetcher&) = delete;
  OrderedPrefetcher& operator=(const OrderedPrefetcher&) = delete;

  std::optional<T> Next() {
    if (next_ >= count_) return std::nullopt;
    if (threads_.empty()) return make_(next_++);
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return ready_.count(next_) > 0 || errors_.count(next_) > 0; });
    if (auto it = errors_.find(next_); it != errors_.end()) {
      std::exception_ptr error = it->second;
      errors_.erase(it);
      ++next_;
      lock.unlock();
      cv_.notify_all();
      std::rethrow_exception(error);
    }
    T item = std::move(ready_.at(next_));
    ready_.erase(next_);
    ++next_;
    lock.unlock();
    cv_.notify_all();
    return item;
  }

 private:
  void Work(int first, int stride) {
    for (int i = first; i < count_; i += stride) {
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || i < next_ + capacity_; });
        if (stop_) return;
      }
      try {
        T item = make_(i);
        std::lock_guard<std::mutex> lock(mu_);
        ready_.emplace(i, std::move(item));
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        errors_.emplace(i, std::current_exception());
      }
      cv_.notify_all();
    }
  }

  const int count_;
  const int capacity_;
  std::function<T(int)> make_;
  int next_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<int, T> ready_;
  std::map<int, std::exception_ptr> errors_;
  bool stop_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace internal

// Two augmented views per image, channel-major {3, B, S, S}.
struct ViewPairBatch {
  Tensor view1;
  Tensor view2;
  std::vector<int> indices;
};

struct LabeledBatch {
  Tensor images;
  std::vector<int> labels;
  std::vector<int> indices;
};

class ContrastiveLoader {
 public:
  // `images` must outlive the loader.
  ContrastiveLoader(const UnlabeledImageSet& images, AugmentationPolicy policy,
                    LoaderOptions options);

  int BatchesPerEpoch() const;
  void StartEpoch(int epoch);
  std::optional<ViewPairBatch> Next();

 private:
  const UnlabeledImageSet* images_;
  AugmentationPolicy policy_;
  LoaderOptions options_;
  std::unique_ptr<internal::OrderedPrefetcher<ViewPairBatch>> stream_;
};

class LabeledLoader {
 public:
  // `data` must outlive the loader. Eval policies are deterministic.
  LabeledLoader(const LabeledImageSet& data, AugmentationPolicy policy,
                LoaderOptions options);

  int BatchesPerEpoch() const;
  void StartEpoch(int epoch);
  std::optional<LabeledBatch> Next();

 private:
  const LabeledImageSet* data_;
  AugmentationPolicy policy_;
  LoaderOptions options_;
  std::unique_ptr<internal::OrderedPrefetcher<LabeledBatch>> stream_;
};

}  // namespace vprior

#endif  // VPRIOR_DATA_H_
