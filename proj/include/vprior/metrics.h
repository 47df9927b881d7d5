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

#ifndef VPRIOR_METRICS_H_
#define VPRIOR_METRICS_H_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vprior/digest.h"

namespace vprior {

struct StepMetrics {
  std::string phase;
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  std::optional<double> loss_ce;
  std::optional<double> loss_distill;
  std::optional<double> loss_contrastive;
};

// JSON-lines metrics stream. Each record is flushed as it is written. Keeps
// the step records in memory for comparisons and a digest of every line.
class MetricsLog {
 public:
  MetricsLog() = default;
  // Appends to `file` (created if needed). Throws IoError.
  explicit MetricsLog(const std::filesystem::path& file);

  void LogStep(const StepMetrics& m);
  void LogEpoch(const std::string& phase, int epoch,
                const std::map<std::string, double>& values);

  const std::vector<StepMetrics>& steps() const { return steps_; }
  std::vector<double> TotalLosses(const std::string& phase) const;
  std::uint64_t digest() const { return digest_.value(); }

 private:
  void Write(const std::string& line);

  std::ofstream out_;
  std::vector<StepMetrics> steps_;
  Digest digest_;
};

}  // namespace vprior

#endif  // VPRIOR_METRICS_H_
