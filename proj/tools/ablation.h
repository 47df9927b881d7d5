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

#ifndef VPRIOR_TOOLS_ABLATION_H_
#define VPRIOR_TOOLS_ABLATION_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.h"
#include "vprior/checkpoint.h"
#include "vprior/config.h"

namespace vprior::cli {

// One unit of ablation work. `run` executes inside `dir` and returns the
// accuracy it measured.
struct Job {
  std::string name;
  std::filesystem::path dir;
  std::function<double()> run;
};

// Runs `jobs` in order, or as up to `max_parallel` forked processes when
// `parallel` is set. Each result is also written to <dir>/result.txt. A
// failing job raises the error it reported.
std::vector<double> RunJobs(const std::vector<Job>& jobs, bool parallel, int max_parallel);

double Median(std::vector<double> values);

// Phase-1 run for `cfg`, reusing a checkpoint from `cache_dir` when one was
// trained with an identical configuration. Writes metrics and the checkpoint
// under `dir`.
Checkpoint RunOrLoadPhase1(const FlatConfig& cfg, const RunData& data,
                           const std::filesystem::path& dir,
                           const std::filesystem::path& cache_dir);

struct AblationOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool parallel = false;
  int jobs = 0;  // 0: one per hardware thread
  std::filesystem::path work_dir;
  std::filesystem::path cache_dir;

  static AblationOptions FromConfig(const FlatConfig& cfg, const std::filesystem::path& work_dir);
};

struct NegativesCell {
  double margin = 0.0;
  int negatives = 0;
  std::vector<double> top1;  // one per seed

  double median() const { return Median(top1); }
};

struct NegativesTable {
  std::vector<std::uint64_t> seeds;
  std::vector<NegativesCell> cells;  // margin-major, negatives descending

  const NegativesCell& cell(double margin, int negatives) const;
  // Median accuracy at the largest K minus the median at the smallest K.
  double Drop(double margin) const;
};

// Phase 1 followed by a linear probe for every (margin, K, seed).
NegativesTable AblateNegatives(const FlatConfig& cfg, const RunData& data,
                               const std::vector<int>& negatives,
                               const std::vector<double>& margins,
                               const AblationOptions& options);

inline constexpr char kArmScratch[] = "supervised_scratch";
inline constexpr char kArmRandomProbe[] = "random_init_probe";
inline constexpr char kArmPhase1Probe[] = "phase1_probe";
inline constexpr char kArmFinetune[] = "phase1_finetune";
inline constexpr char kArmPhase2[] = "phase1_phase2";

struct PipelineRow {
  std::string arm;
  std::vector<double> top1;

  double median() const { return Median(top1); }
};

struct PipelineTable {
  std::vector<std::uint64_t> seeds;
  std::vector<PipelineRow> rows;

  const PipelineRow& row(const std::string& arm) const;
};

// The four training pipelines plus a probe of the untrained encoder, all
// scored by top-1 accuracy on the validation split.
PipelineTable AblatePipeline(const FlatConfig& cfg, const RunData& data,
                             const AblationOptions& options);

// CSV with a header row; one row per table row, the seed median followed by
// the per-seed values.
void WriteCsv(const NegativesTable& table, std::ostream& out);
void WriteCsv(const PipelineTable& table, std::ostream& out);

}  // namespace vprior::cli

#endif  // VPRIOR_TOOLS_ABLATION_H_
