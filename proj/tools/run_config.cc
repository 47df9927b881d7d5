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

#include "run_config.h"

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>

#include "version.h"
#include "vprior/errors.h"

namespace vprior::cli {

namespace fs = std::filesystem;

FlatConfig DefaultRunConfig() {
  FlatConfig cfg = DefaultTrainingConfig();
  cfg.Set("data.root", "data");
  cfg.Set("data.train_split", "train");
  cfg.Set("data.val_split", "val");
  cfg.Set("run.output_dir", "runs");
  cfg.Set("run.command", "");
  cfg.Set("input.checkpoint", "");
  cfg.Set("input.resume", "");
  cfg.Set("input.random_init", false);
  cfg.Set("eval.split", "val");
  cfg.Set("ablate.negatives", std::vector<int>{64, 256, 1024});
  cfg.Set("ablate.margins", std::vector<double>{0.0, 0.6});
  cfg.Set("ablate.seeds", std::vector<int>{0, 1, 2});
  cfg.Set("ablate.parallel", false);
  cfg.Set("ablate.jobs", 0);
  cfg.Set("ablate.cache_dir", "");
  return cfg;
}

FlatConfig ResolveConfig(const ConfigLayers& layers) {
  FlatConfig cfg = DefaultRunConfig();
  std::set<std::string> known;
  for (const auto& [key, value] : cfg.values()) known.insert(key);

  auto merge_checked = [&](const FlatConfig& layer, const std::string& source) {
    const std::vector<std::string> unknown = layer.UnknownKeys(known);
    if (!unknown.empty()) {
      std::string names;
      for (const std::string& k : unknown) names += (names.empty() ? "" : ", ") + k;
      throw ConfigError("unknown config key(s) in " + source + ": " + names);
    }
    cfg.Merge(layer);
  };
  if (!layers.config_file.empty()) {
    merge_checked(FlatConfig::ReadFile(layers.config_file), layers.config_file.string());
  }
  if (!layers.env_data_root.empty()) cfg.Set("data.root", layers.env_data_root);
  merge_checked(layers.command_line, "command line");
  return cfg;
}

RunConfig RunConfig::FromConfig(const std::string& command, const FlatConfig& resolved) {
  RunConfig run;
  run.command = command;
  run.resolved = resolved;
  run.data_root = resolved.GetString("data.root", "");
  run.output_dir = resolved.GetString("run.output_dir", "runs");
  run.seed = resolved.GetUint("phase1.seed", 0);
  return run;
}

namespace {

DatasetManifest LoadSplit(const fs::path& root, const std::string& split,
                          const std::string& stats_split) {
  if (!fs::is_directory(root)) throw IoError("dataset root not found: " + root.string());
  return LoadManifest(root, split, stats_split);
}

}  // namespace

RunData LoadRunData(const FlatConfig& cfg) {
  const fs::path root = cfg.GetString("data.root", "");
  const std::string train_split = cfg.GetString("data.train_split", "train");
  const std::string val_split = cfg.GetString("data.val_split", "val");
  DatasetManifest train = LoadSplit(root, train_split, train_split);
  DatasetManifest val = LoadSplit(root, val_split, train_split);
  UnlabeledImageSet unlabeled = UnlabeledImageSet::FromManifest(train);
  LabeledImageSet train_set = LabeledImageSet::FromManifest(train);
  LabeledImageSet val_set = LabeledImageSet::FromManifest(val);
  return RunData{std::move(train), std::move(val), std::move(unlabeled), std::move(train_set),
                 std::move(val_set)};
}

Phase1Config Phase1For(const FlatConfig& cfg, const ChannelStats& stats) {
  Phase1Config c = Phase1Config::FromConfig(cfg);
  c.augment.stats = stats;
  return c;
}

Phase2Config Phase2For(const FlatConfig& cfg, const ChannelStats& stats) {
  Phase2Config c = Phase2Config::FromConfig(cfg);
  c.augment.stats = stats;
  c.eval.stats = stats;
  return c;
}

ProbeConfig ProbeFor(const FlatConfig& cfg, const ChannelStats& stats) {
  ProbeConfig c = ProbeConfig::FromConfig(cfg);
  c.eval.stats = stats;
  return c;
}

void SetAllSeeds(FlatConfig& cfg, std::uint64_t seed) {
  cfg.Set("phase1.seed", seed);
  cfg.Set("phase2.seed", seed);
  cfg.Set("probe.seed", seed);
}

std::string CodeVersion() {
  return std::string(kVersion) + " (" + kGitRevision + ")";
}

fs::path CreateRunDirectory(const RunConfig& run, const std::vector<std::string>& argv) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  std::error_code ec;
  fs::create_directories(run.output_dir, ec);
  if (ec) throw IoError("cannot create " + run.output_dir.string() + ": " + ec.message());

  const std::string base = std::string(stamp) + "-" + run.command;
  fs::path dir;
  for (int n = 1;; ++n) {
    dir = run.output_dir / (n == 1 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(dir, ec)) break;
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }

  run.resolved.WriteFile(dir / "config.txt");
  std::ofstream version(dir / "version.txt");
  version << "vprior " << CodeVersion() << "\n"
          << "command " << run.command << "\n";
  std::ofstream cmd(dir / "command.txt");
  for (std::size_t i = 0; i < argv.size(); ++i) cmd << (i ? " " : "") << argv[i];
  cmd << "\n";
  if (!version || !cmd) throw IoError("cannot write run metadata in " + dir.string());
  return dir;
}

}  // namespace vprior::cli
