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

#ifndef VPRIOR_TOOLS_RUN_CONFIG_H_
#define VPRIOR_TOOLS_RUN_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vprior/config.h"
#include "vprior/data.h"
#include "vprior/trainer.h"

namespace vprior::cli {

inline constexpr char kDataRootEnv[] = "VPRIOR_DATA_ROOT";

// Every key the CLI accepts: the trainer keys plus data, run, input and
// ablation settings.
FlatConfig DefaultRunConfig();

// Layers, lowest precedence first: defaults, the config file (if any), then
// command-line assignments. The environment data root sits between the file
// and the command line. Throws ConfigError on unknown keys.
struct ConfigLayers {
  std::filesystem::path config_file;
  std::string env_data_root;
  FlatConfig command_line;
};
FlatConfig ResolveConfig(const ConfigLayers& layers);

struct RunConfig {
  std::string command;
  std::filesystem::path data_root;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  FlatConfig resolved;

  static RunConfig FromConfig(const std::string& command, const FlatConfig& resolved);
};

// Train/val datasets of a run with normalization statistics from the train
// split. Throws IoError when the root or a split is missing.
struct RunData {
  DatasetManifest train_manifest;
  DatasetManifest val_manifest;
  UnlabeledImageSet unlabeled;
  LabeledImageSet train;
  LabeledImageSet val;
};
RunData LoadRunData(const FlatConfig& cfg);

// Trainer configs from `cfg`, with the normalization statistics filled in.
Phase1Config Phase1For(const FlatConfig& cfg, const ChannelStats& stats);
Phase2Config Phase2For(const FlatConfig& cfg, const ChannelStats& stats);
ProbeConfig ProbeFor(const FlatConfig& cfg, const ChannelStats& stats);

// Sets every seed key of `cfg` to `seed`.
void SetAllSeeds(FlatConfig& cfg, std::uint64_t seed);

// "<version> (<git revision>)" as stamped at configure time.
std::string CodeVersion();

// Creates <output_dir>/<YYYYmmdd-HHMMSS>-<command>[-N] and writes the
// resolved config, the code version and the invoking command line into it.
std::filesystem::path CreateRunDirectory(const RunConfig& run,
                                         const std::vector<std::string>& argv);

}  // namespace vprior::cli

#endif  // VPRIOR_TOOLS_RUN_CONFIG_H_
