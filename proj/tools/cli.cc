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

#include "cli.h"

#include <cstdlib>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ablation.h"
#include "run_config.h"
#include "vprior/checkpoint.h"
#include "vprior/errors.h"
#include "vprior/log.h"
#include "vprior/metrics.h"
#include "vprior/trainer.h"

namespace vprior::cli {

namespace fs = std::filesystem;

namespace {

// Command-line flags that are shorthands for config keys.
class FlagTable {
 public:
  void Value(CLI::App* app, const std::string& flag, std::vector<std::string> keys,
             const std::string& help) {
    std::string& slot = storage_.emplace_back();
    bindings_.push_back({app->add_option(flag, slot, help), std::move(keys), &slot});
  }

  void Switch(CLI::App* app, const std::string& flag, const std::string& key,
              const std::string& value, const std::string& help) {
    std::string& slot = storage_.emplace_back(value);
    bindings_.push_back({app->add_flag(flag, help), {key}, &slot});
  }

  void Apply(FlatConfig& cfg) const {
    for (const Binding& b : bindings_) {
      if (b.option->count() == 0) continue;
      for (const std::string& key : b.keys) cfg.Set(key, *b.value);
    }
  }

 private:
  struct Binding {
    CLI::Option* option;
    std::vector<std::string> keys;
    const std::string* value;
  };
  std::deque<std::string> storage_;
  std::vector<Binding> bindings_;
};

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> assignments;
};

void AddCommon(CLI::App* app, CommonArgs& common, FlagTable& flags) {
  app->add_option("--config", common.config_file, "Config file (key = value lines)");
  app->add_option("--set", common.assignments, "Override a config key: key=value (repeatable)");
  flags.Value(app, "--data", {"data.root"}, "Dataset root with train/ and val/ class folders");
  flags.Value(app, "--out", {"run.output_dir"}, "Directory that receives the run directory");
  flags.Value(app, "--seed", {"phase1.seed", "phase2.seed", "probe.seed"}, "Seed for every phase");
  flags.Value(app, "--workers", {"phase1.workers", "phase2.workers"},
              "Data loading threads (0 loads on the calling thread)");
}

void AddAblationFlags(CLI::App* app, FlagTable& flags) {
  flags.Value(app, "--seeds", {"ablate.seeds"}, "Comma-separated seeds");
  flags.Switch(app, "--parallel", "ablate.parallel", "true", "Run arms as separate processes");
  flags.Value(app, "--jobs", {"ablate.jobs"}, "Concurrent processes with --parallel");
  flags.Value(app, "--cache-dir", {"ablate.cache_dir"}, "Reuse phase-1 checkpoints across runs");
}

// Logs to the error stream and to <run dir>/log.txt.
class LogCapture {
 public:
  explicit LogCapture(std::ostream& err) : err_(err) {
    previous_ = SetLogSink([this](LogLevel level, const std::string& message) {
      const char* tag = level == LogLevel::kInfo ? "I" : level == LogLevel::kWarning ? "W" : "E";
      err_ << tag << " " << message << "\n";
      if (file_.is_open()) file_ << tag << " " << message << "\n" << std::flush;
    });
  }
  ~LogCapture() { SetLogSink(previous_); }
  LogCapture(const LogCapture&) = delete;
  LogCapture& operator=(const LogCapture&) = delete;

  void OpenFile(const fs::path& path) { file_.open(path, std::ios::app); }

 private:
  std::ostream& err_;
  std::ofstream file_;
  LogSink previous_;
};

TrainHooks HooksFor(MetricsLog* metrics, const fs::path& dir) {
  TrainHooks hooks;
  hooks.metrics = metrics;
  hooks.dump_dir = dir;
  hooks.on_epoch = [](const std::string& phase, int epoch, double loss) {
    Log(LogLevel::kInfo, phase + " epoch " + std::to_string(epoch) + " loss " + FormatDouble(loss));
  };
  return hooks;
}

void WriteJson(const fs::path& path, const nlohmann::ordered_json& value) {
  std::ofstream out(path);
  out << value.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + path.string());
}

fs::path RequiredPath(const FlatConfig& cfg, const std::string& key, const std::string& flag) {
  const std::string value = cfg.GetString(key, "");
  if (value.empty()) throw ConfigError(key + " is required (" + flag + ")");
  return value;
}

DatasetManifest TrainManifest(const FlatConfig& cfg) {
  const fs::path root = cfg.GetString("data.root", "");
  if (!fs::is_directory(root)) throw IoError("dataset root not found: " + root.string());
  const std::string split = cfg.GetString("data.train_split", "train");
  return LoadManifest(root, split, split);
}

// ---------------------------------------------------------------------------

int Pretrain(const FlatConfig& cfg, const fs::path& dir, std::ostream& out) {
  const DatasetManifest manifest = TrainManifest(cfg);
  SaveManifest(manifest, dir / "manifest.txt");
  const UnlabeledImageSet images = UnlabeledImageSet::FromManifest(manifest);
  std::optional<Checkpoint> resume;
  if (const std::string path = cfg.GetString("input.resume", ""); !path.empty()) {
    resume = Checkpoint::Load(path);
  }
  MetricsLog metrics(dir / "metrics.jsonl");
  const Checkpoint ckpt = PretrainPhase1(Phase1For(cfg, manifest.stats), images,
                                         HooksFor(&metrics, dir), resume ? &*resume : nullptr);
  ckpt.Save(dir / "phase1.ckpt");
  out << "checkpoint " << (dir / "phase1.ckpt").string() << "\n";
  return kExitOk;
}

int Finetune(const FlatConfig& cfg, const fs::path& dir, std::ostream& out) {
  const RunData data = LoadRunData(cfg);
  SaveManifest(data.train_manifest, dir / "manifest.txt");
  const Phase2Config p2 = Phase2For(cfg, data.train_manifest.stats);
  const std::string phase1_path = cfg.GetString("input.checkpoint", "");
  MetricsLog metrics(dir / "metrics.jsonl");
  const TrainHooks hooks = HooksFor(&metrics, dir);
  Checkpoint ckpt;
  if (phase1_path.empty()) {
    if (p2.distill) {
      throw ConfigError("finetune without a phase-1 checkpoint (--phase1) needs --no-distill");
    }
    ckpt = TrainSupervised(p2, data.train, hooks, &data.val);
  } else {
    const Checkpoint phase1 = Checkpoint::Load(phase1_path);
    ckpt = FinetunePhase2(p2, data.train, &phase1, hooks, &data.val);
  }
  ckpt.Save(dir / "model.ckpt");
  const double top1 = EvaluateTop1(ckpt, data.val, p2.eval);
  WriteJson(dir / "result.json", {{"val_top1", top1}});
  out << "checkpoint " << (dir / "model.ckpt").string() << "\n"
      << "val_top1 " << FormatDouble(top1) << "\n";
  return kExitOk;
}

int Probe(const FlatConfig& cfg, const fs::path& dir, std::ostream& out) {
  const RunData data = LoadRunData(cfg);
  const ChannelStats& stats = data.train_manifest.stats;
  std::unique_ptr<nn::ResNet> backbone;
  if (cfg.GetBool("input.random_init", false)) {
    std::unique_ptr<nn::EmbeddingModel> encoder = InitialEncoder(Phase1For(cfg, stats));
    backbone = std::make_unique<nn::ResNet>(encoder->backbone().config());
    const nn::StateList src = encoder->backbone().State();
    const nn::StateList dst = backbone->State();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = *src[i].tensor;
  } else {
    backbone = LoadBackbone(
        Checkpoint::Load(RequiredPath(cfg, "input.checkpoint", "--checkpoint or --random-init")));
  }
  MetricsLog metrics(dir / "metrics.jsonl");
  ProbeResult result = LinearProbe(*backbone, data.train, data.val, ProbeFor(cfg, stats), &metrics);
  Classifier model{std::move(backbone), std::move(result.head)};
  ClassifierCheckpoint(model, "probe", cfg).Save(dir / "probe.ckpt");
  WriteJson(dir / "result.json",
            {{"val_top1", result.val_top1}, {"train_top1", result.train_top1}});
  out << "checkpoint " << (dir / "probe.ckpt").string() << "\n"
      << "val_top1 " << FormatDouble(result.val_top1) << "\n";
  return kExitOk;
}

int Eval(const FlatConfig& cfg, const fs::path& dir, std::ostream& out) {
  const Checkpoint ckpt = Checkpoint::Load(RequiredPath(cfg, "input.checkpoint", "--checkpoint"));
  const fs::path root = cfg.GetString("data.root", "");
  if (!fs::is_directory(root)) throw IoError("dataset root not found: " + root.string());
  const std::string split = cfg.GetString("eval.split", "val");
  const DatasetManifest manifest =
      LoadManifest(root, split, cfg.GetString("data.train_split", "train"));
  const LabeledImageSet data = LabeledImageSet::FromManifest(manifest);
  const double top1 = EvaluateTop1(ckpt, data, Phase2For(cfg, manifest.stats).eval);
  WriteJson(dir / "result.json", {{"split", split}, {"top1", top1}});
  out << "top1 " << FormatDouble(top1) << "\n";
  return kExitOk;
}

void WriteTable(const fs::path& dir, std::ostream& out,
                const std::function<void(std::ostream&)>& write) {
  std::ofstream csv(dir / "results.csv");
  write(csv);
  if (!csv) throw IoError("cannot write " + (dir / "results.csv").string());
  write(out);
}

int AblateNegativesCommand(const FlatConfig& cfg, const fs::path& dir, std::ostream& out) {
  const RunData data = LoadRunData(cfg);
  std::vector<double> margins = cfg.GetDoubleList("ablate.margins", {});
  const NegativesTable table =
      AblateNegatives(cfg, data, cfg.GetIntList("ablate.negatives", {}), margins,
                      AblationOptions::FromConfig(cfg, dir / "arms"));
  WriteTable(dir, out, [&](std::ostream& s) { WriteCsv(table, s); });
  return kExitOk;
}

int AblatePipelineCommand(const FlatConfig& cfg, const fs::path& dir, std::ostream& out) {
  const RunData data = LoadRunData(cfg);
  const PipelineTable table =
      AblatePipeline(cfg, data, AblationOptions::FromConfig(cfg, dir / "arms"));
  WriteTable(dir, out, [&](std::ostream& s) { WriteCsv(table, s); });
  return kExitOk;
}

// Parses every trainer config so that bad values fail before a run starts.
void Precheck(const FlatConfig& cfg) {
  // Warnings are reported once, by the command itself.
  const LogSink previous = SetLogSink([](LogLevel, const std::string&) {});
  struct Restore {
    const LogSink& sink;
    ~Restore() { SetLogSink(sink); }
  } restore{previous};
  Phase1Config::FromConfig(cfg).Validate();
  Phase2Config::FromConfig(cfg).Validate();
  ProbeConfig::FromConfig(cfg).Validate();
  AblationOptions::FromConfig(cfg, {});
}

int ExitCodeFor(const std::exception& e, std::string& kind) {
  if (dynamic_cast<const ConfigError*>(&e)) {
    kind = "config";
    return kExitUsage;
  }
  if (dynamic_cast<const IoError*>(&e)) {
    kind = "io";
    return kExitIo;
  }
  if (dynamic_cast<const NonFiniteLossError*>(&e)) {
    kind = "nonfinite_loss";
    return kExitNonFinite;
  }
  kind = dynamic_cast<const Error*>(&e) ? "error" : "internal";
  return kExitFailure;
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive pretraining, self-distillation and evaluation", "vprior"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CodeVersion());

  using Command = std::function<int(const FlatConfig&, const fs::path&, std::ostream&)>;
  std::map<CLI::App*, Command> commands;
  CommonArgs common;
  FlagTable flags;

  CLI::App* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining (phase 1)");
  AddCommon(pretrain, common, flags);
  flags.Value(pretrain, "--epochs", {"phase1.epochs"}, "Training epochs");
  flags.Value(pretrain, "--queue-size", {"phase1.queue_size"}, "Negative queue capacity K");
  flags.Value(pretrain, "--margin", {"phase1.margin"}, "Margin on the positive logit");
  flags.Value(pretrain, "--batch-size", {"phase1.batch_size"}, "Batch size");
  flags.Value(pretrain, "--lr", {"phase1.lr"}, "Base learning rate");
  flags.Value(pretrain, "--resume", {"input.resume"}, "Continue from a phase-1 checkpoint");
  commands[pretrain] = Pretrain;

  CLI::App* finetune = app.add_subcommand("finetune", "Supervised fine-tuning (phase 2)");
  AddCommon(finetune, common, flags);
  flags.Value(finetune, "--phase1", {"input.checkpoint"}, "Phase-1 checkpoint");
  flags.Value(finetune, "--epochs", {"phase2.epochs"}, "Training epochs");
  flags.Value(finetune, "--lambda", {"phase2.distill_weight"}, "Distillation weight");
  flags.Switch(finetune, "--no-distill", "phase2.distill", "false", "Plain fine-tuning");
  flags.Value(finetune, "--batch-size", {"phase2.batch_size"}, "Batch size");
  flags.Value(finetune, "--lr", {"phase2.lr"}, "Base learning rate");
  commands[finetune] = Finetune;

  CLI::App* probe = app.add_subcommand("probe", "Linear probe on a frozen backbone");
  AddCommon(probe, common, flags);
  flags.Value(probe, "--checkpoint", {"input.checkpoint"}, "Checkpoint with a backbone");
  flags.Switch(probe, "--random-init", "input.random_init", "true",
               "Probe the untrained phase-1 encoder");
  flags.Value(probe, "--epochs", {"probe.epochs"}, "Probe epochs");
  flags.Value(probe, "--lr", {"probe.lr"}, "Probe learning rate");
  commands[probe] = Probe;

  CLI::App* eval = app.add_subcommand("eval", "Top-1 accuracy of a classifier checkpoint");
  AddCommon(eval, common, flags);
  flags.Value(eval, "--checkpoint", {"input.checkpoint"}, "Classifier checkpoint");
  flags.Value(eval, "--split", {"eval.split"}, "Dataset split to score");
  commands[eval] = Eval;

  CLI::App* negatives =
      app.add_subcommand("ablate-negatives", "Probe accuracy over queue sizes and margins");
  AddCommon(negatives, common, flags);
  AddAblationFlags(negatives, flags);
  flags.Value(negatives, "--neg", {"ablate.negatives"}, "Comma-separated queue sizes");
  flags.Value(negatives, "--margins", {"ablate.margins"}, "Comma-separated margins");
  commands[negatives] = AblateNegativesCommand;

  CLI::App* pipeline =
      app.add_subcommand("ablate-pipeline", "Compare supervised, probe and fine-tuning pipelines");
  AddCommon(pipeline, common, flags);
  AddAblationFlags(pipeline, flags);
  flags.Value(pipeline, "--lambda", {"phase2.distill_weight"}, "Distillation weight");
  commands[pipeline] = AblatePipelineCommand;

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  CLI::App* selected = app.get_subcommands().front();
  const std::string command = selected->get_name();
  LogCapture log(err);
  fs::path dir;
  try {
    FlatConfig command_line;
    for (const std::string& a : common.assignments) command_line.SetAssignment(a);
    flags.Apply(command_line);
    ConfigLayers layers;
    layers.config_file = common.config_file;
    if (const char* env = std::getenv(kDataRootEnv)) layers.env_data_root = env;
    layers.command_line = command_line;
    FlatConfig resolved = ResolveConfig(layers);
    resolved.Set("run.command", command);
    Precheck(resolved);

    const RunConfig run = RunConfig::FromConfig(command, resolved);
    dir = CreateRunDirectory(run, args);
    log.OpenFile(dir / "log.txt");
    out << "run_dir " << dir.string() << "\n";
    return commands.at(selected)(resolved, dir, out);
  } catch (const std::exception& e) {
    std::string kind;
    const int code = ExitCodeFor(e, kind);
    const nlohmann::ordered_json record{
        {"error", kind}, {"command", command}, {"message", e.what()}, {"exit_code", code}};
    err << record.dump() << "\n";
    if (!dir.empty()) {
      std::ofstream(dir / "error.json") << record.dump(2) << "\n";
    }
    return code;
  }
}

}  // namespace vprior::cli
