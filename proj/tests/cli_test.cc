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
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ablation.h"
#include "run_config.h"
#include "test_util.h"
#include "vprior/errors.h"
#include "vprior/synthetic.h"

namespace vprior::cli {
namespace {

namespace fs = std::filesystem;
using ::vprior::testing::RelativeDiff;
using ::vprior::testing::TempDir;

std::string ReadText(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> Lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// Runs the CLI and remembers its output and run directory.
struct Invocation {
  int code = -1;
  std::string out;
  std::string err;
  fs::path run_dir;
};

Invocation Invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "vprior");
  std::ostringstream out, err;
  Invocation r;
  r.code = Run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  for (const std::string& line : Lines(r.out)) {
    if (line.rfind("run_dir ", 0) == 0) r.run_dir = line.substr(8);
  }
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const std::string name = ::testing::UnitTest::GetInstance()->current_test_info()->name();
    root_ = TempDir("cli_" + name);
    ShapesDatasetConfig d;
    d.classes = 3;
    d.train_per_class = 6;
    d.val_per_class = 4;
    d.image_size = 16;
    WriteShapesDataset(root_ / "data", d);
    unsetenv(kDataRootEnv);
  }

  // args[0] followed by toy-sized flags shared by every command, then the
  // rest of `args`. The data root is always at index 2.
  std::vector<std::string> Toy(const std::vector<std::string>& args) const {
    std::vector<std::string> out{args[0],
                                 "--data", (root_ / "data").string(),
                                 "--out", (root_ / "runs").string(),
                                 "--workers", "0"};
    for (const char* kv : {"augment.crop_size=12", "model.depth=10", "model.width=4",
                           "phase1.batch_size=4", "phase1.embed_dim=8", "phase1.lr_drops=",
                           "phase2.batch_size=6", "probe.epochs=3"}) {
      out.push_back("--set");
      out.push_back(kv);
    }
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
  }

  fs::path root_;
};

TEST_F(CliTest, PretrainWritesSelfDescribingRunDirectory) {
  const Invocation r = Invoke(Toy({"pretrain", "--epochs", "1", "--queue-size", "8"}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* file :
       {"config.txt", "version.txt", "command.txt", "metrics.jsonl", "phase1.ckpt", "log.txt"}) {
    EXPECT_TRUE(fs::exists(r.run_dir / file)) << file;
  }
  const FlatConfig resolved = FlatConfig::ReadFile(r.run_dir / "config.txt");
  EXPECT_EQ(resolved.GetInt("phase1.queue_size", 0), 8);
  EXPECT_EQ(resolved.GetInt("phase1.epochs", 0), 1);
  EXPECT_EQ(resolved.GetString("run.command", ""), "pretrain");
  EXPECT_NE(ReadText(r.run_dir / "version.txt").find(CodeVersion()), std::string::npos);

  // The resolved config alone relaunches an identical run.
  const Invocation again = Invoke({"pretrain", "--config", (r.run_dir / "config.txt").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_NE(again.run_dir, r.run_dir);
  EXPECT_EQ(ReadText(again.run_dir / "phase1.ckpt"), ReadText(r.run_dir / "phase1.ckpt"));
  EXPECT_EQ(ReadText(again.run_dir / "metrics.jsonl"), ReadText(r.run_dir / "metrics.jsonl"));
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
  const Invocation r = Invoke({"pretrain", "--no-such-flag"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("--no-such-flag"), std::string::npos);
  EXPECT_NE(r.err.find("--queue-size"), std::string::npos);  // usage text
  EXPECT_EQ(Invoke({}).code, kExitUsage);
  EXPECT_EQ(Invoke({"fly"}).code, kExitUsage);
  EXPECT_EQ(Invoke({"pretrain", "--help"}).code, kExitOk);
}

TEST_F(CliTest, BadConfigValuesAreUsageErrors) {
  EXPECT_EQ(Invoke(Toy({"pretrain", "--set", "phase1.nope=1"})).code, kExitUsage);
  EXPECT_EQ(Invoke(Toy({"pretrain", "--set", "phase1.epochs=many"})).code, kExitUsage);
  EXPECT_EQ(Invoke(Toy({"pretrain", "--set", "missing_equals"})).code, kExitUsage);
  EXPECT_EQ(Invoke(Toy({"finetune", "--epochs", "1"})).code, kExitUsage);  // needs --phase1
}

TEST_F(CliTest, MissingDatasetIsIoError) {
  std::vector<std::string> args = Toy({"pretrain", "--epochs", "1"});
  args[2] = (root_ / "absent").string();
  const Invocation r = Invoke(args);
  EXPECT_EQ(r.code, kExitIo);
  EXPECT_NE(r.err.find("\"error\":\"io\""), std::string::npos);
  EXPECT_TRUE(fs::exists(r.run_dir / "error.json"));
  EXPECT_EQ(Invoke(Toy({"probe", "--checkpoint", (root_ / "none.ckpt").string()})).code, kExitIo);
}

TEST_F(CliTest, NonFiniteLossExitsWithCodeFour) {
  const Invocation r = Invoke(Toy({"pretrain", "--epochs", "3", "--queue-size", "8", "--lr", "1e30"}));
  EXPECT_EQ(r.code, kExitNonFinite);
  EXPECT_TRUE(fs::exists(r.run_dir / "nonfinite_dump.json"));
}

TEST_F(CliTest, PipelineOfCommands) {
  const Invocation pre = Invoke(Toy({"pretrain", "--epochs", "1", "--queue-size", "8"}));
  ASSERT_EQ(pre.code, 0) << pre.err;
  const std::string ckpt = (pre.run_dir / "phase1.ckpt").string();

  const Invocation tuned =
      Invoke(Toy({"finetune", "--phase1", ckpt, "--epochs", "1", "--lambda", "0.5"}));
  ASSERT_EQ(tuned.code, 0) << tuned.err;
  EXPECT_NE(tuned.out.find("val_top1 "), std::string::npos);
  const Invocation scored =
      Invoke(Toy({"eval", "--checkpoint", (tuned.run_dir / "model.ckpt").string()}));
  ASSERT_EQ(scored.code, 0) << scored.err;
  // eval reproduces the accuracy finetune reported.
  const std::string reported = tuned.out.substr(tuned.out.find("val_top1 ") + 9);
  EXPECT_EQ(scored.out.substr(scored.out.find("top1 ") + 5), reported);

  const Invocation probed = Invoke(Toy({"probe", "--checkpoint", ckpt}));
  ASSERT_EQ(probed.code, 0) << probed.err;
  EXPECT_TRUE(fs::exists(probed.run_dir / "probe.ckpt"));
  EXPECT_EQ(Invoke(Toy({"probe", "--random-init"})).code, 0);
  EXPECT_EQ(Invoke(Toy({"finetune", "--no-distill", "--epochs", "1"})).code, 0);
}

TEST_F(CliTest, AblateNegativesEmitsOneRowPerCell) {
  const Invocation r = Invoke(Toy({"ablate-negatives", "--neg", "8,32,128", "--margins", "0,0.4",
                                   "--seeds", "0", "--set", "phase1.epochs=1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::vector<std::string> csv = Lines(ReadText(r.run_dir / "results.csv"));
  ASSERT_EQ(csv.size(), 7u);
  EXPECT_EQ(csv[0], "loss,margin,negatives,median_top1,top1_seed0");
  EXPECT_EQ(csv[1].rfind("info_nce,0,128,", 0), 0u);
  EXPECT_EQ(csv[6].rfind("margin_info_nce,0.4,8,", 0), 0u);

  // The m=0 cell is a plain pretrain + probe run with the same seed.
  const Invocation pre = Invoke(
      Toy({"pretrain", "--epochs", "1", "--queue-size", "32", "--margin", "0", "--seed", "0"}));
  ASSERT_EQ(pre.code, 0);
  const Invocation probe =
      Invoke(Toy({"probe", "--checkpoint", (pre.run_dir / "phase1.ckpt").string()}));
  ASSERT_EQ(probe.code, 0);
  const std::string top1 = Lines(probe.out).back().substr(9);
  EXPECT_EQ(csv[2], "info_nce,0,32," + top1 + "," + top1);
}

TEST_F(CliTest, ParallelArmsMatchSequentialArms) {
  const std::vector<std::string> base = Toy({"ablate-pipeline", "--seeds", "0,1", "--set",
                                             "phase1.epochs=1", "--set", "phase1.queue_size=8",
                                             "--set", "phase2.epochs=1"});
  const Invocation seq = Invoke(base);
  std::vector<std::string> par = base;
  par.push_back("--parallel");
  par.push_back("--jobs");
  par.push_back("3");
  const Invocation parallel = Invoke(par);
  ASSERT_EQ(seq.code, 0) << seq.err;
  ASSERT_EQ(parallel.code, 0) << parallel.err;
  const std::string csv = ReadText(seq.run_dir / "results.csv");
  EXPECT_EQ(csv, ReadText(parallel.run_dir / "results.csv"));
  EXPECT_EQ(Lines(csv).size(), 6u);
}

TEST_F(CliTest, ZeroLambdaPhaseTwoArmMatchesFineTuneArm) {
  const Invocation r = Invoke(Toy({"ablate-pipeline", "--seeds", "3", "--lambda", "0", "--set",
                                   "phase1.epochs=1", "--set", "phase1.queue_size=8", "--set",
                                   "phase2.epochs=2"}));
  ASSERT_EQ(r.code, 0) << r.err;
  auto losses = [&](const std::string& arm) {
    std::vector<double> out;
    for (const std::string& line : Lines(ReadText(r.run_dir / "arms" / "seed3" / arm / "metrics.jsonl"))) {
      const auto at = line.find("\"loss_total\":");
      if (at != std::string::npos && line.find("\"step\"") != std::string::npos) {
        out.push_back(std::strtod(line.c_str() + at + 13, nullptr));
      }
    }
    return out;
  };
  const std::vector<double> plain = losses(kArmFinetune), distilled = losses(kArmPhase2);
  ASSERT_EQ(plain.size(), 6u);
  ASSERT_EQ(distilled.size(), plain.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_LE(RelativeDiff(plain[i], distilled[i]), 1e-6);
  }
}

TEST_F(CliTest, DataRootEnvironmentVariable) {
  std::vector<std::string> args = Toy({"pretrain", "--epochs", "1", "--queue-size", "8"});
  args.erase(args.begin() + 1, args.begin() + 3);  // drop --data
  setenv(kDataRootEnv, (root_ / "data").c_str(), 1);
  const Invocation r = Invoke(args);
  unsetenv(kDataRootEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(FlatConfig::ReadFile(r.run_dir / "config.txt").GetString("data.root", ""),
            (root_ / "data").string());
}

// ---------------------------------------------------------------------------

TEST(ResolveConfigTest, PrecedenceIsCommandLineThenFileThenDefaults) {
  const fs::path dir = TempDir("cli_precedence");
  std::ofstream(dir / "run.cfg") << "phase1.epochs = 7\nphase1.lr = 0.5\ndata.root = from_file\n";
  ConfigLayers layers;
  layers.config_file = dir / "run.cfg";
  layers.command_line.Set("phase1.lr", 0.25);
  const FlatConfig cfg = ResolveConfig(layers);
  EXPECT_EQ(cfg.GetInt("phase1.epochs", 0), 7);          // file over default
  EXPECT_EQ(cfg.GetDouble("phase1.lr", 0), 0.25);        // command line over file
  EXPECT_EQ(cfg.GetInt("phase1.queue_size", 0), 4096);   // default
  EXPECT_EQ(cfg.GetString("data.root", ""), "from_file");

  layers.env_data_root = "from_env";
  EXPECT_EQ(ResolveConfig(layers).GetString("data.root", ""), "from_env");
  layers.command_line.Set("data.root", "from_cli");
  EXPECT_EQ(ResolveConfig(layers).GetString("data.root", ""), "from_cli");
}

TEST(ResolveConfigTest, RejectsUnknownKeysAndMissingFiles) {
  const fs::path dir = TempDir("cli_unknown");
  std::ofstream(dir / "bad.cfg") << "phase1.epochz = 7\n";
  ConfigLayers layers;
  layers.config_file = dir / "bad.cfg";
  EXPECT_THROW(ResolveConfig(layers), ConfigError);
  layers.config_file = dir / "absent.cfg";
  EXPECT_THROW(ResolveConfig(layers), IoError);
}

TEST(ResolveConfigTest, DefaultsParseAsTrainerConfigs) {
  const FlatConfig cfg = DefaultRunConfig();
  EXPECT_NO_THROW(Phase1Config::FromConfig(cfg).Validate());
  EXPECT_NO_THROW(Phase2Config::FromConfig(cfg).Validate());
  EXPECT_NO_THROW(ProbeConfig::FromConfig(cfg).Validate());
}

TEST(AblationTest, Median) {
  EXPECT_EQ(Median({0.3, 0.1, 0.2}), 0.2);
  EXPECT_EQ(Median({0.4, 0.1, 0.2, 0.3}), 0.25);
  EXPECT_TRUE(std::isnan(Median({})));
}

TEST(AblationTest, DropComparesLargestAndSmallestQueue) {
  NegativesTable t;
  t.seeds = {0, 1, 2};
  t.cells = {{0.0, 1024, {0.5, 0.6, 0.7}}, {0.0, 64, {0.2, 0.3, 0.1}},
             {0.6, 1024, {0.5, 0.5, 0.5}}, {0.6, 64, {0.4, 0.45, 0.5}}};
  EXPECT_NEAR(t.Drop(0.0), 0.4, 1e-12);
  EXPECT_NEAR(t.Drop(0.6), 0.05, 1e-12);
  std::ostringstream csv;
  WriteCsv(t, csv);
  EXPECT_EQ(Lines(csv.str())[0], "loss,margin,negatives,median_top1,top1_seed0,top1_seed1,top1_seed2");
  EXPECT_EQ(Lines(csv.str())[1], "info_nce,0,1024,0.6,0.5,0.6,0.7");
}

TEST(AblationTest, FailingJobReportsItsError) {
  const fs::path dir = TempDir("cli_jobs");
  const std::vector<Job> jobs{{"ok", dir / "ok", [] { return 0.5; }},
                              {"bad", dir / "bad", []() -> double { throw IoError("disk gone"); }}};
  for (const bool parallel : {false, true}) {
    try {
      RunJobs(jobs, parallel, 2);
      ADD_FAILURE() << "expected IoError";
    } catch (const IoError& e) {
      EXPECT_NE(std::string(e.what()).find("disk gone"), std::string::npos);
    }
  }
  EXPECT_EQ(RunJobs({jobs[0]}, true, 1), std::vector<double>{0.5});
}

}  // namespace
}  // namespace vprior::cli
