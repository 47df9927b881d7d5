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

#include "ablation.h"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "vprior/errors.h"
#include "vprior/log.h"
#include "vprior/metrics.h"
#include "vprior/trainer.h"

namespace vprior::cli {

namespace fs = std::filesystem;

namespace {

std::string ErrorKind(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const NonFiniteLossError*>(&e)) return "nonfinite";
  return "error";
}

[[noreturn]] void Rethrow(const std::string& kind, const std::string& message) {
  if (kind == "io") throw IoError(message);
  if (kind == "config") throw ConfigError(message);
  if (kind == "nonfinite") throw NonFiniteLossError(message);
  throw Error(message);
}

void WriteResult(const fs::path& dir, double value) {
  std::ofstream out(dir / "result.txt");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  out << buf << "\n";
  if (!out) throw IoError("cannot write " + (dir / "result.txt").string());
}

double ReadResult(const fs::path& dir) {
  std::ifstream in(dir / "result.txt");
  std::string text;
  if (!(in >> text)) throw IoError("missing result in " + dir.string());
  return std::strtod(text.c_str(), nullptr);
}

// Runs in a forked child; never returns.
[[noreturn]] void RunChild(const Job& job) {
  int code = 0;
  try {
    WriteResult(job.dir, job.run());
  } catch (const std::exception& e) {
    std::ofstream err(job.dir / "error.txt");
    err << ErrorKind(e) << "\n" << e.what();
    code = 1;
  }
  std::fflush(nullptr);
  _exit(code);
}

std::string Hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string SeedName(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string CellName(double margin, int negatives, std::uint64_t seed) {
  return "m" + FormatDouble(margin) + "-K" + std::to_string(negatives) + "-" + SeedName(seed);
}

MetricsLog OpenMetrics(const fs::path& dir) { return MetricsLog(dir / "metrics.jsonl"); }

TrainHooks ArmHooks(MetricsLog* metrics, const fs::path& dir) {
  TrainHooks hooks;
  hooks.metrics = metrics;
  hooks.dump_dir = dir;
  hooks.on_epoch = [arm = dir.parent_path().filename().string() + "/" + dir.filename().string()](
                       const std::string& phase, int epoch, double loss) {
    if (epoch % 10 == 9) {
      Log(LogLevel::kInfo, arm + " " + phase + " epoch " + std::to_string(epoch) + " loss " +
                               FormatDouble(loss));
    }
  };
  return hooks;
}

double ProbeCheckpoint(const Checkpoint& ckpt, const FlatConfig& cfg, const RunData& data,
                       const fs::path& dir) {
  std::unique_ptr<nn::ResNet> backbone = LoadBackbone(ckpt);
  MetricsLog metrics = OpenMetrics(dir);
  return LinearProbe(*backbone, data.train, data.val,
                     ProbeFor(cfg, data.train_manifest.stats), &metrics)
      .val_top1;
}

}  // namespace

std::vector<double> RunJobs(const std::vector<Job>& jobs, bool parallel, int max_parallel) {
  std::vector<double> results(jobs.size(), std::numeric_limits<double>::quiet_NaN());
  for (const Job& job : jobs) fs::create_directories(job.dir);
  if (!parallel) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      Log(LogLevel::kInfo, "running " + jobs[i].name);
      results[i] = jobs[i].run();
      WriteResult(jobs[i].dir, results[i]);
    }
    return results;
  }

  if (max_parallel <= 0) max_parallel = std::max(1u, std::thread::hardware_concurrency());
  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;
  std::vector<int> status(jobs.size(), 0);
  while (next < jobs.size() || !running.empty()) {
    while (next < jobs.size() && static_cast<int>(running.size()) < max_parallel) {
      Log(LogLevel::kInfo, "starting " + jobs[next].name);
      std::fflush(nullptr);
      const pid_t pid = fork();
      if (pid < 0) throw Error("fork failed for " + jobs[next].name);
      if (pid == 0) RunChild(jobs[next]);
      running[pid] = next++;
    }
    int st = 0;
    const pid_t done = waitpid(-1, &st, 0);
    if (done < 0) throw Error("waitpid failed");
    auto it = running.find(done);
    if (it == running.end()) continue;
    status[it->second] = st;
    running.erase(it);
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (WIFEXITED(status[i]) && WEXITSTATUS(status[i]) == 0) {
      results[i] = ReadResult(jobs[i].dir);
      continue;
    }
    std::ifstream err(jobs[i].dir / "error.txt");
    std::string kind;
    std::getline(err, kind);
    std::stringstream rest;
    rest << err.rdbuf();
    if (kind.empty()) {
      throw Error(jobs[i].name + " terminated abnormally (status " + std::to_string(status[i]) + ")");
    }
    Rethrow(kind, jobs[i].name + ": " + rest.str());
  }
  return results;
}

double Median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Checkpoint RunOrLoadPhase1(const FlatConfig& cfg, const RunData& data, const fs::path& dir,
                           const fs::path& cache_dir) {
  FlatConfig key = cfg.Section("phase1");
  key.Merge(cfg.Section("model"));
  key.Merge(cfg.Section("augment"));
  key.Erase("phase1.workers");
  key.Set("data.root", fs::absolute(cfg.GetString("data.root", "")).lexically_normal().string());
  key.Set("data.train_split", cfg.GetString("data.train_split", "train"));
  const fs::path cached =
      cache_dir.empty() ? fs::path() : cache_dir / ("phase1-" + Hex(key.Hash()) + ".ckpt");

  fs::create_directories(dir);
  if (!cached.empty() && fs::exists(cached)) {
    Log(LogLevel::kInfo, "reusing " + cached.string());
    fs::copy_file(cached, dir / "phase1.ckpt", fs::copy_options::overwrite_existing);
    return Checkpoint::Load(cached);
  }
  MetricsLog metrics = OpenMetrics(dir);
  Checkpoint ckpt = PretrainPhase1(Phase1For(cfg, data.train_manifest.stats), data.unlabeled,
                                   ArmHooks(&metrics, dir));
  ckpt.Save(dir / "phase1.ckpt");
  if (!cached.empty()) {
    fs::create_directories(cache_dir);
    ckpt.Save(cached);
  }
  return ckpt;
}

AblationOptions AblationOptions::FromConfig(const FlatConfig& cfg, const fs::path& work_dir) {
  AblationOptions o;
  o.seeds.clear();
  for (int s : cfg.GetIntList("ablate.seeds", {0, 1, 2})) {
    if (s < 0) throw ConfigError("ablate.seeds must be non-negative");
    o.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (o.seeds.empty()) throw ConfigError("ablate.seeds is empty");
  o.parallel = cfg.GetBool("ablate.parallel", false);
  o.jobs = cfg.GetInt("ablate.jobs", 0);
  o.work_dir = work_dir;
  o.cache_dir = cfg.GetString("ablate.cache_dir", "");
  return o;
}

// ---------------------------------------------------------------------------

const NegativesCell& NegativesTable::cell(double margin, int negatives) const {
  for (const NegativesCell& c : cells) {
    if (c.margin == margin && c.negatives == negatives) return c;
  }
  throw ValidationError("no cell for margin " + FormatDouble(margin) + " and K " +
                        std::to_string(negatives));
}

double NegativesTable::Drop(double margin) const {
  int lo = std::numeric_limits<int>::max(), hi = 0;
  for (const NegativesCell& c : cells) {
    if (c.margin != margin) continue;
    lo = std::min(lo, c.negatives);
    hi = std::max(hi, c.negatives);
  }
  return cell(margin, hi).median() - cell(margin, lo).median();
}

NegativesTable AblateNegatives(const FlatConfig& cfg, const RunData& data,
                               const std::vector<int>& negatives,
                               const std::vector<double>& margins,
                               const AblationOptions& options) {
  if (negatives.empty() || margins.empty()) throw ConfigError("ablation grid is empty");
  std::vector<int> ks = negatives;
  std::sort(ks.rbegin(), ks.rend());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  NegativesTable table;
  table.seeds = options.seeds;
  std::vector<Job> jobs;
  for (double m : margins) {
    for (int k : ks) {
      table.cells.push_back({m, k, {}});
      for (std::uint64_t seed : options.seeds) {
        FlatConfig arm = cfg;
        arm.Set("phase1.margin", m);
        arm.Set("phase1.queue_size", k);
        SetAllSeeds(arm, seed);
        // Fail on bad settings before any job starts.
        Phase1For(arm, data.train_manifest.stats).Validate();
        const fs::path dir = options.work_dir / CellName(m, k, seed);
        const fs::path cache = options.cache_dir;
        jobs.push_back({CellName(m, k, seed), dir, [arm, dir, cache, &data] {
                          const Checkpoint ckpt = RunOrLoadPhase1(arm, data, dir, cache);
                          return ProbeCheckpoint(ckpt, arm, data, dir);
                        }});
      }
    }
  }
  const std::vector<double> results = RunJobs(jobs, options.parallel, options.jobs);
  std::size_t i = 0;
  for (NegativesCell& c : table.cells) {
    for (std::size_t s = 0; s < options.seeds.size(); ++s) c.top1.push_back(results[i++]);
  }
  return table;
}

// ---------------------------------------------------------------------------

const PipelineRow& PipelineTable::row(const std::string& arm) const {
  for (const PipelineRow& r : rows) {
    if (r.arm == arm) return r;
  }
  throw ValidationError("no pipeline arm " + arm);
}

PipelineTable AblatePipeline(const FlatConfig& cfg, const RunData& data,
                             const AblationOptions& options) {
  const std::vector<std::string> arms{kArmScratch, kArmRandomProbe, kArmPhase1Probe, kArmFinetune,
                                      kArmPhase2};
  std::vector<Job> first, second;
  // (arm, seed) -> (stage, job index)
  std::map<std::pair<std::string, std::uint64_t>, std::pair<int, std::size_t>> slot;
  for (std::uint64_t seed : options.seeds) {
    FlatConfig base = cfg;
    SetAllSeeds(base, seed);
    const ChannelStats stats = data.train_manifest.stats;
    Phase1For(base, stats).Validate();
    Phase2For(base, stats).Validate();
    const fs::path root = options.work_dir / SeedName(seed);
    const fs::path phase1_dir = root / "phase1";
    const fs::path cache = options.cache_dir;
    const std::string tag = "-" + SeedName(seed);

    first.push_back({"phase1" + tag, phase1_dir, [base, phase1_dir, cache, &data] {
                       RunOrLoadPhase1(base, data, phase1_dir, cache);
                       return std::numeric_limits<double>::quiet_NaN();
                     }});
    slot[{kArmScratch, seed}] = {0, first.size()};
    first.push_back({kArmScratch + tag, root / kArmScratch, [base, dir = root / kArmScratch, &data] {
                       MetricsLog metrics = OpenMetrics(dir);
                       const TrainHooks hooks = ArmHooks(&metrics, dir);
                       const Phase2Config p2 = Phase2For(base, data.train_manifest.stats);
                       const Checkpoint ckpt = TrainSupervised(p2, data.train, hooks, &data.val);
                       ckpt.Save(dir / "model.ckpt");
                       return EvaluateTop1(ckpt, data.val, p2.eval);
                     }});
    slot[{kArmRandomProbe, seed}] = {0, first.size()};
    first.push_back({kArmRandomProbe + tag, root / kArmRandomProbe,
                     [base, dir = root / kArmRandomProbe, &data] {
                       std::unique_ptr<nn::EmbeddingModel> encoder =
                           InitialEncoder(Phase1For(base, data.train_manifest.stats));
                       MetricsLog metrics = OpenMetrics(dir);
                       return LinearProbe(encoder->backbone(), data.train, data.val,
                                          ProbeFor(base, data.train_manifest.stats), &metrics)
                           .val_top1;
                     }});

    const fs::path phase1_ckpt = phase1_dir / "phase1.ckpt";
    slot[{kArmPhase1Probe, seed}] = {1, second.size()};
    second.push_back({kArmPhase1Probe + tag, root / kArmPhase1Probe,
                      [base, phase1_ckpt, dir = root / kArmPhase1Probe, &data] {
                        return ProbeCheckpoint(Checkpoint::Load(phase1_ckpt), base, data, dir);
                      }});
    for (const bool distill : {false, true}) {
      const std::string arm = distill ? kArmPhase2 : kArmFinetune;
      slot[{arm, seed}] = {1, second.size()};
      second.push_back({arm + tag, root / arm, [base, phase1_ckpt, distill, dir = root / arm, &data] {
                          Phase2Config p2 = Phase2For(base, data.train_manifest.stats);
                          p2.distill = distill;
                          const Checkpoint phase1 = Checkpoint::Load(phase1_ckpt);
                          MetricsLog metrics = OpenMetrics(dir);
                          const TrainHooks hooks = ArmHooks(&metrics, dir);
                          const Checkpoint ckpt =
                              FinetunePhase2(p2, data.train, &phase1, hooks, &data.val);
                          ckpt.Save(dir / "model.ckpt");
                          return EvaluateTop1(ckpt, data.val, p2.eval);
                        }});
    }
  }
  const std::vector<double> r1 = RunJobs(first, options.parallel, options.jobs);
  const std::vector<double> r2 = RunJobs(second, options.parallel, options.jobs);

  PipelineTable table;
  table.seeds = options.seeds;
  for (const std::string& arm : arms) {
    PipelineRow row{arm, {}};
    for (std::uint64_t seed : options.seeds) {
      const auto [stage, i] = slot.at({arm, seed});
      row.top1.push_back(stage == 0 ? r1[i] : r2[i]);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------

namespace {

void WriteValues(const std::vector<double>& top1, std::ostream& out) {
  out << FormatDouble(Median(top1));
  for (double v : top1) out << "," << FormatDouble(v);
  out << "\n";
}

void WriteSeedHeader(const std::vector<std::uint64_t>& seeds, std::ostream& out) {
  out << "median_top1";
  for (std::uint64_t s : seeds) out << ",top1_seed" << s;
  out << "\n";
}

}  // namespace

void WriteCsv(const NegativesTable& table, std::ostream& out) {
  out << "loss,margin,negatives,";
  WriteSeedHeader(table.seeds, out);
  for (const NegativesCell& c : table.cells) {
    out << (c.margin == 0.0 ? "info_nce" : "margin_info_nce") << "," << FormatDouble(c.margin)
        << "," << c.negatives << ",";
    WriteValues(c.top1, out);
  }
}

void WriteCsv(const PipelineTable& table, std::ostream& out) {
  out << "arm,";
  WriteSeedHeader(table.seeds, out);
  for (const PipelineRow& r : table.rows) {
    out << r.arm << ",";
    WriteValues(r.top1, out);
  }
}

}  // namespace vprior::cli
