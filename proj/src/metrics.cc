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

#include "vprior/metrics.h"

#include <json.hpp>

#include "vprior/errors.h"

namespace vprior {

MetricsLog::MetricsLog(const std::filesystem::path& file)
    : out_(file, std::ios::app) {
  if (!out_) throw IoError("cannot open metrics file " + file.string());
}

void MetricsLog::LogStep(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["phase"] = m.phase;
  j["epoch"] = m.epoch;
  j["step"] = m.step;
  j["lr"] = m.lr;
  j["loss_total"] = m.loss_total;
  j["loss_ce"] = m.loss_ce ? nlohmann::ordered_json(*m.loss_ce) : nullptr;
  j["loss_distill"] = m.loss_distill ? nlohmann::ordered_json(*m.loss_distill) : nullptr;
  j["loss_contrastive"] =
      m.loss_contrastive ? nlohmann::ordered_json(*m.loss_contrastive) : nullptr;
  steps_.push_back(m);
  Write(j.dump());
}

void MetricsLog::LogEpoch(const std::string& phase, int epoch,
                          const std::map<std::string, double>& values) {
  nlohmann::ordered_json j;
  j["phase"] = phase;
  j["epoch"] = epoch;
  for (const auto& [k, v] : values) j[k] = v;
  Write(j.dump());
}

std::vector<double> MetricsLog::TotalLosses(const std::string& phase) const {
  std::vector<double> out;
  for (const StepMetrics& m : steps_) {
    if (m.phase == phase) out.push_back(m.loss_total);
  }
  return out;
}

void MetricsLog::Write(const std::string& line) {
  digest_.Update(line);
  if (out_.is_open()) {
    out_ << line << '\n';
    out_.flush();
  }
}

}  // namespace vprior
