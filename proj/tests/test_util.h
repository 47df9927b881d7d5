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

#ifndef VPRIOR_TESTS_TEST_UTIL_H_
#define VPRIOR_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "vprior/losses.h"
#include "vprior/random.h"

namespace vprior::testing {

inline Matrix RandomUnitRows(Rng& rng, int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
    m.row(i).normalize();
  }
  return m;
}

inline ContrastiveBatch RandomBatch(Rng& rng, int b, int d, int n) {
  return ContrastiveBatch{RandomUnitRows(rng, b, d), RandomUnitRows(rng, b, d),
                          RandomUnitRows(rng, n, d)};
}

inline double RelativeDiff(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

// Relative error between an analytic and a numeric derivative, with a floor
// on the denominator so entries that are zero in both do not divide by ~0.
inline double GradientError(double analytic, double numeric,
                            double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path TempDir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vprior_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace vprior::testing

#endif  // VPRIOR_TESTS_TEST_UTIL_H_
