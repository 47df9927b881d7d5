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

// Writes the procedural shapes dataset used by the desk-scale experiments.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vprior/errors.h"
#include "vprior/synthetic.h"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic shapes dataset", "vprior_make_shapes"};
  std::string out;
  vprior::ShapesDatasetConfig cfg;
  app.add_option("--out", out, "Output root (receives train/ and val/)")->required();
  app.add_option("--classes", cfg.classes, "Number of classes")->capture_default_str();
  app.add_option("--train-per-class", cfg.train_per_class, "Training images per class")
      ->capture_default_str();
  app.add_option("--val-per-class", cfg.val_per_class, "Validation images per class")
      ->capture_default_str();
  app.add_option("--size", cfg.image_size, "Image side in pixels")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Generator seed")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    vprior::WriteShapesDataset(out, cfg);
  } catch (const vprior::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << out << "\n";
  return 0;
}
