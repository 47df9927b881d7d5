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

#ifndef VPRIOR_ERRORS_H_
#define VPRIOR_ERRORS_H_

#include <stdexcept>
#include <string>

namespace vprior {

// Root of every error raised by the library. The CLI maps subclasses to
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or matrix dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value violates a documented precondition (norm, range, label, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// More items than a fixed-capacity container can hold.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// State queried before it was initialized (e.g. queue before warm-up).
class NotReadyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed configuration or inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a NaN/Inf loss. what() carries the diagnostic dump.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace vprior

#endif  // VPRIOR_ERRORS_H_
