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

#ifndef VPRIOR_LOG_H_
#define VPRIOR_LOG_H_

#include <functional>
#include <string>

namespace vprior {

enum class LogLevel { kInfo, kWarning, kError };

// Messages go to stderr unless a sink is installed. Thread-safe.
void Log(LogLevel level, const std::string& message);

// Replaces the sink; an empty function restores stderr. Returns the
// previous sink.
using LogSink = std::function<void(LogLevel, const std::string&)>;
LogSink SetLogSink(LogSink sink);

}  // namespace vprior

#endif  // VPRIOR_LOG_H_
