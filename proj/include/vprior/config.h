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

#ifndef VPRIOR_CONFIG_H_
#define VPRIOR_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace vprior {

// Flat "dotted.key = value" configuration. Lines starting with '#' and blank
// lines are ignored. Keys are kept sorted, so the text form is canonical.
class FlatConfig {
 public:
  // Throws ConfigError naming `source` and the line on malformed input.
  static FlatConfig Parse(std::string_view text, const std::string& source = "<text>");
  // Throws IoError when the file cannot be read.
  static FlatConfig ReadFile(const std::filesystem::path& path);

  std::string ToText() const;
  void WriteFile(const std::filesystem::path& path) const;

  // `key=value`; throws ConfigError without '='.
  void SetAssignment(std::string_view assignment);
  void Set(const std::string& key, const std::string& value);
  void Set(const std::string& key, const char* value) { Set(key, std::string(value)); }
  void Set(const std::string& key, double value);
  void Set(const std::string& key, int value);
  void Set(const std::string& key, std::uint64_t value);
  void Set(const std::string& key, bool value);
  void Set(const std::string& key, const std::vector<int>& value);
  void Set(const std::string& key, const std::vector<double>& value);
  void Set(const std::string& key, const std::vector<std::string>& value);

  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  void Erase(const std::string& key) { values_.erase(key); }

  // Typed getters throw ConfigError on unparsable values.
  std::string GetString(const std::string& key, const std::string& fallback) const;
  double GetDouble(const std::string& key, double fallback) const;
  int GetInt(const std::string& key, int fallback) const;
  std::uint64_t GetUint(const std::string& key, std::uint64_t fallback) const;
  bool GetBool(const std::string& key, bool fallback) const;
  std::vector<int> GetIntList(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> GetDoubleList(const std::string& key,
                                    const std::vector<double>& fallback) const;
  std::vector<std::string> GetStringList(const std::string& key,
                                         const std::vector<std::string>& fallback) const;

  // Entries of `other` replace entries of this config.
  void Merge(const FlatConfig& other);
  // Keys whose first component is `prefix` (e.g. "phase1").
  FlatConfig Section(const std::string& prefix) const;
  std::vector<std::string> UnknownKeys(const std::set<std::string>& known) const;

  std::uint64_t Hash() const;
  const std::map<std::string, std::string>& values() const { return values_; }
  bool operator==(const FlatConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

// Shortest text that parses back to the same double.
std::string FormatDouble(double value);

}  // namespace vprior

#endif  // VPRIOR_CONFIG_H_
