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

#include "vprior/config.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "vprior/digest.h"
#include "vprior/errors.h"

namespace vprior {
namespace {

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  if (Trim(text).empty()) return out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) out.emplace_back(Trim(item));
  return out;
}

template <typename T>
T ParseNumber(const std::string& key, std::string_view text) {
  text = Trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

template <typename T>
std::string JoinList(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, double>) {
      out += FormatDouble(items[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += items[i];
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

}  // namespace

std::string FormatDouble(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

FlatConfig FlatConfig::Parse(std::string_view text, const std::string& source) {
  FlatConfig cfg;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = Trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos || Trim(line.substr(0, eq)).empty()) {
      throw ConfigError(source + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + std::string(line) + "'");
    }
    cfg.values_[std::string(Trim(line.substr(0, eq)))] = std::string(Trim(line.substr(eq + 1)));
  }
  return cfg;
}

FlatConfig FlatConfig::ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return Parse(ss.str(), path.string());
}

std::string FlatConfig::ToText() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void FlatConfig::WriteFile(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  out << ToText();
  if (!out) throw IoError("cannot write config " + path.string());
}

void FlatConfig::SetAssignment(std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || Trim(assignment.substr(0, eq)).empty()) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  values_[std::string(Trim(assignment.substr(0, eq)))] =
      std::string(Trim(assignment.substr(eq + 1)));
}

void FlatConfig::Set(const std::string& key, const std::string& value) {
  if (value.find('\n') != std::string::npos) {
    throw ConfigError("config value for '" + key + "' spans lines");
  }
  values_[key] = value;
}
void FlatConfig::Set(const std::string& key, double value) { values_[key] = FormatDouble(value); }
void FlatConfig::Set(const std::string& key, int value) { values_[key] = std::to_string(value); }
void FlatConfig::Set(const std::string& key, std::uint64_t value) {
  values_[key] = std::to_string(value);
}
void FlatConfig::Set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
void FlatConfig::Set(const std::string& key, const std::vector<int>& value) {
  values_[key] = JoinList(value);
}
void FlatConfig::Set(const std::string& key, const std::vector<double>& value) {
  values_[key] = JoinList(value);
}
void FlatConfig::Set(const std::string& key, const std::vector<std::string>& value) {
  values_[key] = JoinList(value);
}

std::string FlatConfig::GetString(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double FlatConfig::GetDouble(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : ParseNumber<double>(key, it->second);
}

int FlatConfig::GetInt(const std::string& key, int fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : ParseNumber<int>(key, it->second);
}

std::uint64_t FlatConfig::GetUint(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : ParseNumber<std::uint64_t>(key, it->second);
}

bool FlatConfig::GetBool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<int> FlatConfig::GetIntList(const std::string& key,
                                        const std::vector<int>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  for (const std::string& s : SplitList(it->second)) out.push_back(ParseNumber<int>(key, s));
  return out;
}

std::vector<double> FlatConfig::GetDoubleList(const std::string& key,
                                              const std::vector<double>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  for (const std::string& s : SplitList(it->second)) out.push_back(ParseNumber<double>(key, s));
  return out;
}

std::vector<std::string> FlatConfig::GetStringList(
    const std::string& key, const std::vector<std::string>& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : SplitList(it->second);
}

void FlatConfig::Merge(const FlatConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

FlatConfig FlatConfig::Section(const std::string& prefix) const {
  FlatConfig out;
  const std::string head = prefix + ".";
  for (const auto& [k, v] : values_) {
    if (k.compare(0, head.size(), head) == 0) out.values_[k] = v;
  }
  return out;
}

std::vector<std::string> FlatConfig::UnknownKeys(const std::set<std::string>& known) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!known.count(k)) out.push_back(k);
  }
  return out;
}

std::uint64_t FlatConfig::Hash() const {
  Digest d;
  d.Update(ToText());
  return d.value();
}

}  // namespace vprior
