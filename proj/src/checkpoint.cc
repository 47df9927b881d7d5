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

#include "vprior/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "vprior/errors.h"

namespace vprior {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host order");

constexpr std::string_view kMagic = "VPRIOR-CHECKPOINT 1";

bool ValidToken(const std::string& s) {
  return !s.empty() && s.find_first_of(" \t\r\n") == std::string::npos;
}

template <typename T>
void Describe(std::ostringstream& header, const std::string& name, const char* dtype,
              const BasicTensor<T>& t, std::size_t& offset) {
  if (!ValidToken(name)) throw ValidationError("tensor name '" + name + "' is not a token");
  header << "tensor " << name << " " << dtype << " " << t.rank();
  for (int d : t.shape()) header << " " << d;
  const std::size_t bytes = t.size() * sizeof(T);
  header << " " << offset << " " << bytes << "\n";
  offset += bytes;
}

template <typename T>
void Append(std::string& blob, const BasicTensor<T>& t) {
  blob.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(T));
}

}  // namespace

std::string Checkpoint::Serialize() const {
  std::ostringstream header;
  header << kMagic << "\n";
  for (const auto& [k, v] : meta) {
    if (!ValidToken(k) || v.find('\n') != std::string::npos) {
      throw ValidationError("metadata entry '" + k + "' cannot be stored");
    }
    header << "meta " << k << " " << v << "\n";
  }
  for (const auto& [k, v] : config.values()) header << "config " << k << " = " << v << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) Describe(header, name, "f32", t, offset);
  for (const auto& [name, t] : tensors64) Describe(header, name, "f64", t, offset);
  header << "end\n";
  std::string out = header.str();
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : tensors) Append(out, t);
  for (const auto& [name, t] : tensors64) Append(out, t);
  return out;
}

Checkpoint Checkpoint::Deserialize(std::string_view bytes) {
  Checkpoint ck;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string_view {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) throw ValidationError("checkpoint header is truncated");
    std::string_view line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (next_line() != kMagic) throw ValidationError("not a checkpoint archive");

  struct Pending {
    std::string name;
    bool f64;
    std::vector<int> shape;
    std::size_t offset, nbytes;
  };
  std::vector<Pending> pending;
  for (;;) {
    const std::string_view line = next_line();
    if (line == "end") break;
    const std::size_t sp = line.find(' ');
    const std::string_view kind = line.substr(0, sp);
    const std::string rest(sp == std::string_view::npos ? std::string_view() : line.substr(sp + 1));
    if (kind == "meta") {
      const std::size_t s2 = rest.find(' ');
      if (s2 == std::string::npos) throw ValidationError("malformed meta line");
      ck.meta[rest.substr(0, s2)] = rest.substr(s2 + 1);
    } else if (kind == "config") {
      ck.config.SetAssignment(rest);
    } else if (kind == "tensor") {
      std::istringstream is(rest);
      Pending p;
      std::string dtype;
      int rank = -1;
      is >> p.name >> dtype >> rank;
      if (!is || (dtype != "f32" && dtype != "f64") || rank < 0 || rank > 8) {
        throw ValidationError("malformed tensor descriptor: " + std::string(line));
      }
      p.f64 = dtype == "f64";
      p.shape.resize(static_cast<std::size_t>(rank));
      for (int& d : p.shape) is >> d;
      is >> p.offset >> p.nbytes;
      if (!is) throw ValidationError("malformed tensor descriptor: " + std::string(line));
      pending.push_back(std::move(p));
    } else {
      throw ValidationError("unknown checkpoint record: " + std::string(line));
    }
  }
  const std::string_view blob = bytes.substr(pos);
  for (const Pending& p : pending) {
    const std::size_t elem = p.f64 ? sizeof(double) : sizeof(float);
    std::size_t count = 1;
    for (int d : p.shape) {
      if (d < 0) throw ValidationError("negative dimension in " + p.name);
      count *= static_cast<std::size_t>(d);
    }
    if (count * elem != p.nbytes || p.offset + p.nbytes > blob.size()) {
      throw ValidationError("tensor " + p.name + " does not fit the archive");
    }
    if (p.f64) {
      TensorD t(p.shape);
      std::memcpy(t.data(), blob.data() + p.offset, p.nbytes);
      ck.tensors64.emplace(p.name, std::move(t));
    } else {
      Tensor t(p.shape);
      std::memcpy(t.data(), blob.data() + p.offset, p.nbytes);
      ck.tensors.emplace(p.name, std::move(t));
    }
  }
  return ck;
}

void Checkpoint::Save(const std::filesystem::path& path) const {
  const std::string bytes = Serialize();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint Checkpoint::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return Deserialize(ss.str());
}

void Checkpoint::PutState(const std::string& prefix, const nn::StateList& state) {
  for (const nn::StateEntry& e : state) tensors[prefix + e.name] = *e.tensor;
}

void Checkpoint::GetState(const std::string& prefix, const nn::StateList& state) const {
  for (const nn::StateEntry& e : state) {
    const auto it = tensors.find(prefix + e.name);
    if (it == tensors.end()) {
      throw ValidationError("checkpoint lacks tensor " + prefix + e.name);
    }
    if (it->second.shape() != e.tensor->shape()) {
      throw ValidationError("checkpoint tensor " + prefix + e.name + " has shape " +
                            ShapeString(it->second.shape()) + ", expected " +
                            ShapeString(e.tensor->shape()));
    }
    *e.tensor = it->second;
  }
}

bool Checkpoint::HasPrefix(const std::string& prefix) const {
  const auto it = tensors.lower_bound(prefix);
  return it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

int Checkpoint::epoch() const { return std::stoi(MetaOr("epoch", "-1")); }

std::string Checkpoint::MetaOr(const std::string& key, const std::string& fallback) const {
  const auto it = meta.find(key);
  return it == meta.end() ? fallback : it->second;
}

}  // namespace vprior
