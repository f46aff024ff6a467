// Copyright 2026 The selfsv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "selfsv/checkpoint.h"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "selfsv/io.h"

namespace selfsv {

namespace {

constexpr const char* kMagic = "SELFSV-CHECKPOINT 1";

void CheckToken(const std::string& s, const char* what, bool allow_space) {
  if (s.empty()) throw std::invalid_argument(std::string(what) + " is empty");
  for (char c : s) {
    if (c == '\n' || c == '\r' || (!allow_space && (c == ' ' || c == '\t'))) {
      throw std::invalid_argument(std::string(what) + " '" + s +
                                  "' contains whitespace");
    }
  }
}

}  // namespace

void CheckpointFile::SetMeta(const std::string& key, const std::string& value) {
  CheckToken(key, "meta key", false);
  if (key.find('=') != std::string::npos) {
    throw std::invalid_argument("meta key '" + key + "' contains '='");
  }
  if (value.find('\n') != std::string::npos) {
    throw std::invalid_argument("meta value for '" + key + "' has a newline");
  }
  for (auto& kv : meta_) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  meta_.emplace_back(key, value);
}

bool CheckpointFile::HasMeta(const std::string& key) const {
  return std::any_of(meta_.begin(), meta_.end(),
                     [&](const auto& kv) { return kv.first == key; });
}

const std::string& CheckpointFile::Meta(const std::string& key) const {
  for (const auto& kv : meta_) {
    if (kv.first == key) return kv.second;
  }
  throw std::out_of_range("checkpoint has no meta key '" + key + "'");
}

std::string CheckpointFile::MetaOr(const std::string& key,
                                   const std::string& fallback) const {
  return HasMeta(key) ? Meta(key) : fallback;
}

void CheckpointFile::AddArray(NamedArray array) {
  CheckToken(array.name, "tensor name", false);
  if (HasArray(array.name)) {
    throw std::invalid_argument("duplicate tensor " + array.name);
  }
  if (NumElements(array.shape) != array.values.size()) {
    throw ShapeError("tensor " + array.name + ": shape " +
                     ShapeToString(array.shape) + " vs " +
                     std::to_string(array.values.size()) + " values");
  }
  arrays_.push_back(std::move(array));
}

bool CheckpointFile::HasArray(const std::string& name) const {
  return std::any_of(arrays_.begin(), arrays_.end(),
                     [&](const auto& a) { return a.name == name; });
}

const NamedArray& CheckpointFile::Array(const std::string& name) const {
  for (const auto& a : arrays_) {
    if (a.name == name) return a;
  }
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

void CheckpointFile::AddParameters(const ParameterSet& params,
                                   const std::string& prefix) {
  for (const auto& p : params.items()) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    AddArray({p.name, p.tensor.shape(), p.tensor.values()});
  }
}

void CheckpointFile::LoadParameters(ParameterSet& params,
                                    const std::string& prefix) const {
  for (auto& p : params.items()) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    const NamedArray& a = Array(p.name);
    if (a.shape != p.tensor.shape()) {
      throw ShapeError("checkpoint tensor " + p.name + " has shape " +
                       ShapeToString(a.shape) + ", model expects " +
                       ShapeToString(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(a.values.begin(), a.values.end(), dst.begin());
  }
}

void CheckpointFile::Save(const std::string& path) const {
  std::ostringstream header;
  header << kMagic << '\n';
  for (const auto& [k, v] : meta_) header << "meta " << k << '=' << v << '\n';
  std::uint64_t offset = 0;
  for (const auto& a : arrays_) {
    header << "tensor " << a.name << ' ' << offset << ' ' << a.shape.size();
    for (std::size_t d : a.shape) header << ' ' << d;
    header << '\n';
    offset += a.values.size() * sizeof(float);
  }
  header << "payload " << offset << '\n';

  std::string bytes = header.str();
  bytes.reserve(bytes.size() + offset);
  for (const auto& a : arrays_) AppendFloatsLE(a.values, bytes);
  WriteFileBytes(path, bytes);
}

CheckpointFile CheckpointFile::Load(const std::string& path) {
  const std::string bytes = ReadFileBytes(path);
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) {
      throw std::runtime_error(path + ": truncated checkpoint header");
    }
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (next_line() != kMagic) {
    throw std::runtime_error(path + ": not a selfsv checkpoint");
  }
  CheckpointFile file;
  struct Entry {
    std::string name;
    std::uint64_t offset;
    Shape shape;
  };
  std::vector<Entry> entries;
  std::uint64_t payload = 0;
  while (true) {
    const std::string line = next_line();
    if (line.rfind("meta ", 0) == 0) {
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::runtime_error(path + ": malformed meta line: " + line);
      }
      file.meta_.emplace_back(line.substr(5, eq - 5), line.substr(eq + 1));
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream is(line.substr(7));
      Entry e;
      std::size_t rank = 0;
      is >> e.name >> e.offset >> rank;
      e.shape.resize(rank);
      for (auto& d : e.shape) is >> d;
      if (!is) throw std::runtime_error(path + ": malformed tensor line: " + line);
      entries.push_back(std::move(e));
    } else if (line.rfind("payload ", 0) == 0) {
      payload = std::stoull(line.substr(8));
      break;
    } else {
      throw std::runtime_error(path + ": unexpected header line: " + line);
    }
  }
  if (bytes.size() - pos != payload) {
    throw std::runtime_error(path + ": payload is " +
                             std::to_string(bytes.size() - pos) +
                             " bytes, header declares " +
                             std::to_string(payload));
  }
  for (auto& e : entries) {
    const std::size_t count = NumElements(e.shape);
    if (e.offset + count * sizeof(float) > payload) {
      throw std::runtime_error(path + ": tensor " + e.name +
                               " runs past the payload");
    }
    NamedArray a{e.name, e.shape, {}};
    a.values = ReadFloatsLE(std::string_view(bytes).substr(pos + e.offset),
                            count);
    file.AddArray(std::move(a));
  }
  return file;
}

}  // namespace selfsv
