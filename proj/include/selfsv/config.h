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

#ifndef SELFSV_CONFIG_H_
#define SELFSV_CONFIG_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace selfsv {

/// Flat `key=value` text configuration. Blank lines and lines starting with
/// '#' are ignored; whitespace around keys and values is trimmed. Keys are
/// kept sorted so the serialized form is canonical.
class KeyValueConfig {
 public:
  static KeyValueConfig Parse(const std::string& text, const std::string& source = "<config>");
  static KeyValueConfig Load(const std::string& path);

  void Set(const std::string& key, const std::string& value);
  void Set(const std::string& key, const char* value) { Set(key, std::string(value)); }
  void Set(const std::string& key, double value);
  void Set(const std::string& key, std::int64_t value);
  void Set(const std::string& key, int value) { Set(key, static_cast<std::int64_t>(value)); }
  void Set(const std::string& key, std::uint64_t value);
  void Set(const std::string& key, bool value) { Set(key, std::string(value ? "true" : "false")); }
  void Set(const std::string& key, const std::vector<int>& values);

  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& Get(const std::string& key) const;

  // Typed getters leave `out` untouched when the key is absent and throw
  // std::invalid_argument naming the key when the value does not parse.
  void Read(const std::string& key, std::string& out) const;
  void Read(const std::string& key, double& out) const;
  void Read(const std::string& key, int& out) const;
  void Read(const std::string& key, std::uint64_t& out) const;
  void Read(const std::string& key, bool& out) const;
  void Read(const std::string& key, std::vector<int>& out) const;

  /// Copies every entry of `other`, overwriting existing keys.
  void Merge(const KeyValueConfig& other);

  const std::map<std::string, std::string>& entries() const { return values_; }
  std::string ToString() const;
  void Save(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest round-trip decimal form of a double.
std::string FormatDouble(double value);

}  // namespace selfsv

#endif  // SELFSV_CONFIG_H_
