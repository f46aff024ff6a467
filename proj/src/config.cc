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

#include "selfsv/config.h"

#include <charconv>
#include <stdexcept>

#include "selfsv/io.h"

namespace selfsv {

namespace {

std::string Trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

template <typename N>
N ParseNumber(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw std::invalid_argument("config: bad value '" + text + "' for key '" + key + "'");
  }
  return value;
}

}  // namespace

std::string FormatDouble(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw std::runtime_error("FormatDouble failed");
  return std::string(buf, ptr);
}

KeyValueConfig KeyValueConfig::Parse(const std::string& text, const std::string& source) {
  KeyValueConfig cfg;
  int line_no = 0;
  for (const auto& raw : SplitString(text, '\n')) {
    ++line_no;
    const std::string line = Trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(line_no) +
                                  ": expected key=value, got '" + line + "'");
    }
    const std::string key = Trim(std::string_view(line).substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": empty key");
    }
    cfg.values_[key] = Trim(std::string_view(line).substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::Load(const std::string& path) {
  return Parse(ReadFileBytes(path), path);
}

void KeyValueConfig::Set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find('=') != std::string::npos ||
      value.find('\n') != std::string::npos) {
    throw std::invalid_argument("config: invalid entry for key '" + key + "'");
  }
  values_[key] = value;
}

void KeyValueConfig::Set(const std::string& key, double value) { Set(key, FormatDouble(value)); }
void KeyValueConfig::Set(const std::string& key, std::int64_t value) {
  Set(key, std::to_string(value));
}
void KeyValueConfig::Set(const std::string& key, std::uint64_t value) {
  Set(key, std::to_string(value));
}

void KeyValueConfig::Set(const std::string& key, const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  Set(key, out);
}

const std::string& KeyValueConfig::Get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::out_of_range("config: missing key '" + key + "'");
  return it->second;
}

void KeyValueConfig::Read(const std::string& key, std::string& out) const {
  if (Has(key)) out = Get(key);
}
void KeyValueConfig::Read(const std::string& key, double& out) const {
  if (Has(key)) out = ParseNumber<double>(key, Get(key));
}
void KeyValueConfig::Read(const std::string& key, int& out) const {
  if (Has(key)) out = ParseNumber<int>(key, Get(key));
}
void KeyValueConfig::Read(const std::string& key, std::uint64_t& out) const {
  if (Has(key)) out = ParseNumber<std::uint64_t>(key, Get(key));
}
void KeyValueConfig::Read(const std::string& key, bool& out) const {
  if (!Has(key)) return;
  const std::string& v = Get(key);
  if (v == "true" || v == "1") {
    out = true;
  } else if (v == "false" || v == "0") {
    out = false;
  } else {
    throw std::invalid_argument("config: bad boolean '" + v + "' for key '" + key + "'");
  }
}
void KeyValueConfig::Read(const std::string& key, std::vector<int>& out) const {
  if (!Has(key)) return;
  out.clear();
  const std::string& v = Get(key);
  if (v.empty()) return;
  for (const auto& field : SplitString(v, ',')) out.push_back(ParseNumber<int>(key, Trim(field)));
}

void KeyValueConfig::Merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KeyValueConfig::ToString() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

void KeyValueConfig::Save(const std::string& path) const { WriteFileBytes(path, ToString()); }

}  // namespace selfsv
