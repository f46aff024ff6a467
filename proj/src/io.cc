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

#include "selfsv/io.h"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace selfsv {

std::string ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void WriteFileBytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

void AppendFloatsLE(std::span<const float> values, std::string& out) {
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(bits >> (8 * i)));
  }
}

std::vector<float> ReadFloatsLE(std::string_view bytes, std::size_t count) {
  if (bytes.size() < count * 4) throw std::runtime_error("truncated float data");
  std::vector<float> out(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
      bits |= static_cast<std::uint32_t>(
                  static_cast<unsigned char>(bytes[n * 4 + i]))
              << (8 * i);
    }
    std::memcpy(&out[n], &bits, sizeof bits);
  }
  return out;
}

void AppendInt32LE(std::span<const std::int32_t> values, std::string& out) {
  for (std::int32_t v : values) {
    const auto bits = static_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(bits >> (8 * i)));
  }
}

std::vector<std::int32_t> ReadInt32LE(std::string_view bytes,
                                      std::size_t count) {
  if (bytes.size() < count * 4) throw std::runtime_error("truncated int data");
  std::vector<std::int32_t> out(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
      bits |= static_cast<std::uint32_t>(
                  static_cast<unsigned char>(bytes[n * 4 + i]))
              << (8 * i);
    }
    out[n] = static_cast<std::int32_t>(bits);
  }
  return out;
}

std::string Sha256Hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 15]);
  }
  return hex;
}

std::string FileSha256(const std::string& path) {
  return Sha256Hex(ReadFileBytes(path));
}

std::vector<std::string> SplitString(std::string_view text, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = text.find(delim, start);
    out.emplace_back(text.substr(start, end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::uint64_t DeriveSeed(std::uint64_t base, std::uint64_t a,
                         std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

}  // namespace selfsv
