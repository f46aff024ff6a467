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

#ifndef SELFSV_IO_H_
#define SELFSV_IO_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace selfsv {

std::string ReadFileBytes(const std::string& path);
void WriteFileBytes(const std::string& path, std::string_view bytes);

void AppendFloatsLE(std::span<const float> values, std::string& out);
std::vector<float> ReadFloatsLE(std::string_view bytes, std::size_t count);
void AppendInt32LE(std::span<const std::int32_t> values, std::string& out);
std::vector<std::int32_t> ReadInt32LE(std::string_view bytes,
                                      std::size_t count);

std::string Sha256Hex(std::string_view bytes);
std::string FileSha256(const std::string& path);

/// SplitMix64-style mixing of a base seed with stream indices.
std::uint64_t DeriveSeed(std::uint64_t base, std::uint64_t a,
                         std::uint64_t b = 0);

// Splits on a single delimiter character, keeping empty fields.
std::vector<std::string> SplitString(std::string_view text, char delim);

}  // namespace selfsv

#endif  // SELFSV_IO_H_
