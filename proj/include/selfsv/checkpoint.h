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

#ifndef SELFSV_CHECKPOINT_H_
#define SELFSV_CHECKPOINT_H_

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "selfsv/optim.h"
#include "selfsv/tensor.h"

namespace selfsv {

// Training stage recorded under the "stage" meta key.
inline constexpr char kStageKey[] = "stage";
inline constexpr char kStagePretrainIter1[] = "pretrain_iter1";
inline constexpr char kStagePretrainIter2[] = "pretrain_iter2";
inline constexpr char kStageFinetuned[] = "finetuned";
inline constexpr char kStageLmt[] = "lmt";

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// In-memory image of a checkpoint file.
///
/// On disk the file is a text manifest followed by one flat payload:
///
///   SELFSV-CHECKPOINT 1
///   meta <key>=<value>            (zero or more, in insertion order)
///   tensor <name> <byte_offset> <rank> <d0> ... <dn>
///   payload <byte_count>
///   <little-endian float32 payload>
///
/// Loading and re-saving reproduces the file byte for byte.
class CheckpointFile {
 public:
  void SetMeta(const std::string& key, const std::string& value);
  bool HasMeta(const std::string& key) const;
  const std::string& Meta(const std::string& key) const;
  std::string MetaOr(const std::string& key, const std::string& fallback) const;
  const std::vector<std::pair<std::string, std::string>>& meta() const {
    return meta_;
  }

  void AddArray(NamedArray array);
  bool HasArray(const std::string& name) const;
  const NamedArray& Array(const std::string& name) const;
  const std::vector<NamedArray>& arrays() const { return arrays_; }

  // Copies every parameter whose name starts with `prefix`.
  void AddParameters(const ParameterSet& params, const std::string& prefix = "");
  // Overwrites parameter values in place; names and shapes must match.
  void LoadParameters(ParameterSet& params, const std::string& prefix = "") const;

  void Save(const std::string& path) const;
  static CheckpointFile Load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<NamedArray> arrays_;
};

}  // namespace selfsv

#endif  // SELFSV_CHECKPOINT_H_
