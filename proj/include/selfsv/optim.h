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

#ifndef SELFSV_OPTIM_H_
#define SELFSV_OPTIM_H_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "selfsv/tensor.h"

namespace selfsv {

template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> tensor;
  bool trainable = true;
};

/// Ordered, name-unique collection of model parameters.
template <typename T>
class BasicParameterSet {
 public:
  // Returns a handle aliasing the stored parameter.
  BasicTensor<T> Add(std::string name, BasicTensor<T> tensor);

  // Sets the trainable flag on every parameter whose name starts with
  // `prefix`. Frozen parameters stop recording gradients.
  void SetTrainable(const std::string& prefix, bool trainable);
  void ZeroGrad();

  const BasicParameter<T>& Get(const std::string& name) const;
  bool Contains(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t NumScalars() const;

  std::vector<BasicParameter<T>>& items() { return params_; }
  const std::vector<BasicParameter<T>>& items() const { return params_; }

 private:
  std::vector<BasicParameter<T>> params_;
};

using Parameter = BasicParameter<float>;
using ParameterSet = BasicParameterSet<float>;

struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
};

/// One bias-corrected Adam update over the trainable parameters. Throws if a
/// trainable parameter has no gradient buffer.
template <typename T>
void AdamStep(BasicParameterSet<T>& params, AdamState& state);

/// Seeded initializers used by every model in the project.
template <typename T>
BasicTensor<T> NormalInit(Shape shape, double stddev, std::mt19937_64& rng);
template <typename T>
BasicTensor<T> UniformInit(Shape shape, double bound, std::mt19937_64& rng);

}  // namespace selfsv

#endif  // SELFSV_OPTIM_H_
