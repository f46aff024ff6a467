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

#include "selfsv/optim.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace selfsv {

template <typename T>
BasicTensor<T> BasicParameterSet<T>::Add(std::string name,
                                          BasicTensor<T> tensor) {
  if (Contains(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  tensor.set_requires_grad(true);
  params_.push_back({std::move(name), std::move(tensor), true});
  return params_.back().tensor;
}

template <typename T>
void BasicParameterSet<T>::SetTrainable(const std::string& prefix,
                                        bool trainable) {
  for (auto& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) {
      p.trainable = trainable;
      p.tensor.set_requires_grad(trainable);
      if (!trainable) p.tensor.ClearGrad();
    }
  }
}

template <typename T>
void BasicParameterSet<T>::ZeroGrad() {
  for (auto& p : params_) {
    if (p.trainable) p.tensor.ZeroGrad();
  }
}

template <typename T>
const BasicParameter<T>& BasicParameterSet<T>::Get(
    const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
bool BasicParameterSet<T>::Contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& p) { return p.name == name; });
}

template <typename T>
std::size_t BasicParameterSet<T>::NumScalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void AdamStep(BasicParameterSet<T>& params, AdamState& state) {
  auto& items = params.items();
  if (state.first_moment.empty()) {
    state.first_moment.resize(items.size());
    state.second_moment.resize(items.size());
  }
  if (state.first_moment.size() != items.size()) {
    throw std::invalid_argument("adam: state was built for a different model");
  }
  for (const auto& p : items) {
    if (p.trainable && !p.tensor.has_grad()) {
      throw std::logic_error("adam: trainable parameter '" + p.name +
                             "' has no gradient");
    }
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i];
    if (!p.trainable) continue;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.empty()) {
      m.assign(p.tensor.numel(), 0.0);
      v.assign(p.tensor.numel(), 0.0);
    }
    if (m.size() != p.tensor.numel()) {
      throw std::invalid_argument("adam: moment shape mismatch for " + p.name);
    }
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double update = (m[j] / correction1) /
                            (std::sqrt(v[j] / correction2) + state.eps);
      w[j] = static_cast<T>(w[j] - state.lr * update);
    }
  }
}

template <typename T>
BasicTensor<T> NormalInit(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> data(NumElements(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return BasicTensor<T>::FromData(std::move(shape), std::move(data));
}

template <typename T>
BasicTensor<T> UniformInit(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> data(NumElements(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return BasicTensor<T>::FromData(std::move(shape), std::move(data));
}

template class BasicParameterSet<float>;
template class BasicParameterSet<double>;
template void AdamStep(BasicParameterSet<float>&, AdamState&);
template void AdamStep(BasicParameterSet<double>&, AdamState&);
template BasicTensor<float> NormalInit<float>(Shape, double, std::mt19937_64&);
template BasicTensor<double> NormalInit<double>(Shape, double, std::mt19937_64&);
template BasicTensor<float> UniformInit<float>(Shape, double, std::mt19937_64&);
template BasicTensor<double> UniformInit<double>(Shape, double,
                                                 std::mt19937_64&);

}  // namespace selfsv
