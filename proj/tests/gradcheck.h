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

// Finite-difference gradient checking in 64-bit mode, shared by the unit
// tests and the acceptance suite.

#ifndef SELFSV_TESTS_GRADCHECK_H_
#define SELFSV_TESTS_GRADCHECK_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "selfsv/tensor.h"

namespace selfsv::testing {

inline Tensor64 RandomTensor64(Shape shape, std::mt19937_64& rng,
                               double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> data(NumElements(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor64::FromData(std::move(shape), std::move(data), requires_grad);
}

// Reduces an arbitrary tensor to a scalar with fixed random weights so that
// every output element contributes a distinct coefficient.
inline Tensor64 WeightedSum(const Tensor64& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor64 w = RandomTensor64(out.shape(), rng, 1.0, false);
  return Sum(Mul(out, w));
}

struct GradCheckResult {
  double relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients of `loss_fn` with central differences over
/// every element of every input. The reported error is the norm-wise
/// relative error ||analytic - numeric|| / (||analytic|| + ||numeric||).
inline GradCheckResult GradCheck(
    std::vector<Tensor64> inputs,
    const std::function<Tensor64(const std::vector<Tensor64>&)>& loss_fn,
    double step = 1e-3) {
  for (auto& t : inputs) t.ClearGrad();
  Tensor64 loss = loss_fn(inputs);
  Backward(loss);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheckResult result;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) {
      std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    }
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = loss_fn(inputs).item();
      values[i] = saved - step;
      const double minus = loss_fn(inputs).item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++result.checked;
    }
  }
  const double denom = std::sqrt(a2) + std::sqrt(n2);
  result.relative_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
  return result;
}

}  // namespace selfsv::testing

#endif  // SELFSV_TESTS_GRADCHECK_H_
