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

#ifndef SELFSV_TESTS_AAM_ORACLE_H_
#define SELFSV_TESTS_AAM_ORACLE_H_

#include <algorithm>
#include <cmath>
#include <vector>

#include "selfsv/tensor.h"

namespace selfsv::testing {

// Mean softmax cross-entropy of s * cos(y_i, w_j), computed directly.
inline double ScaledCrossEntropyOracle(const Tensor64& y, const Tensor64& w, const std::vector<int>& labels,
                                double s) {
  const std::size_t b = y.dim(0), c = w.dim(0), e = y.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> logits(c);
    double ny = 0;
    for (std::size_t k = 0; k < e; ++k) ny += y.at(i, k) * y.at(i, k);
    for (std::size_t j = 0; j < c; ++j) {
      double dot = 0, nw = 0;
      for (std::size_t k = 0; k < e; ++k) {
        dot += y.at(i, k) * w.at(j, k);
        nw += w.at(j, k) * w.at(j, k);
      }
      logits[j] = s * dot / std::sqrt(ny * nw);
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - top);
    total += -(logits[labels[i]] - top - std::log(z));
  }
  return total / b;
}

}  // namespace selfsv::testing

#endif  // SELFSV_TESTS_AAM_ORACLE_H_
