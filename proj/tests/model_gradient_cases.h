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

// Gradient checks for the speaker back-ends and the AAM loss, three shape
// variants each. Shared by the unit tests and the acceptance suite.

#ifndef SELFSV_TESTS_MODEL_GRADIENT_CASES_H_
#define SELFSV_TESTS_MODEL_GRADIENT_CASES_H_

#include <array>
#include <string>
#include <vector>

#include "gradcheck.h"
#include "op_gradient_cases.h"
#include "selfsv/backend.h"

namespace selfsv::testing {

struct MhfaShape {
  std::size_t layers, frames, dim;
  int heads, key_dim, value_dim, embed;
};

struct TdnnShape {
  std::size_t layers, frames, dim;
  int channels, kernel, d1, d2, att, embed;
};

inline BackendConfig MhfaConfig(const MhfaShape& s) {
  BackendConfig c;
  c.kind = BackendKind::kMhfa;
  c.num_layers = static_cast<int>(s.layers);
  c.input_dim = static_cast<int>(s.dim);
  c.heads = s.heads;
  c.key_dim = s.key_dim;
  c.value_dim = s.value_dim;
  c.embedding_dim = s.embed;
  return c;
}

inline BackendConfig TdnnConfig(const TdnnShape& s) {
  BackendConfig c;
  c.kind = BackendKind::kTdnn;
  c.num_layers = static_cast<int>(s.layers);
  c.input_dim = static_cast<int>(s.dim);
  c.tdnn_channels = s.channels;
  c.tdnn_kernel = s.kernel;
  c.tdnn_dilations = {s.d1, s.d2};
  c.attention_dim = s.att;
  c.embedding_dim = s.embed;
  return c;
}

inline constexpr std::array<MhfaShape, 3> kMhfaShapes = {
    {{2, 3, 4, 2, 3, 4, 3}, {3, 5, 6, 3, 4, 6, 4}, {4, 1, 5, 1, 2, 3, 2}}};
inline constexpr std::array<TdnnShape, 3> kTdnnShapes = {
    {{2, 8, 3, 3, 3, 1, 2, 2, 3}, {3, 12, 4, 2, 3, 2, 2, 3, 2}, {2, 6, 2, 3, 2, 1, 1, 2, 2}}};

// Parameters of `params` followed by a random stack; returns the index of
// the first stack tensor. Layer weights and biases are randomized: uniform
// softmax weights hide errors, and zero biases behind dead ReLU inputs put
// pre-activations exactly on the kink.
inline std::size_t BackendInputs(BasicParameterSet<double>& params, std::size_t layers,
                                 std::size_t frames, std::size_t dim, std::mt19937_64& rng,
                                 std::vector<Tensor64>& inputs) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& p : params.items()) {
    const bool bias = p.name.find("bias") != std::string::npos;
    if (bias || p.name.find("_weights") != std::string::npos) {
      for (double& v : p.tensor.mutable_data()) v = (bias ? 0.3 : 1.0) * g(rng);
    }
    inputs.push_back(p.tensor);
  }
  const std::size_t first = inputs.size();
  for (std::size_t l = 0; l < layers; ++l) inputs.push_back(RandomTensor64({frames, dim}, rng));
  return first;
}

inline GradCheckResult BackendGradCheck(const BackendConfig& cfg, std::size_t frames,
                                        std::mt19937_64& rng) {
  BasicParameterSet<double> params;
  BasicBackend<double> backend(cfg, params, rng);
  std::vector<Tensor64> inputs;
  const std::size_t first =
      BackendInputs(params, static_cast<std::size_t>(cfg.num_layers), frames,
                    static_cast<std::size_t>(cfg.input_dim), rng, inputs);
  // The TDNN is piecewise linear; a small step keeps the central
  // differences from straddling a ReLU kink.
  const double step = cfg.kind == BackendKind::kTdnn ? 1e-6 : 1e-3;
  return GradCheck(
      inputs,
      [&backend, first](const std::vector<Tensor64>& in) {
        BasicLayerStack<double> stack(in.begin() + static_cast<std::ptrdiff_t>(first), in.end());
        return WeightedSum(backend.Forward(stack));
      },
      step);
}

inline std::vector<GradCase> ModelGradientCases() {
  using V = std::vector<Tensor64>;
  std::vector<GradCase> cases;
  cases.push_back({"layer_aggregate", [](std::mt19937_64& rng, int v) {
                     const std::size_t layers = 2 + v, t = 3 + v, d = 4 - v;
                     V in{RandomTensor64({layers}, rng)};
                     for (std::size_t l = 0; l < layers; ++l) in.push_back(RandomTensor64({t, d}, rng));
                     return GradCheck(in, [](const V& x) {
                       return WeightedSum(LayerAggregate(x[0], BasicLayerStack<double>(x.begin() + 1, x.end())));
                     });
                   }});
  cases.push_back({"mhfa_pool", [](std::mt19937_64& rng, int v) {
                     const auto& s = kMhfaShapes[static_cast<std::size_t>(v)];
                     return BackendGradCheck(MhfaConfig(s), s.frames, rng);
                   }});
  cases.push_back({"tdnn_pool", [](std::mt19937_64& rng, int v) {
                     const auto& s = kTdnnShapes[static_cast<std::size_t>(v)];
                     return BackendGradCheck(TdnnConfig(s), s.frames, rng);
                   }});
  cases.push_back({"aam_softmax", [](std::mt19937_64& rng, int v) {
                     static constexpr std::array<std::array<std::size_t, 3>, 3> kDims = {
                         {{2, 3, 4}, {4, 5, 3}, {1, 2, 6}}};
                     const auto [b, c, e] = kDims[static_cast<std::size_t>(v)];
                     std::vector<int> labels(b);
                     for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<int>((3 * i + 1) % c);
                     AamConfig cfg;
                     cfg.n_classes = static_cast<int>(c);
                     return GradCheck({RandomTensor64({b, e}, rng), RandomTensor64({c, e}, rng)},
                                      [labels, cfg](const V& x) {
                                        return AamSoftmaxLoss<double>(x[0], labels, x[1], cfg);
                                      });
                   }});
  return cases;
}

}  // namespace selfsv::testing

#endif  // SELFSV_TESTS_MODEL_GRADIENT_CASES_H_
