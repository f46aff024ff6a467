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

#ifndef SELFSV_BACKEND_H_
#define SELFSV_BACKEND_H_

#include <random>
#include <span>
#include <string>
#include <vector>

#include "selfsv/checkpoint.h"
#include "selfsv/encoder.h"
#include "selfsv/optim.h"
#include "selfsv/tensor.h"

namespace selfsv {

/// softmax(raw) for raw [L+1], in double.
template <typename T>
std::vector<double> EffectiveLayerWeights(const BasicTensor<T>& raw);

/// sum_l softmax(raw)_l * H_l over a stack of L+1 equally shaped [T, D]
/// matrices.
template <typename T>
BasicTensor<T> LayerAggregate(const BasicTensor<T>& raw, const BasicLayerStack<T>& stack);

enum class BackendKind { kMhfa, kTdnn };

std::string BackendKindName(BackendKind kind);
BackendKind ParseBackendKind(const std::string& name);

inline constexpr char kBackendKindKey[] = "backend_kind";

struct BackendConfig {
  BackendKind kind = BackendKind::kMhfa;
  int num_layers = 5;  // stack entries, L + 1
  int input_dim = 64;
  int embedding_dim = 64;
  // MHFA
  int heads = 8;
  int key_dim = 64;
  int value_dim = 64;
  // TDNN
  int tdnn_channels = 64;
  int tdnn_kernel = 3;
  std::vector<int> tdnn_dilations = {2, 3};
  int attention_dim = 32;

  /// Frames needed by the TDNN convolutions.
  int ReceptiveField() const;
  void Validate() const;

  void WriteMeta(CheckpointFile& file, const std::string& prefix = "backend.") const;
  static BackendConfig FromMeta(const CheckpointFile& file,
                                const std::string& prefix = "backend.");
};

/// Pools a LayerStack into a [1, E] speaker embedding with either the MHFA
/// head or the TDNN attentive statistics head.
template <typename T>
class BasicBackend {
 public:
  BasicBackend(const BackendConfig& cfg, BasicParameterSet<T>& params,
               std::mt19937_64& rng, const std::string& prefix = "backend.");

  const BackendConfig& config() const { return cfg_; }

  /// `attention` receives the frame attention: [heads, T] for MHFA, [1, T']
  /// for TDNN.
  BasicTensor<T> Forward(const BasicLayerStack<T>& stack,
                         BasicTensor<T>* attention = nullptr) const;

  // MHFA: key and value layer weights. TDNN uses only key_weights.
  const BasicTensor<T>& key_weights() const { return wk_; }
  const BasicTensor<T>& value_weights() const { return wv_; }

 private:
  BasicTensor<T> Mhfa(const BasicLayerStack<T>& stack, BasicTensor<T>* attention) const;
  BasicTensor<T> Tdnn(const BasicLayerStack<T>& stack, BasicTensor<T>* attention) const;

  BackendConfig cfg_;
  BasicTensor<T> wk_, wv_;
  BasicTensor<T> key_proj_, value_proj_, queries_, out_w_, out_b_;
  std::vector<BasicTensor<T>> conv_w_, conv_b_;
  BasicTensor<T> att_w_, att_b_, att_v_, lin_w_, lin_b_;
};

using Backend = BasicBackend<float>;

struct AamConfig {
  double margin = 0.2;
  double scale = 30.0;
  int n_classes = 0;

  void Validate() const;
};

/// Cosine between each row of y [B, E] and each row of weights [C, E].
template <typename T>
BasicTensor<T> CosineLogits(const BasicTensor<T>& y, const BasicTensor<T>& weights);

/// Replaces the true-class cosine c = cos(theta) by cos(theta + m). Where
/// theta + m would pass pi the penalty continues as c - m sin(m).
template <typename T>
BasicTensor<T> AddAngularMargin(const BasicTensor<T>& cosines, std::span<const int> labels,
                                double margin);

/// Mean additive angular margin softmax loss over the batch.
template <typename T>
BasicTensor<T> AamSoftmaxLoss(const BasicTensor<T>& y, std::span<const int> labels,
                              const BasicTensor<T>& weights, const AamConfig& cfg);

}  // namespace selfsv

#endif  // SELFSV_BACKEND_H_
