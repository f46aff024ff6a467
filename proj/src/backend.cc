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

#include "selfsv/backend.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "selfsv/io.h"

namespace selfsv {

namespace {

std::string JoinInts(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

constexpr double kStdFloor = 1e-8;

}  // namespace

template <typename T>
std::vector<double> EffectiveLayerWeights(const BasicTensor<T>& raw) {
  const auto v = raw.values();
  const double top = *std::max_element(v.begin(), v.end());
  std::vector<double> w(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) total += (w[i] = std::exp(v[i] - top));
  for (double& x : w) x /= total;
  return w;
}

template <typename T>
BasicTensor<T> LayerAggregate(const BasicTensor<T>& raw, const BasicLayerStack<T>& stack) {
  if (raw.numel() != stack.size()) {
    throw ShapeError("layer_aggregate: " + std::to_string(raw.numel()) +
                     " weights for a stack of " + std::to_string(stack.size()) + " layers");
  }
  for (const auto& h : stack) {
    if (h.shape() != stack.front().shape()) {
      throw ShapeError("layer_aggregate: layer shapes differ");
    }
  }
  const auto w = Softmax(Reshape(raw, {1, raw.numel()}));
  BasicTensor<T> out;
  for (std::size_t l = 0; l < stack.size(); ++l) {
    auto term = Mul(stack[l], Slice(w, 1, l, 1));
    out = out.defined() ? Add(out, term) : term;
  }
  return out;
}

std::string BackendKindName(BackendKind kind) {
  return kind == BackendKind::kMhfa ? "mhfa" : "tdnn";
}

BackendKind ParseBackendKind(const std::string& name) {
  if (name == "mhfa") return BackendKind::kMhfa;
  if (name == "tdnn") return BackendKind::kTdnn;
  throw std::invalid_argument("unknown backend '" + name + "' (expected mhfa or tdnn)");
}

int BackendConfig::ReceptiveField() const {
  int rf = 1;
  for (int d : tdnn_dilations) rf += (tdnn_kernel - 1) * d;
  return rf;
}

void BackendConfig::Validate() const {
  if (num_layers < 1) throw std::invalid_argument("backend: num_layers must be >= 1");
  if (input_dim < 1 || embedding_dim < 1) {
    throw std::invalid_argument("backend: dimensions must be positive");
  }
  if (kind == BackendKind::kMhfa) {
    if (heads < 1 || key_dim < 1 || value_dim < 1) {
      throw std::invalid_argument("backend: heads, key_dim and value_dim must be positive");
    }
    if (value_dim % heads != 0) {
      throw std::invalid_argument("backend: value_dim " + std::to_string(value_dim) +
                                  " is not divisible by heads " + std::to_string(heads));
    }
  } else {
    if (tdnn_channels < 1 || tdnn_kernel < 1 || attention_dim < 1 ||
        tdnn_dilations.size() != 2) {
      throw std::invalid_argument("backend: tdnn needs positive sizes and two dilations");
    }
    for (int d : tdnn_dilations) {
      if (d < 1) throw std::invalid_argument("backend: dilations must be >= 1");
    }
  }
}

void BackendConfig::WriteMeta(CheckpointFile& file, const std::string& prefix) const {
  file.SetMeta(kBackendKindKey, BackendKindName(kind));
  file.SetMeta(prefix + "num_layers", std::to_string(num_layers));
  file.SetMeta(prefix + "input_dim", std::to_string(input_dim));
  file.SetMeta(prefix + "embedding_dim", std::to_string(embedding_dim));
  file.SetMeta(prefix + "heads", std::to_string(heads));
  file.SetMeta(prefix + "key_dim", std::to_string(key_dim));
  file.SetMeta(prefix + "value_dim", std::to_string(value_dim));
  file.SetMeta(prefix + "tdnn_channels", std::to_string(tdnn_channels));
  file.SetMeta(prefix + "tdnn_kernel", std::to_string(tdnn_kernel));
  file.SetMeta(prefix + "tdnn_dilations", JoinInts(tdnn_dilations));
  file.SetMeta(prefix + "attention_dim", std::to_string(attention_dim));
}

BackendConfig BackendConfig::FromMeta(const CheckpointFile& file, const std::string& prefix) {
  BackendConfig c;
  c.kind = ParseBackendKind(file.Meta(kBackendKindKey));
  c.num_layers = std::stoi(file.Meta(prefix + "num_layers"));
  c.input_dim = std::stoi(file.Meta(prefix + "input_dim"));
  c.embedding_dim = std::stoi(file.Meta(prefix + "embedding_dim"));
  c.heads = std::stoi(file.Meta(prefix + "heads"));
  c.key_dim = std::stoi(file.Meta(prefix + "key_dim"));
  c.value_dim = std::stoi(file.Meta(prefix + "value_dim"));
  c.tdnn_channels = std::stoi(file.Meta(prefix + "tdnn_channels"));
  c.tdnn_kernel = std::stoi(file.Meta(prefix + "tdnn_kernel"));
  c.tdnn_dilations.clear();
  for (const auto& f : SplitString(file.Meta(prefix + "tdnn_dilations"), ',')) {
    c.tdnn_dilations.push_back(std::stoi(f));
  }
  c.attention_dim = std::stoi(file.Meta(prefix + "attention_dim"));
  c.Validate();
  return c;
}

template <typename T>
BasicBackend<T>::BasicBackend(const BackendConfig& cfg, BasicParameterSet<T>& params,
                              std::mt19937_64& rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.Validate();
  auto add = [&](const std::string& name, BasicTensor<T> t) {
    return params.Add(prefix + name, std::move(t));
  };
  auto weight = [&](const std::string& name, std::size_t in, std::size_t out) {
    return add(name, NormalInit<T>({in, out}, 1.0 / std::sqrt(double(in)), rng));
  };
  const auto layers = static_cast<std::size_t>(cfg_.num_layers);
  const auto d = static_cast<std::size_t>(cfg_.input_dim);
  const auto e = static_cast<std::size_t>(cfg_.embedding_dim);
  wk_ = add("key_weights", BasicTensor<T>::Zeros({layers}));
  if (cfg_.kind == BackendKind::kMhfa) {
    const auto dk = static_cast<std::size_t>(cfg_.key_dim);
    const auto dv = static_cast<std::size_t>(cfg_.value_dim);
    wv_ = add("value_weights", BasicTensor<T>::Zeros({layers}));
    key_proj_ = weight("key_proj", d, dk);
    value_proj_ = weight("value_proj", d, dv);
    queries_ = weight("head_queries", static_cast<std::size_t>(cfg_.heads), dk);
    out_w_ = weight("out_proj.weight", dv, e);
    out_b_ = add("out_proj.bias", BasicTensor<T>::Zeros({e}));
    return;
  }
  const auto c = static_cast<std::size_t>(cfg_.tdnn_channels);
  const auto k = static_cast<std::size_t>(cfg_.tdnn_kernel);
  std::size_t c_in = d;
  for (std::size_t i = 0; i < cfg_.tdnn_dilations.size(); ++i) {
    const std::string name = "tdnn." + std::to_string(i);
    conv_w_.push_back(add(name + ".weight",
                          NormalInit<T>({c, c_in, k}, std::sqrt(2.0 / double(c_in * k)), rng)));
    conv_b_.push_back(add(name + ".bias", BasicTensor<T>::Zeros({c})));
    c_in = c;
  }
  const auto a = static_cast<std::size_t>(cfg_.attention_dim);
  att_w_ = weight("asp.weight", c, a);
  att_b_ = add("asp.bias", BasicTensor<T>::Zeros({a}));
  att_v_ = weight("asp.score", a, 1);
  lin_w_ = weight("linear.weight", 2 * c, e);
  lin_b_ = add("linear.bias", BasicTensor<T>::Zeros({e}));
}

template <typename T>
BasicTensor<T> BasicBackend<T>::Forward(const BasicLayerStack<T>& stack,
                                        BasicTensor<T>* attention) const {
  if (stack.size() != static_cast<std::size_t>(cfg_.num_layers)) {
    throw ShapeError("backend: expected " + std::to_string(cfg_.num_layers) +
                     " stack entries, got " + std::to_string(stack.size()));
  }
  const auto& h = stack.front();
  if (h.ndim() != 2 || h.dim(1) != static_cast<std::size_t>(cfg_.input_dim) ||
      h.dim(0) == 0) {
    throw ShapeError("backend: layer shape " + ShapeToString(h.shape()) +
                     " does not match input_dim " + std::to_string(cfg_.input_dim));
  }
  return cfg_.kind == BackendKind::kMhfa ? Mhfa(stack, attention) : Tdnn(stack, attention);
}

template <typename T>
BasicTensor<T> BasicBackend<T>::Mhfa(const BasicLayerStack<T>& stack,
                                     BasicTensor<T>* attention) const {
  const auto keys = Matmul(LayerAggregate(wk_, stack), key_proj_);      // [T, Dk]
  const auto values = Matmul(LayerAggregate(wv_, stack), value_proj_);  // [T, Dv]
  const auto att = Softmax(Matmul(queries_, Transpose(keys)));          // [H, T]
  if (attention) *attention = att;
  const auto heads = static_cast<std::size_t>(cfg_.heads);
  const std::size_t chunk = values.dim(1) / heads;
  std::vector<BasicTensor<T>> pooled;
  pooled.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const auto a = heads == 1 ? att : Slice(att, 0, i, 1);
    const auto v = heads == 1 ? values : Slice(values, 1, i * chunk, chunk);
    pooled.push_back(Matmul(a, v));
  }
  const auto cat = heads == 1 ? pooled[0] : Concat(pooled, 1);
  return Linear(cat, out_w_, out_b_);
}

template <typename T>
BasicTensor<T> BasicBackend<T>::Tdnn(const BasicLayerStack<T>& stack,
                                     BasicTensor<T>* attention) const {
  const std::size_t frames = stack.front().dim(0);
  if (frames < static_cast<std::size_t>(cfg_.ReceptiveField())) {
    throw std::invalid_argument("tdnn: " + std::to_string(frames) +
                                " frames is shorter than the receptive field of " +
                                std::to_string(cfg_.ReceptiveField()));
  }
  auto x = LayerAggregate(wk_, stack);
  Conv1dOptions o1, o2;
  o1.dilation = static_cast<std::size_t>(cfg_.tdnn_dilations[0]);
  o2.dilation = static_cast<std::size_t>(cfg_.tdnn_dilations[1]);
  const auto h1 = Relu(Conv1d(x, conv_w_[0], conv_b_[0], o1));
  const auto h2 = Relu(Conv1d(h1, conv_w_[1], conv_b_[1], o2));
  // Residual over the centre frames of h1 that h2 still covers.
  const std::size_t t2 = h2.dim(0);
  const std::size_t crop = (h1.dim(0) - t2) / 2;
  const auto h = Add(h2, Slice(h1, 0, crop, t2));  // [T', C]

  const auto scores = Matmul(Tanh(Linear(h, att_w_, att_b_)), att_v_);  // [T', 1]
  const auto att = Softmax(Transpose(scores));                         // [1, T']
  if (attention) *attention = att;
  const auto mean = Matmul(att, h);                                     // [1, C]
  const auto centered = Sub(h, mean);
  const auto var = Matmul(att, Mul(centered, centered));
  const auto std = Sqrt(AddScalar(var, static_cast<T>(kStdFloor)));
  return Linear(Concat(std::vector<BasicTensor<T>>{mean, std}, 1), lin_w_, lin_b_);
}

void AamConfig::Validate() const {
  if (!(margin >= 0.0)) throw std::invalid_argument("aam: margin must be >= 0");
  if (!(scale > 0.0)) throw std::invalid_argument("aam: scale must be > 0");
}

template <typename T>
BasicTensor<T> CosineLogits(const BasicTensor<T>& y, const BasicTensor<T>& weights) {
  if (y.ndim() != 2 || weights.ndim() != 2 || y.dim(1) != weights.dim(1)) {
    throw ShapeError("aam: embedding " + ShapeToString(y.shape()) + " vs weights " +
                     ShapeToString(weights.shape()));
  }
  return Matmul(L2NormalizeRows(y), Transpose(L2NormalizeRows(weights)));
}

template <typename T>
BasicTensor<T> AddAngularMargin(const BasicTensor<T>& cosines, std::span<const int> labels,
                                double margin) {
  const std::size_t b = cosines.dim(0), c = cosines.dim(1);
  if (labels.size() != b) throw ShapeError("aam: label count does not match batch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw std::out_of_range("aam: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(c) + ")");
    }
  }
  const double cos_m = std::cos(margin), sin_m = std::sin(margin);
  const double threshold = std::cos(std::numbers::pi - margin);
  const double fallback = std::sin(std::numbers::pi - margin) * margin;
  std::vector<T> data = cosines.values();
  std::vector<T> slope(b, T(1));
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t at = i * c + static_cast<std::size_t>(labels[i]);
    const double x = std::clamp<double>(data[at], -1.0, 1.0);
    if (x > threshold) {
      const double s = std::sqrt(std::max(1.0 - x * x, 1e-12));
      data[at] = static_cast<T>(x * cos_m - s * sin_m);
      slope[i] = static_cast<T>(cos_m + x * sin_m / s);
    } else {
      data[at] = static_cast<T>(x - fallback);
    }
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return MakeOp<T>("angular_margin", cosines.shape(), std::move(data), {cosines},
                   [lab, slope, c](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                     for (std::size_t i = 0; i < lab.size(); ++i) {
                       const std::size_t at = i * c + static_cast<std::size_t>(lab[i]);
                       g[at] += (slope[i] - T(1)) * self.grad[at];
                     }
                   });
}

template <typename T>
BasicTensor<T> AamSoftmaxLoss(const BasicTensor<T>& y, std::span<const int> labels,
                              const BasicTensor<T>& weights, const AamConfig& cfg) {
  cfg.Validate();
  if (cfg.n_classes > 0 && weights.dim(0) != static_cast<std::size_t>(cfg.n_classes)) {
    throw ShapeError("aam: weights have " + std::to_string(weights.dim(0)) +
                     " rows, config says " + std::to_string(cfg.n_classes));
  }
  const auto logits = Scale(AddAngularMargin(CosineLogits(y, weights), labels, cfg.margin),
                            static_cast<T>(cfg.scale));
  return CrossEntropy(logits, labels);
}

#define SELFSV_INSTANTIATE_BACKEND(T)                                                 \
  template std::vector<double> EffectiveLayerWeights(const BasicTensor<T>&);          \
  template BasicTensor<T> LayerAggregate(const BasicTensor<T>&,                       \
                                         const BasicLayerStack<T>&);                  \
  template class BasicBackend<T>;                                                     \
  template BasicTensor<T> CosineLogits(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> AddAngularMargin(const BasicTensor<T>&,                     \
                                           std::span<const int>, double);             \
  template BasicTensor<T> AamSoftmaxLoss(const BasicTensor<T>&, std::span<const int>, \
                                         const BasicTensor<T>&, const AamConfig&);

SELFSV_INSTANTIATE_BACKEND(float)
SELFSV_INSTANTIATE_BACKEND(double)

}  // namespace selfsv
