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

#include "selfsv/encoder.h"

#include <algorithm>
#include <cmath>
#include <sstream>
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

std::vector<int> ParseInts(const std::string& text) {
  std::vector<int> out;
  if (text.empty()) return out;
  for (const auto& field : SplitString(text, ',')) out.push_back(std::stoi(field));
  return out;
}

template <typename T>
BasicTensor<T> Ones(std::size_t n) {
  return BasicTensor<T>::Full({n}, T(1));
}

}  // namespace

std::string VariantName(EncoderVariant v) {
  return v == EncoderVariant::kTransformer ? "transformer" : "conformer";
}

EncoderVariant ParseVariant(const std::string& name) {
  if (name == "transformer") return EncoderVariant::kTransformer;
  if (name == "conformer") return EncoderVariant::kConformer;
  throw std::invalid_argument("unknown encoder variant '" + name +
                              "' (expected transformer or conformer)");
}

int EncoderConfig::Kernel(std::size_t layer) const {
  return cnn_kernels.empty() ? cnn_strides.at(layer) : cnn_kernels.at(layer);
}

int EncoderConfig::TotalStride() const {
  int s = 1;
  for (int v : cnn_strides) s *= v;
  return s;
}

int EncoderConfig::ReceptiveField() const {
  int rf = 1, jump = 1;
  for (std::size_t i = 0; i < cnn_strides.size(); ++i) {
    rf += (Kernel(i) - 1) * jump;
    jump *= cnn_strides[i];
  }
  return rf;
}

void EncoderConfig::Validate() const {
  if (layers < 0) throw std::invalid_argument("encoder: layers must be >= 0");
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw std::invalid_argument("encoder: dim " + std::to_string(dim) +
                                " must be divisible by heads " + std::to_string(heads));
  }
  if (ffn_mult < 1) throw std::invalid_argument("encoder: ffn_mult must be >= 1");
  if (cnn_strides.empty()) throw std::invalid_argument("encoder: cnn_strides is empty");
  for (int s : cnn_strides) {
    if (s < 1) throw std::invalid_argument("encoder: strides must be >= 1");
  }
  if (!cnn_kernels.empty()) {
    if (cnn_kernels.size() != cnn_strides.size()) {
      throw std::invalid_argument("encoder: cnn_kernels and cnn_strides differ in length");
    }
    for (int k : cnn_kernels) {
      if (k < 1) throw std::invalid_argument("encoder: kernels must be >= 1");
    }
  }
  if (cnn_channels < 1) throw std::invalid_argument("encoder: cnn_channels must be >= 1");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) {
    throw std::invalid_argument("encoder: conv_kernel must be odd and positive");
  }
}

void EncoderConfig::WriteMeta(CheckpointFile& file, const std::string& prefix) const {
  file.SetMeta(prefix + "variant", VariantName(variant));
  file.SetMeta(prefix + "layers", std::to_string(layers));
  file.SetMeta(prefix + "dim", std::to_string(dim));
  file.SetMeta(prefix + "heads", std::to_string(heads));
  file.SetMeta(prefix + "ffn_mult", std::to_string(ffn_mult));
  file.SetMeta(prefix + "cnn_strides", JoinInts(cnn_strides));
  file.SetMeta(prefix + "cnn_kernels", JoinInts(cnn_kernels));
  file.SetMeta(prefix + "cnn_channels", std::to_string(cnn_channels));
  file.SetMeta(prefix + "conv_kernel", std::to_string(conv_kernel));
}

EncoderConfig EncoderConfig::FromMeta(const CheckpointFile& file,
                                      const std::string& prefix) {
  EncoderConfig c;
  c.variant = ParseVariant(file.Meta(prefix + "variant"));
  c.layers = std::stoi(file.Meta(prefix + "layers"));
  c.dim = std::stoi(file.Meta(prefix + "dim"));
  c.heads = std::stoi(file.Meta(prefix + "heads"));
  c.ffn_mult = std::stoi(file.Meta(prefix + "ffn_mult"));
  c.cnn_strides = ParseInts(file.Meta(prefix + "cnn_strides"));
  c.cnn_kernels = ParseInts(file.MetaOr(prefix + "cnn_kernels", ""));
  c.cnn_channels = std::stoi(file.Meta(prefix + "cnn_channels"));
  c.conv_kernel = std::stoi(file.Meta(prefix + "conv_kernel"));
  c.Validate();
  return c;
}

std::size_t EncoderFrameCount(std::size_t num_samples, const EncoderConfig& cfg) {
  std::size_t n = num_samples;
  for (std::size_t i = 0; i < cfg.cnn_strides.size(); ++i) {
    const auto k = static_cast<std::size_t>(cfg.Kernel(i));
    if (n < k) return 0;
    n = (n - k) / static_cast<std::size_t>(cfg.cnn_strides[i]) + 1;
  }
  return n;
}

std::size_t MinSamplesForFrames(std::size_t frames, const EncoderConfig& cfg) {
  std::size_t n = std::max<std::size_t>(frames, 1);
  for (std::size_t i = cfg.cnn_strides.size(); i-- > 0;) {
    n = (n - 1) * static_cast<std::size_t>(cfg.cnn_strides[i]) +
        static_cast<std::size_t>(cfg.Kernel(i));
  }
  return n;
}

std::vector<double> EncoderFrameCenters(std::size_t num_samples,
                                        const EncoderConfig& cfg,
                                        int sample_rate) {
  const std::size_t t = EncoderFrameCount(num_samples, cfg);
  const double half_field = (cfg.ReceptiveField() - 1) / 2.0;
  std::vector<double> centers(t);
  for (std::size_t j = 0; j < t; ++j) {
    centers[j] = (static_cast<double>(j) * cfg.TotalStride() + half_field) / sample_rate;
  }
  return centers;
}

std::vector<std::size_t> SampleMaskIndices(std::size_t frames, const MaskConfig& cfg,
                                           std::uint64_t seed) {
  if (cfg.prob < 0.0 || cfg.prob > 1.0) {
    throw std::invalid_argument("mask: prob must be in [0, 1]");
  }
  if (cfg.span < 1) throw std::invalid_argument("mask: span must be >= 1");
  if (frames < static_cast<std::size_t>(cfg.span)) {
    throw std::invalid_argument("mask: " + std::to_string(frames) +
                                " frames is shorter than span " + std::to_string(cfg.span));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<char> masked(frames, 0);
  for (std::size_t t = 0; t < frames; ++t) {
    if (unit(rng) < cfg.prob) {
      const std::size_t end = std::min(frames, t + static_cast<std::size_t>(cfg.span));
      std::fill(masked.begin() + t, masked.begin() + end, 1);
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < frames; ++t) {
    if (masked[t]) out.push_back(t);
  }
  return out;
}

template <typename T>
BasicTensor<T> ReplaceRows(const BasicTensor<T>& x, std::span<const std::size_t> rows,
                           const BasicTensor<T>& embedding) {
  if (x.ndim() != 2 || embedding.numel() != x.dim(1)) {
    throw ShapeError("replace_rows: x " + ShapeToString(x.shape()) + " embedding " +
                     ShapeToString(embedding.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> data = x.values();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const auto& e = embedding.values();
  for (std::size_t r : idx) {
    if (r >= n) throw std::out_of_range("replace_rows: row out of range");
    std::copy(e.begin(), e.end(), data.begin() + r * d);
  }
  return MakeOp<T>("replace_rows", x.shape(), std::move(data), {x, embedding},
                   [idx, n, d](Node<T>& self) {
                     std::vector<char> replaced(n, 0);
                     for (std::size_t r : idx) replaced[r] = 1;
                     auto& gx = self.parents[0]->GradBuffer();
                     auto& ge = self.parents[1]->GradBuffer();
                     for (std::size_t r = 0; r < n; ++r) {
                       for (std::size_t j = 0; j < d; ++j) {
                         (replaced[r] ? ge[j] : gx[r * d + j]) += self.grad[r * d + j];
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> SinusoidalPositions(std::size_t frames, std::size_t dim) {
  std::vector<T> data(frames * dim);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      const double angle = static_cast<double>(t) * rate;
      data[t * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return BasicTensor<T>::FromData({frames, dim}, std::move(data));
}

template <typename T>
BasicTensor<T> Linear(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& b) {
  return Add(Matmul(x, w), b);
}

template <typename T>
BasicTensor<T> MultiHeadAttention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                  const BasicTensor<T>& v, int heads,
                                  std::vector<BasicTensor<T>>* probs) {
  const std::size_t d = q.dim(1);
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<BasicTensor<T>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const std::size_t start = static_cast<std::size_t>(h) * dh;
    BasicTensor<T> qh = heads == 1 ? q : Slice(q, 1, start, dh);
    BasicTensor<T> kh = heads == 1 ? k : Slice(k, 1, start, dh);
    BasicTensor<T> vh = heads == 1 ? v : Slice(v, 1, start, dh);
    BasicTensor<T> p = Softmax(Scale(Matmul(qh, Transpose(kh)), scale));
    if (probs) probs->push_back(p);
    outs.push_back(Matmul(p, vh));
  }
  return heads == 1 ? outs[0] : Concat(outs, 1);
}

template <typename T>
BasicEncoder<T>::BasicEncoder(const EncoderConfig& cfg, BasicParameterSet<T>& params,
                              std::mt19937_64& rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.Validate();
  const auto d = static_cast<std::size_t>(cfg_.dim);
  const auto c = static_cast<std::size_t>(cfg_.cnn_channels);
  const std::size_t ffn = d * static_cast<std::size_t>(cfg_.ffn_mult);
  auto add = [&](const std::string& name, BasicTensor<T> t) {
    return params.Add(prefix + name, std::move(t));
  };
  auto weight = [&](const std::string& name, std::size_t in, std::size_t out) {
    return add(name, NormalInit<T>({in, out}, 1.0 / std::sqrt(double(in)), rng));
  };
  auto zeros = [&](const std::string& name, std::size_t n) {
    return add(name, BasicTensor<T>::Zeros({n}));
  };
  auto ones = [&](const std::string& name, std::size_t n) { return add(name, Ones<T>(n)); };

  std::size_t c_in = 1;
  for (std::size_t i = 0; i < cfg_.cnn_strides.size(); ++i) {
    const auto k = static_cast<std::size_t>(cfg_.Kernel(i));
    const std::string name = "cnn." + std::to_string(i);
    ConvLayer layer;
    layer.weight = add(name + ".weight",
                       NormalInit<T>({c, c_in, k}, std::sqrt(2.0 / double(c_in * k)), rng));
    layer.bias = zeros(name + ".bias", c);
    layer.opts.stride = static_cast<std::size_t>(cfg_.cnn_strides[i]);
    cnn_.push_back(layer);
    c_in = c;
  }
  cnn_ln_g_ = ones("cnn.ln.gamma", c);
  cnn_ln_b_ = zeros("cnn.ln.beta", c);
  proj_w_ = weight("cnn.proj.weight", c, d);
  proj_b_ = zeros("cnn.proj.bias", d);
  mask_embedding_ = add("mask_embedding", UniformInit<T>({d}, 1.0, rng));

  auto make_ffn = [&](const std::string& name) {
    Ffn f;
    f.ln_g = ones(name + ".ln.gamma", d);
    f.ln_b = zeros(name + ".ln.beta", d);
    f.w1 = weight(name + ".w1", d, ffn);
    f.b1 = zeros(name + ".b1", ffn);
    f.w2 = weight(name + ".w2", ffn, d);
    f.b2 = zeros(name + ".b2", d);
    return f;
  };
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string name = "layer." + std::to_string(l);
    Block b;
    b.attn.ln_g = ones(name + ".attn.ln.gamma", d);
    b.attn.ln_b = zeros(name + ".attn.ln.beta", d);
    b.attn.wq = weight(name + ".attn.wq", d, d);
    b.attn.bq = zeros(name + ".attn.bq", d);
    b.attn.wk = weight(name + ".attn.wk", d, d);
    b.attn.bk = zeros(name + ".attn.bk", d);
    b.attn.wv = weight(name + ".attn.wv", d, d);
    b.attn.bv = zeros(name + ".attn.bv", d);
    b.attn.wo = weight(name + ".attn.wo", d, d);
    b.attn.bo = zeros(name + ".attn.bo", d);
    b.ffn1 = make_ffn(name + ".ffn1");
    if (cfg_.variant == EncoderVariant::kConformer) {
      b.ffn2 = make_ffn(name + ".ffn2");
      const auto kc = static_cast<std::size_t>(cfg_.conv_kernel);
      ConvModule& m = b.conv;
      m.ln_g = ones(name + ".conv.ln.gamma", d);
      m.ln_b = zeros(name + ".conv.ln.beta", d);
      m.pw1_w = weight(name + ".conv.pw1.weight", d, 2 * d);
      m.pw1_b = zeros(name + ".conv.pw1.bias", 2 * d);
      m.dw_w = add(name + ".conv.dw.weight",
                   NormalInit<T>({d, 1, kc}, 1.0 / std::sqrt(double(kc)), rng));
      m.dw_b = zeros(name + ".conv.dw.bias", d);
      m.norm_g = ones(name + ".conv.norm.gamma", d);
      m.norm_b = zeros(name + ".conv.norm.beta", d);
      m.pw2_w = weight(name + ".conv.pw2.weight", d, d);
      m.pw2_b = zeros(name + ".conv.pw2.bias", d);
      b.final_g = ones(name + ".final_ln.gamma", d);
      b.final_b = zeros(name + ".final_ln.beta", d);
    }
    blocks_.push_back(std::move(b));
  }
}

template <typename T>
BasicTensor<T> BasicEncoder<T>::CnnEncode(std::span<const float> samples) const {
  const std::size_t frames = EncoderFrameCount(samples.size(), cfg_);
  if (frames < 2) {
    throw std::invalid_argument("cnn_encode: " + std::to_string(samples.size()) +
                                " samples is too short; need at least " +
                                std::to_string(MinSamplesForFrames(2, cfg_)));
  }
  double mean = 0.0, sq = 0.0;
  for (float s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  for (float s : samples) sq += (s - mean) * (s - mean);
  const double inv_std = 1.0 / std::sqrt(sq / static_cast<double>(samples.size()) + 1e-5);
  std::vector<T> normalized(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    normalized[i] = static_cast<T>((samples[i] - mean) * inv_std);
  BasicTensor<T> x = BasicTensor<T>::FromData({samples.size(), 1}, std::move(normalized));
  for (const auto& layer : cnn_) x = Gelu(Conv1d(x, layer.weight, layer.bias, layer.opts));
  x = LayerNorm(x, cnn_ln_g_, cnn_ln_b_, T(1e-5));
  return Linear(x, proj_w_, proj_b_);
}

template <typename T>
BasicMaskResult<T> BasicEncoder<T>::ApplyMask(const BasicTensor<T>& h0, const MaskConfig& cfg,
                                              std::uint64_t seed) const {
  BasicMaskResult<T> r;
  r.indices = SampleMaskIndices(h0.dim(0), cfg, seed);
  r.masked = r.indices.empty() ? h0 : ReplaceRows(h0, r.indices, mask_embedding_);
  return r;
}

template <typename T>
BasicTensor<T> BasicEncoder<T>::RunFfn(const Ffn& f, const BasicTensor<T>& x,
                                       bool swish) const {
  BasicTensor<T> h = Linear(LayerNorm(x, f.ln_g, f.ln_b, T(1e-5)), f.w1, f.b1);
  h = swish ? Swish(h) : Gelu(h);
  return Linear(h, f.w2, f.b2);
}

template <typename T>
BasicTensor<T> BasicEncoder<T>::RunAttention(const Attention& a, const BasicTensor<T>& x,
                                             std::vector<BasicTensor<T>>* attention) const {
  BasicTensor<T> n = LayerNorm(x, a.ln_g, a.ln_b, T(1e-5));
  BasicTensor<T> out = MultiHeadAttention(Linear(n, a.wq, a.bq), Linear(n, a.wk, a.bk),
                                          Linear(n, a.wv, a.bv), cfg_.heads, attention);
  return Linear(out, a.wo, a.bo);
}

template <typename T>
BasicTensor<T> BasicEncoder<T>::RunConvModule(const ConvModule& c,
                                              const BasicTensor<T>& x) const {
  const std::size_t d = static_cast<std::size_t>(cfg_.dim);
  BasicTensor<T> h = Linear(LayerNorm(x, c.ln_g, c.ln_b, T(1e-5)), c.pw1_w, c.pw1_b);
  h = Mul(Slice(h, 1, 0, d), Sigmoid(Slice(h, 1, d, d)));  // GLU
  Conv1dOptions opts;
  opts.padding = static_cast<std::size_t>(cfg_.conv_kernel / 2);
  opts.groups = d;
  h = Conv1d(h, c.dw_w, c.dw_b, opts);
  h = Swish(LayerNorm(h, c.norm_g, c.norm_b, T(1e-5)));
  return Linear(h, c.pw2_w, c.pw2_b);
}

template <typename T>
BasicLayerStack<T> BasicEncoder<T>::Encode(const BasicTensor<T>& h0,
                                           std::vector<BasicTensor<T>>* attention) const {
  if (h0.ndim() != 2 || h0.dim(1) != static_cast<std::size_t>(cfg_.dim)) {
    throw ShapeError("encode: expected [T, " + std::to_string(cfg_.dim) + "], got " +
                     ShapeToString(h0.shape()));
  }
  BasicLayerStack<T> stack = {h0};
  BasicTensor<T> x = Add(h0, SinusoidalPositions<T>(h0.dim(0), h0.dim(1)));
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    if (cfg_.variant == EncoderVariant::kTransformer) {
      x = Add(x, RunAttention(b.attn, x, attention));
      x = Add(x, RunFfn(b.ffn1, x, false));
    } else {
      x = Add(x, Scale(RunFfn(b.ffn1, x, true), T(0.5)));
      x = Add(x, RunAttention(b.attn, x, attention));
      x = Add(x, RunConvModule(b.conv, x));
      x = Add(x, Scale(RunFfn(b.ffn2, x, true), T(0.5)));
      x = LayerNorm(x, b.final_g, b.final_b, T(1e-5));
    }
    if (!x.AllFinite()) {
      throw std::runtime_error("encode: non-finite values in the output of layer " +
                               std::to_string(l + 1));
    }
    stack.push_back(x);
  }
  return stack;
}

Encoder LoadEncoder(const CheckpointFile& file, ParameterSet& params) {
  std::mt19937_64 rng(0);
  Encoder enc(EncoderConfig::FromMeta(file), params, rng);
  file.LoadParameters(params, "encoder.");
  return enc;
}

#define SELFSV_INSTANTIATE_ENCODER(T)                                             \
  template class BasicEncoder<T>;                                                \
  template BasicTensor<T> ReplaceRows(const BasicTensor<T>&,                     \
                                      std::span<const std::size_t>,              \
                                      const BasicTensor<T>&);                    \
  template BasicTensor<T> SinusoidalPositions<T>(std::size_t, std::size_t);      \
  template BasicTensor<T> Linear(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                 const BasicTensor<T>&);                         \
  template BasicTensor<T> MultiHeadAttention(                                    \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int,  \
      std::vector<BasicTensor<T>>*);

SELFSV_INSTANTIATE_ENCODER(float)
SELFSV_INSTANTIATE_ENCODER(double)

#undef SELFSV_INSTANTIATE_ENCODER

}  // namespace selfsv
