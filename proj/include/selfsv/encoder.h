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

#ifndef SELFSV_ENCODER_H_
#define SELFSV_ENCODER_H_

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "selfsv/checkpoint.h"
#include "selfsv/optim.h"
#include "selfsv/tensor.h"

namespace selfsv {

enum class EncoderVariant { kTransformer, kConformer };

std::string VariantName(EncoderVariant v);
EncoderVariant ParseVariant(const std::string& name);

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::kTransformer;
  int layers = 4;
  int dim = 64;
  int heads = 4;
  int ffn_mult = 4;
  std::vector<int> cnn_strides = {5, 4, 2, 2};
  std::vector<int> cnn_kernels;  // empty: kernel == stride per layer
  int cnn_channels = 64;
  int conv_kernel = 7;  // conformer depthwise kernel

  int Kernel(std::size_t layer) const;
  int TotalStride() const;
  // Samples spanned by one output frame.
  int ReceptiveField() const;
  void Validate() const;

  void WriteMeta(CheckpointFile& file, const std::string& prefix = "encoder.") const;
  static EncoderConfig FromMeta(const CheckpointFile& file,
                                const std::string& prefix = "encoder.");
};

/// Output frames produced by the CNN for `num_samples` inputs (0 if the
/// input is shorter than one receptive field).
std::size_t EncoderFrameCount(std::size_t num_samples, const EncoderConfig& cfg);
/// Smallest input length giving at least `frames` output frames.
std::size_t MinSamplesForFrames(std::size_t frames, const EncoderConfig& cfg);
/// Centre time (seconds) of each encoder frame.
std::vector<double> EncoderFrameCenters(std::size_t num_samples,
                                        const EncoderConfig& cfg,
                                        int sample_rate);

struct MaskConfig {
  double prob = 0.08;
  int span = 10;
};

template <typename T>
struct BasicMaskResult {
  BasicTensor<T> masked;
  std::vector<std::size_t> indices;  // sorted, unique
};

/// Frame indices chosen by span masking; pure function of (T, cfg, seed).
std::vector<std::size_t> SampleMaskIndices(std::size_t frames,
                                           const MaskConfig& cfg,
                                           std::uint64_t seed);

/// Replaces the listed rows of x [T, D] by `embedding` [D]. Other rows are
/// copied unchanged.
template <typename T>
BasicTensor<T> ReplaceRows(const BasicTensor<T>& x,
                           std::span<const std::size_t> rows,
                           const BasicTensor<T>& embedding);

template <typename T>
using BasicLayerStack = std::vector<BasicTensor<T>>;
using LayerStack = BasicLayerStack<float>;

/// Sinusoidal absolute position table [T, D].
template <typename T>
BasicTensor<T> SinusoidalPositions(std::size_t frames, std::size_t dim);

/// Multi-head scaled dot-product self-attention on already projected
/// q, k, v [T, D]. Per-head probability matrices go to `probs` when given.
template <typename T>
BasicTensor<T> MultiHeadAttention(const BasicTensor<T>& q,
                                  const BasicTensor<T>& k,
                                  const BasicTensor<T>& v, int heads,
                                  std::vector<BasicTensor<T>>* probs = nullptr);

/// y = x W + b with W [in, out].
template <typename T>
BasicTensor<T> Linear(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& b);

/// CNN front-end, span masking and a Transformer or Conformer stack. The
/// parameters live in the ParameterSet passed to the constructor under
/// `prefix`.
template <typename T>
class BasicEncoder {
 public:
  BasicEncoder(const EncoderConfig& cfg, BasicParameterSet<T>& params,
               std::mt19937_64& rng, const std::string& prefix = "encoder.");

  const EncoderConfig& config() const { return cfg_; }

  /// Waveform [N] to H0 [T, D]. Normalizes the waveform to zero mean and
  /// unit variance, runs strided conv + gelu layers, then layer norm and a
  /// projection to D.
  BasicTensor<T> CnnEncode(std::span<const float> samples) const;

  BasicMaskResult<T> ApplyMask(const BasicTensor<T>& h0, const MaskConfig& cfg,
                               std::uint64_t seed) const;

  /// Returns H_0 (the input) followed by the L block outputs. Attention
  /// probabilities of every layer are appended to `attention` when given.
  BasicLayerStack<T> Encode(const BasicTensor<T>& h0,
                            std::vector<BasicTensor<T>>* attention = nullptr) const;

  BasicLayerStack<T> Forward(std::span<const float> samples) const {
    return Encode(CnnEncode(samples));
  }

  const BasicTensor<T>& mask_embedding() const { return mask_embedding_; }

 private:
  struct ConvLayer {
    BasicTensor<T> weight, bias;
    Conv1dOptions opts;
  };
  struct Ffn {
    BasicTensor<T> ln_g, ln_b, w1, b1, w2, b2;
  };
  struct Attention {
    BasicTensor<T> ln_g, ln_b, wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct ConvModule {
    BasicTensor<T> ln_g, ln_b, pw1_w, pw1_b, dw_w, dw_b, norm_g, norm_b,
        pw2_w, pw2_b;
  };
  struct Block {
    Attention attn;
    Ffn ffn1, ffn2;  // transformer uses ffn1 only
    ConvModule conv;
    BasicTensor<T> final_g, final_b;
  };

  BasicTensor<T> RunFfn(const Ffn& f, const BasicTensor<T>& x, bool swish) const;
  BasicTensor<T> RunAttention(const Attention& a, const BasicTensor<T>& x,
                              std::vector<BasicTensor<T>>* attention) const;
  BasicTensor<T> RunConvModule(const ConvModule& c, const BasicTensor<T>& x) const;

  EncoderConfig cfg_;
  std::vector<ConvLayer> cnn_;
  BasicTensor<T> cnn_ln_g_, cnn_ln_b_, proj_w_, proj_b_;
  BasicTensor<T> mask_embedding_;
  std::vector<Block> blocks_;
};

using Encoder = BasicEncoder<float>;

/// Rebuilds the encoder stored in a checkpoint; its parameters are added to
/// `params` and overwritten with the saved values.
Encoder LoadEncoder(const CheckpointFile& file, ParameterSet& params);

}  // namespace selfsv

#endif  // SELFSV_ENCODER_H_
