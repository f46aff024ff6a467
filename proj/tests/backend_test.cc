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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aam_oracle.h"
#include "gradcheck.h"
#include "model_gradient_cases.h"

namespace selfsv {
namespace {

using testing::RandomTensor64;

Tensor RandomTensor(Shape shape, std::mt19937_64& rng, float scale = 1.0f) {
  std::normal_distribution<float> g(0.0f, scale);
  std::vector<float> v(NumElements(shape));
  for (float& x : v) x = g(rng);
  return Tensor::FromData(std::move(shape), std::move(v));
}

LayerStack RandomStack(std::size_t layers, std::size_t t, std::size_t d, std::mt19937_64& rng) {
  LayerStack s;
  for (std::size_t l = 0; l < layers; ++l) s.push_back(RandomTensor({t, d}, rng));
  return s;
}

LayerStack PermuteFrames(const LayerStack& s, const std::vector<std::size_t>& perm) {
  LayerStack out;
  for (const auto& h : s) out.push_back(IndexRows(h, perm));
  return out;
}

std::vector<float> Values(const ParameterSet& p, const std::string& name) {
  return p.Get(name).tensor.values();
}

TEST(LayerWeightsTest, EffectiveWeightsArePositiveAndSumToOne) {
  std::mt19937_64 rng(1);
  for (int draw = 0; draw < 200; ++draw) {
    const float scale = draw < 100 ? 1.0f : 50.0f;
    const auto w = EffectiveLayerWeights(RandomTensor({1 + draw % 13ul}, rng, scale));
    double total = 0;
    for (double x : w) {
      EXPECT_GE(x, 0.0);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(LayerAggregateTest, SaturatedWeightSelectsLayer) {
  std::mt19937_64 rng(2);
  const LayerStack s = RandomStack(5, 7, 6, rng);
  for (std::size_t j = 0; j < 5; ++j) {
    std::vector<float> raw(5, 0.0f);
    raw[j] = 1e4f;
    const Tensor out = LayerAggregate(Tensor::FromData({5}, raw), s);
    for (std::size_t i = 0; i < out.numel(); ++i) {
      EXPECT_NEAR(out.values()[i], s[j].values()[i], 1e-4);
    }
  }
}

TEST(LayerAggregateTest, UniformWeightsAverageConstants) {
  const LayerStack s = {Tensor::Full({3, 4}, 1.0f), Tensor::Full({3, 4}, 3.0f)};
  const Tensor out = LayerAggregate(Tensor::Zeros({2}), s);
  for (float v : out.values()) EXPECT_FLOAT_EQ(v, 2.0f);
}

TEST(LayerAggregateTest, MatchesDirectSum) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t layers = 2 + trial % 4;
    const LayerStack s = RandomStack(layers, 5, 3, rng);
    const Tensor raw = RandomTensor({layers}, rng);
    double z = 0;
    for (float r : raw.values()) z += std::exp(static_cast<double>(r));
    const Tensor out = LayerAggregate(raw, s);
    for (std::size_t i = 0; i < out.numel(); ++i) {
      double expect = 0;
      for (std::size_t l = 0; l < layers; ++l) {
        expect += std::exp(static_cast<double>(raw.values()[l])) / z * s[l].values()[i];
      }
      EXPECT_NEAR(out.values()[i], expect, 1e-6);
    }
  }
}

TEST(LayerAggregateTest, CountMismatchFails) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(LayerAggregate(Tensor::Zeros({3}), RandomStack(2, 3, 3, rng)), ShapeError);
}

BackendConfig SmallMhfa() {
  BackendConfig c;
  c.num_layers = 3;
  c.input_dim = 6;
  c.heads = 2;
  c.key_dim = 5;
  c.value_dim = 4;
  c.embedding_dim = 3;
  return c;
}

void RandomizeLayerWeights(ParameterSet& params, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (auto& p : params.items()) {
    if (p.name.find("_weights") != std::string::npos) {
      for (float& v : p.tensor.mutable_data()) v = g(rng);
    }
  }
}

TEST(MhfaTest, SingleFrameIgnoresQueries) {
  std::mt19937_64 rng(5);
  ParameterSet params;
  Backend b(SmallMhfa(), params, rng);
  RandomizeLayerWeights(params, rng);
  const LayerStack s = RandomStack(3, 1, 6, rng);
  const Tensor y1 = b.Forward(s);
  Tensor queries = params.Get("backend.head_queries").tensor;
  for (float& v : queries.mutable_data()) v *= -3.0f;
  const Tensor y2 = b.Forward(s);
  // Straight-line: y = (sum_l w_l H_l) P_v W_out + b_out.
  const auto wv = EffectiveLayerWeights(b.value_weights());
  const auto pv = Values(params, "backend.value_proj");
  const auto wo = Values(params, "backend.out_proj.weight");
  const auto bo = Values(params, "backend.out_proj.bias");
  std::vector<double> agg(6, 0.0), v(4, 0.0);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t j = 0; j < 6; ++j) agg[j] += wv[l] * s[l].values()[j];
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t j = 0; j < 6; ++j) v[c] += agg[j] * pv[j * 4 + c];
  for (std::size_t e = 0; e < 3; ++e) {
    double expect = bo[e];
    for (std::size_t c = 0; c < 4; ++c) expect += v[c] * wo[c * 3 + e];
    EXPECT_NEAR(y1.values()[e], expect, 1e-5);
    EXPECT_NEAR(y2.values()[e], expect, 1e-5);
  }
}

TEST(MhfaTest, FramePermutationInvariant) {
  std::mt19937_64 rng(6);
  BackendConfig cfg;
  cfg.num_layers = 5;
  cfg.input_dim = 16;
  ParameterSet params;
  Backend b(cfg, params, rng);
  RandomizeLayerWeights(params, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const LayerStack s = RandomStack(5, 20 + trial, 16, rng);
    std::vector<std::size_t> perm(s[0].dim(0));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor y = b.Forward(s), yp = b.Forward(PermuteFrames(s, perm));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.values()[i], yp.values()[i], 1e-5);
  }
}

TEST(MhfaTest, AttentionRowsSumToOneUnderScaling) {
  std::mt19937_64 rng(7);
  ParameterSet params;
  Backend b(SmallMhfa(), params, rng);
  LayerStack s = RandomStack(3, 9, 6, rng);
  for (float scale : {1.0f, 0.01f, 40.0f}) {
    LayerStack scaled;
    for (const auto& h : s) scaled.push_back(Scale(h, scale));
    Tensor att;
    b.Forward(scaled, &att);
    ASSERT_EQ(att.shape(), (Shape{2, 9}));
    for (std::size_t h = 0; h < 2; ++h) {
      double total = 0;
      for (std::size_t t = 0; t < 9; ++t) total += att.at(h, t);
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(MhfaTest, MatchesScalarOracle) {
  // L = 1 (two stack entries), T = 3, D = 4, two heads.
  std::mt19937_64 rng(8);
  BackendConfig cfg;
  cfg.num_layers = 2;
  cfg.input_dim = 4;
  cfg.heads = 2;
  cfg.key_dim = 3;
  cfg.value_dim = 4;
  cfg.embedding_dim = 2;
  BasicParameterSet<double> params;
  BasicBackend<double> b(cfg, params, rng);
  std::vector<Tensor64> stack;
  for (int l = 0; l < 2; ++l) stack.push_back(RandomTensor64({3, 4}, rng, 1.0, false));
  params.Get("backend.key_weights").tensor.node()->data = {0.3, -0.2};
  params.Get("backend.value_weights").tensor.node()->data = {-0.5, 0.4};
  const auto y = b.Forward(stack);

  auto get = [&](const char* n) { return params.Get(std::string("backend.") + n).tensor.values(); };
  const auto kp = get("key_proj"), vp = get("value_proj"), q = get("head_queries");
  const auto wo = get("out_proj.weight"), bo = get("out_proj.bias");
  const double zk = std::exp(0.3) + std::exp(-0.2), zv = std::exp(-0.5) + std::exp(0.4);
  const double wk[2] = {std::exp(0.3) / zk, std::exp(-0.2) / zk};
  const double wv[2] = {std::exp(-0.5) / zv, std::exp(0.4) / zv};
  double key[3][3] = {}, val[3][4] = {};
  for (int t = 0; t < 3; ++t) {
    for (int j = 0; j < 4; ++j) {
      const double hk = wk[0] * stack[0].at(t, j) + wk[1] * stack[1].at(t, j);
      const double hv = wv[0] * stack[0].at(t, j) + wv[1] * stack[1].at(t, j);
      for (int c = 0; c < 3; ++c) key[t][c] += hk * kp[j * 3 + c];
      for (int c = 0; c < 4; ++c) val[t][c] += hv * vp[j * 4 + c];
    }
  }
  double pooled[4] = {};
  for (int h = 0; h < 2; ++h) {
    double score[3], z = 0;
    for (int t = 0; t < 3; ++t) {
      score[t] = 0;
      for (int c = 0; c < 3; ++c) score[t] += key[t][c] * q[h * 3 + c];
    }
    const double top = std::max({score[0], score[1], score[2]});
    for (double& s : score) z += (s = std::exp(s - top));
    for (int t = 0; t < 3; ++t)
      for (int c = 0; c < 2; ++c) pooled[h * 2 + c] += score[t] / z * val[t][h * 2 + c];
  }
  for (int e = 0; e < 2; ++e) {
    double expect = bo[e];
    for (int c = 0; c < 4; ++c) expect += pooled[c] * wo[c * 2 + e];
    EXPECT_NEAR(y.at(0, e), expect, 1e-10);
  }
}

BackendConfig SmallTdnn() {
  BackendConfig c;
  c.kind = BackendKind::kTdnn;
  c.num_layers = 2;
  c.input_dim = 3;
  c.tdnn_channels = 4;
  c.tdnn_kernel = 3;
  c.tdnn_dilations = {1, 2};
  c.attention_dim = 3;
  c.embedding_dim = 2;
  return c;
}

TEST(TdnnTest, ConstantInputHasZeroStd) {
  std::mt19937_64 rng(9);
  const BackendConfig cfg = SmallTdnn();
  ParameterSet params;
  Backend b(cfg, params, rng);
  const std::vector<float> x = {0.4f, -1.2f, 0.7f};
  std::vector<float> rows;
  for (int t = 0; t < 12; ++t) rows.insert(rows.end(), x.begin(), x.end());
  const Tensor h = Tensor::FromData({12, 3}, rows);
  const Tensor y = b.Forward({h, h});

  // Every frame sees the same input, so h1, h2 and the pooled mean are the
  // per-frame values and the std part is zero.
  auto conv = [&](const std::vector<double>& in, const char* name, std::size_t cin) {
    const auto w = Values(params, std::string("backend.") + name + ".weight");
    const auto bias = Values(params, std::string("backend.") + name + ".bias");
    std::vector<double> out(4);
    for (std::size_t o = 0; o < 4; ++o) {
      double s = bias[o];
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t k = 0; k < 3; ++k) s += w[(o * cin + i) * 3 + k] * in[i];
      out[o] = std::max(0.0, s);
    }
    return out;
  };
  const auto h1 = conv({x[0], x[1], x[2]}, "tdnn.0", 3);
  const auto h2 = conv(h1, "tdnn.1", 4);
  const auto w = Values(params, "backend.linear.weight");
  const auto bias = Values(params, "backend.linear.bias");
  for (std::size_t e = 0; e < 2; ++e) {
    double expect = bias[e];
    for (std::size_t c = 0; c < 4; ++c) expect += (h1[c] + h2[c]) * w[c * 2 + e];
    for (std::size_t c = 0; c < 4; ++c) expect += 1e-4 * w[(4 + c) * 2 + e];  // sqrt(floor)
    EXPECT_NEAR(y.values()[e], expect, 1e-4);
  }
}

TEST(TdnnTest, FramePermutationChangesOutput) {
  std::mt19937_64 rng(10);
  ParameterSet params;
  Backend b(SmallTdnn(), params, rng);
  const LayerStack s = RandomStack(2, 15, 3, rng);
  std::vector<std::size_t> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Tensor y = b.Forward(s), yp = b.Forward(PermuteFrames(s, perm));
  double diff = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) diff += std::abs(y.values()[i] - yp.values()[i]);
  EXPECT_GT(diff, 1e-4);
}

TEST(TdnnTest, TooFewFramesFails) {
  std::mt19937_64 rng(11);
  ParameterSet params;
  Backend b(SmallTdnn(), params, rng);
  EXPECT_EQ(SmallTdnn().ReceptiveField(), 7);
  EXPECT_THROW(b.Forward(RandomStack(2, 6, 3, rng)), std::invalid_argument);
  EXPECT_NO_THROW(b.Forward(RandomStack(2, 7, 3, rng)));
}

TEST(BackendConfigTest, MetaRoundTripAndValidation) {
  BackendConfig c = SmallTdnn();
  CheckpointFile f;
  c.WriteMeta(f);
  EXPECT_EQ(f.Meta(kBackendKindKey), "tdnn");
  const BackendConfig back = BackendConfig::FromMeta(f);
  EXPECT_EQ(back.kind, BackendKind::kTdnn);
  EXPECT_EQ(back.tdnn_dilations, c.tdnn_dilations);
  EXPECT_EQ(back.tdnn_channels, 4);
  BackendConfig bad = SmallMhfa();
  bad.value_dim = 5;
  EXPECT_THROW(bad.Validate(), std::invalid_argument);
  EXPECT_THROW(ParseBackendKind("ecapa"), std::invalid_argument);
}

TEST(BackendConfigTest, StackSizeMismatchFails) {
  std::mt19937_64 rng(12);
  ParameterSet params;
  Backend b(SmallMhfa(), params, rng);
  EXPECT_THROW(b.Forward(RandomStack(2, 4, 6, rng)), ShapeError);
  EXPECT_THROW(b.Forward(RandomStack(3, 4, 5, rng)), ShapeError);
}

TEST(AamTest, ZeroMarginIsScaledCrossEntropy) {
  std::mt19937_64 rng(13);
  AamConfig cfg;
  cfg.margin = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor64 y = RandomTensor64({4, 8}, rng, 1.0, false);
    const Tensor64 w = RandomTensor64({6, 8}, rng, 1.0, false);
    std::vector<int> labels = {0, 5, 2, 2};
    EXPECT_NEAR(AamSoftmaxLoss(y, labels, w, cfg).item(),
                testing::ScaledCrossEntropyOracle(y, w, labels, 30.0), 1e-6);
  }
}

TEST(AamTest, SingleClassLossIsZero) {
  std::mt19937_64 rng(14);
  AamConfig cfg;
  cfg.n_classes = 1;
  const std::vector<int> labels = {0, 0};
  EXPECT_NEAR(AamSoftmaxLoss(RandomTensor({2, 5}, rng), labels, RandomTensor({1, 5}, rng), cfg)
                  .item(),
              0.0, 1e-7);
}

TEST(AamTest, MarginNeverLowersLoss) {
  std::mt19937_64 rng(15);
  AamConfig with, without;
  without.margin = 0.0;
  int checked = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const Tensor64 y = RandomTensor64({1, 6}, rng, 1.0, false);
    const Tensor64 w = RandomTensor64({5, 6}, rng, 1.0, false);
    const std::vector<int> label = {draw % 5};
    const double cos_true = CosineLogits(y, w).at(0, static_cast<std::size_t>(label[0]));
    if (std::acos(cos_true) + with.margin > M_PI) continue;
    ++checked;
    EXPECT_GE(AamSoftmaxLoss(y, label, w, with).item(),
              AamSoftmaxLoss(y, label, w, without).item());
  }
  EXPECT_GT(checked, 900);
}

TEST(AamTest, InvalidInputsFail) {
  std::mt19937_64 rng(16);
  const Tensor y = RandomTensor({2, 4}, rng), w = RandomTensor({3, 4}, rng);
  AamConfig cfg;
  const std::vector<int> bad = {0, 3}, neg = {-1, 0};
  EXPECT_THROW(AamSoftmaxLoss(y, bad, w, cfg), std::out_of_range);
  EXPECT_THROW(AamSoftmaxLoss(y, neg, w, cfg), std::out_of_range);
  cfg.margin = -0.1;
  const std::vector<int> ok = {0, 1};
  EXPECT_THROW(AamSoftmaxLoss(y, ok, w, cfg), std::invalid_argument);
}

class ModelGradientTest : public ::testing::TestWithParam<std::tuple<std::size_t, int>> {};

TEST_P(ModelGradientTest, MatchesFiniteDifferences) {
  const auto [index, variant] = GetParam();
  const auto cases = testing::ModelGradientCases();
  std::mt19937_64 rng(100 + index * 10 + static_cast<std::size_t>(variant));
  const auto r = cases[index].run(rng, variant);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.relative_error, 1e-3) << cases[index].name << " variant " << variant;
}

INSTANTIATE_TEST_SUITE_P(
    Cases, ModelGradientTest,
    ::testing::Combine(::testing::Range<std::size_t>(0, 4), ::testing::Range(0, 3)),
    [](const auto& info) {
      return testing::ModelGradientCases()[std::get<0>(info.param)].name + "_" +
             std::to_string(std::get<1>(info.param));
    });

}  // namespace
}  // namespace selfsv
