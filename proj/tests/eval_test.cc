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

#include "selfsv/eval.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "metric_oracles.h"
#include "selfsv/checkpoint.h"
#include "selfsv/io.h"

namespace selfsv {
namespace {

namespace fs = std::filesystem;

ScoreSet MakeSet(std::vector<double> targets, std::vector<double> nontargets) {
  ScoreSet s;
  for (double t : targets) {
    s.scores.push_back(t);
    s.labels.push_back(true);
  }
  for (double n : nontargets) {
    s.scores.push_back(n);
    s.labels.push_back(false);
  }
  return s;
}

TEST(EerTest, PerfectSeparationIsZero) {
  EXPECT_EQ(ComputeEer(MakeSet({0.9, 0.8}, {0.1, 0.2})), 0.0);
}

TEST(EerTest, InterleavedExample) {
  EXPECT_NEAR(ComputeEer(MakeSet({0.8, 0.2}, {0.7, 0.1})), 0.5, 1e-12);
}

TEST(EerTest, FullyReversedIsOne) {
  EXPECT_NEAR(ComputeEer(MakeSet({0.1, 0.2}, {0.8, 0.9})), 1.0, 1e-12);
}

TEST(EerTest, AllScoresTiedIsHalf) {
  // Only -inf and +inf remain: (0, 1) and (1, 0) cross at 0.5.
  EXPECT_NEAR(ComputeEer(MakeSet({0.3, 0.3, 0.3}, {0.3})), 0.5, 1e-12);
}

TEST(EerTest, InterpolatesBetweenOperatingPoints) {
  // Thresholds -inf, .15, .35, .7, +inf give (P_miss, P_fa) = (0, 1)
  // (0, 2/3) (0, 1/3) (1, 1/3) (1, 0). The sign change is between the third
  // and fourth points: alpha = 1/3, EER = 1/3.
  EXPECT_NEAR(ComputeEer(MakeSet({0.5}, {0.1, 0.2, 0.9})), 1.0 / 3.0, 1e-12);
}

TEST(EerTest, InvertedLabelsWithNegatedScores) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    ScoreSet s = testing::RandomScoreSet(rng, 200);
    ScoreSet flipped = s;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      flipped.scores[i] = -s.scores[i];
      flipped.labels[i] = !s.labels[i];
    }
    EXPECT_NEAR(ComputeEer(s), ComputeEer(flipped), 1e-12);
  }
}

TEST(EerTest, SingleClassThrows) {
  EXPECT_THROW(ComputeEer(MakeSet({0.1, 0.2}, {})), std::invalid_argument);
  EXPECT_THROW(ComputeEer(MakeSet({}, {0.1})), std::invalid_argument);
  EXPECT_THROW(ComputeMinDcf(MakeSet({0.1}, {}), kDcf1), std::invalid_argument);
}

TEST(EerTest, MismatchedLengthsThrow) {
  ScoreSet s = MakeSet({0.1}, {0.2});
  s.labels.push_back(true);
  EXPECT_THROW(ComputeEer(s), std::invalid_argument);
}

TEST(MinDcfTest, PerfectSeparationIsZero) {
  EXPECT_EQ(ComputeMinDcf(MakeSet({0.9, 0.8}, {0.1, 0.2}), kDcf1), 0.0);
  EXPECT_EQ(ComputeMinDcf(MakeSet({0.9, 0.8}, {0.1, 0.2}), kDcf5), 0.0);
}

TEST(MinDcfTest, InterleavedExampleAtFivePercent) {
  // Hand sweep: thresholds give (P_miss, P_fa) = (0,1) (0,.5) (.5,.5) (.5,0)
  // (1,0). Costs .95, .475, .5, .025, .05 -> min .025, normalized by .05.
  const ScoreSet s = MakeSet({0.8, 0.2}, {0.7, 0.1});
  EXPECT_NEAR(ComputeMinDcf(s, kDcf5), 0.5, 1e-12);
  EXPECT_NEAR(ComputeMinDcf(s, kDcf5), testing::BruteForceMinDcf(s, kDcf5), 1e-12);
}

TEST(MinDcfTest, BoundedByOne) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const ScoreSet s = testing::RandomScoreSet(rng, 300);
    for (const DcfConfig& cfg : {kDcf1, kDcf5, DcfConfig{0.3, 2.0, 0.5}}) {
      const double v = ComputeMinDcf(s, cfg);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
  }
}

TEST(MinDcfTest, ZeroExactlyWhenSeparable) {
  EXPECT_GT(ComputeMinDcf(MakeSet({0.5, 0.9}, {0.5, 0.1}), kDcf1), 0.0);
  EXPECT_GT(ComputeMinDcf(MakeSet({0.4, 0.9}, {0.5}), kDcf5), 0.0);
  EXPECT_EQ(ComputeMinDcf(MakeSet({0.5, 0.9}, {0.49}), kDcf5), 0.0);
}

TEST(MinDcfTest, InvalidConfigThrows) {
  const ScoreSet s = MakeSet({0.8}, {0.1});
  EXPECT_THROW(ComputeMinDcf(s, DcfConfig{0.0}), std::invalid_argument);
  EXPECT_THROW(ComputeMinDcf(s, DcfConfig{1.0}), std::invalid_argument);
  EXPECT_THROW(ComputeMinDcf(s, DcfConfig{0.5, 0.0, 1.0}), std::invalid_argument);
}

TEST(MetricOracleTest, RandomSetsMatchBruteForce) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const ScoreSet s = testing::RandomScoreSet(rng);
    EXPECT_NEAR(ComputeEer(s), testing::BruteForceEer(s), 1e-9) << "set " << rep;
    EXPECT_NEAR(ComputeMinDcf(s, kDcf1), testing::BruteForceMinDcf(s, kDcf1), 1e-9);
    EXPECT_NEAR(ComputeMinDcf(s, kDcf5), testing::BruteForceMinDcf(s, kDcf5), 1e-9);
  }
}

TEST(MetricOracleTest, MonotoneTransformInvariance) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 100; ++rep) {
    const ScoreSet s = testing::RandomScoreSet(rng);
    const auto f = testing::RandomMonotoneMap(rng);
    ScoreSet mapped = s;
    for (double& v : mapped.scores) v = f(v);
    EXPECT_NEAR(ComputeEer(mapped), ComputeEer(s), 1e-12);
    EXPECT_NEAR(ComputeMinDcf(mapped, kDcf1), ComputeMinDcf(s, kDcf1), 1e-12);
    EXPECT_NEAR(ComputeMinDcf(mapped, kDcf5), ComputeMinDcf(s, kDcf5), 1e-12);
  }
}

TEST(MetricsReportTest, EerWithinUnitInterval) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 30; ++rep) {
    const MetricsReport r = ComputeMetrics(testing::RandomScoreSet(rng, 200));
    EXPECT_GE(r.eer, 0.0);
    EXPECT_LE(r.eer, 1.0);
  }
}

TEST(CosineScoreTest, BasicCases) {
  const std::vector<float> v = {1.0f, -2.0f, 3.0f};
  const std::vector<float> neg = {-1.0f, 2.0f, -3.0f};
  const std::vector<float> a = {1.0f, 0.0f}, b = {0.0f, 4.0f};
  EXPECT_NEAR(CosineScore(v, v), 1.0, 1e-12);
  EXPECT_NEAR(CosineScore(v, neg), -1.0, 1e-12);
  EXPECT_NEAR(CosineScore(a, b), 0.0, 1e-12);
}

TEST(CosineScoreTest, ZeroVectorAndLengthMismatchThrow) {
  const std::vector<float> z = {0.0f, 0.0f}, v = {1.0f, 1.0f}, w = {1.0f};
  EXPECT_THROW(CosineScore(z, v), std::invalid_argument);
  EXPECT_THROW(CosineScore(v, w), std::invalid_argument);
}

TEST(ReportCsvTest, ThreeRowsAndRoundTrip) {
  MetricsReport r{0.0625, 0.3, 0.125, 40};
  const std::string text = ReportCsv(r);
  EXPECT_EQ(text, "metric,value\nEER,0.0625\nDCF1,0.3\nDCF5,0.125\n");
  const std::string path = (fs::path(::testing::TempDir()) / "report_rt.csv").string();
  WriteReportCsv(r, path);
  const MetricsReport back = ReadReportCsv(path);
  EXPECT_EQ(back.eer, r.eer);
  EXPECT_EQ(back.dcf1, r.dcf1);
  EXPECT_EQ(back.dcf5, r.dcf5);
}

TEST(ReportCsvTest, TablePrintsPercentWithTwoDecimals) {
  EXPECT_EQ(FormatReportTable({0.0104, 0.0631, 0.05, 10}), "EER(%) DCF1 DCF5\n1.04 0.0631 0.0500\n");
}

TEST(ReportCsvTest, MissingRowThrows) {
  const std::string path = (fs::path(::testing::TempDir()) / "report_bad.csv").string();
  WriteFileBytes(path, "metric,value\nEER,0.1\n");
  EXPECT_THROW(ReadReportCsv(path), std::runtime_error);
}

TEST(ScoresCsvTest, Layout) {
  const std::string path = (fs::path(::testing::TempDir()) / "scores.csv").string();
  WriteScoresCsv(MakeSet({0.5}, {-0.25}), path);
  EXPECT_EQ(ReadFileBytes(path), "trial_index,label,score\n0,1,0.5\n1,0,-0.25\n");
}

TEST(ComparisonTest, TwoRunsWithRelativeImprovement) {
  const fs::path root = fs::path(::testing::TempDir()) / "report_runs";
  fs::remove_all(root);
  fs::create_directories(root / "random");
  fs::create_directories(root / "self" / "eval");
  WriteReportCsv({0.25, 0.5, 0.4, 10}, (root / "random" / kReportFileName).string());
  WriteReportCsv({0.0625, 0.25, 0.2, 10}, (root / "self" / "eval" / kReportFileName).string());
  KeyValueConfig info;
  info.Set("pretrain_source", "corpusA");
  info.Set("finetune_target", "corpusB");
  info.Set("mode", "frozen");
  info.Set("pretrained_encoder_digest", "abc");
  info.Set("encoder_digest", "abc");
  info.Save((root / "self" / "eval" / kRunInfoFileName).string());

  const auto runs = CollectRuns(root.string());
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_EQ(runs[0].name, "random");
  EXPECT_EQ(runs[1].name, "self/eval");
  EXPECT_EQ(ComparisonCsv(runs, "random"),
            "run,pretrain_source,finetune_target,mode,eer_percent,dcf1,dcf5,"
            "relative_improvement,encoder_unchanged\n"
            "random,none,,,25,0.5,0.4,0,n/a\n"
            "self/eval,corpusA,corpusB,frozen,6.25,0.25,0.2,0.75,yes\n");
  EXPECT_THROW(ComparisonCsv(runs, "missing"), std::invalid_argument);
}

TEST(ComparisonTest, EmptyDirectoryHasNoRuns) {
  const fs::path root = fs::path(::testing::TempDir()) / "report_empty";
  fs::remove_all(root);
  fs::create_directories(root);
  EXPECT_TRUE(CollectRuns(root.string()).empty());
  EXPECT_THROW(CollectRuns((root / "nope").string()), std::invalid_argument);
}

// A small untrained speaker model is enough for the plumbing checks.
class ExtractorTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fs::path(::testing::TempDir()) / "extractor_test");
    fs::remove_all(*dir_);
    fs::create_directories(*dir_ / "wav");
    EncoderConfig enc;
    enc.cnn_strides = {5, 4, 4, 4};
    enc.cnn_channels = 16;
    enc.dim = 16;
    enc.layers = 2;
    enc.heads = 2;
    BackendConfig be;
    be.num_layers = enc.layers + 1;
    be.input_dim = enc.dim;
    be.embedding_dim = 12;
    be.heads = 2;
    be.key_dim = 8;
    be.value_dim = 8;
    SpeakerModel model(enc, be, {"a", "b"}, 9);
    CheckpointFile file;
    file.SetMeta(kStageKey, kStageFinetuned);
    model.Store(file);
    file.Save((*dir_ / "model.ckpt").string());
    CheckpointFile wrong;
    wrong.SetMeta(kStageKey, kStagePretrainIter1);
    model.Store(wrong);
    wrong.Save((*dir_ / "wrong_stage.ckpt").string());

    std::mt19937_64 rng(2);
    std::normal_distribution<float> n(0.0f, 0.3f);
    for (int i = 0; i < 4; ++i) {
      Waveform w;
      w.samples.resize(8000 + 1000 * i);
      for (float& s : w.samples) s = n(rng);
      SaveWav((*dir_ / "wav" / ("u" + std::to_string(i) + ".wav")).string(), w);
    }
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string Path(const std::string& name) { return (*dir_ / name).string(); }

  static fs::path* dir_;
};

fs::path* ExtractorTest::dir_ = nullptr;

TEST_F(ExtractorTest, SameWavGivesIdenticalVector) {
  EmbeddingExtractor ex(Path("model.ckpt"));
  const auto a = ex.ExtractFile(Path("wav/u0.wav"));
  const auto b = ex.ExtractFile(Path("wav/u0.wav"));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(ex.embedding_dim(), 12u);
}

TEST_F(ExtractorTest, WrongStageThrows) {
  EXPECT_THROW(EmbeddingExtractor(Path("wrong_stage.ckpt")), std::invalid_argument);
}

TEST_F(ExtractorTest, ScoresAlignedAndPathsCached) {
  EmbeddingExtractor ex(Path("model.ckpt"));
  TrialList trials = {{true, "wav/u0.wav", "wav/u1.wav"},
                      {false, "wav/u0.wav", "wav/u2.wav"},
                      {true, "wav/u2.wav", "wav/u3.wav"},
                      {false, "wav/u1.wav", "wav/u3.wav"},
                      {true, "wav/u3.wav", "wav/u0.wav"}};
  std::size_t forwards = 0;
  const ScoreSet s = ScoreTrials(ex, trials, dir_->string(), &forwards);
  ASSERT_EQ(s.scores.size(), trials.size());
  EXPECT_EQ(forwards, 4u);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    EXPECT_EQ(s.labels[i], trials[i].target);
    const double direct = CosineScore(ex.ExtractFile(Path(trials[i].path_a)),
                                      ex.ExtractFile(Path(trials[i].path_b)));
    EXPECT_EQ(s.scores[i], direct);
  }

  // Reversing the trial order reverses the scores.
  TrialList reversed(trials.rbegin(), trials.rend());
  const ScoreSet r = ScoreTrials(ex, reversed, dir_->string());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    EXPECT_EQ(r.scores[i], s.scores[trials.size() - 1 - i]);
  }
}

TEST_F(ExtractorTest, MissingFileNamesPath) {
  EmbeddingExtractor ex(Path("model.ckpt"));
  TrialList trials = {{true, "wav/u0.wav", "wav/absent.wav"}};
  try {
    ScoreTrials(ex, trials, dir_->string());
    FAIL() << "expected an exception";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("absent.wav"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace selfsv
