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

#ifndef SELFSV_EVAL_H_
#define SELFSV_EVAL_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "selfsv/config.h"
#include "selfsv/features.h"
#include "selfsv/synthcorpus.h"
#include "selfsv/training.h"

namespace selfsv {

struct ScoreSet {
  std::vector<double> scores;
  std::vector<bool> labels;  // true = target trial

  /// Equal lengths, finite scores and, for metrics, both classes present.
  void Validate(bool require_both_classes = true) const;
};

struct DcfConfig {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;

  void Validate() const;
};

inline constexpr DcfConfig kDcf1{0.01, 1.0, 1.0};
inline constexpr DcfConfig kDcf5{0.05, 1.0, 1.0};

/// Equal error rate as a fraction. Thresholds run over -inf, the midpoints
/// of adjacent distinct scores and +inf; P_miss counts targets below the
/// threshold, P_fa nontargets at or above it. The rate is interpolated
/// linearly between the two operating points where P_miss - P_fa changes
/// sign.
double ComputeEer(const ScoreSet& set);

/// Minimum of c_miss P_miss p + c_fa P_fa (1 - p) over the same thresholds,
/// divided by min(c_miss p, c_fa (1 - p)).
double ComputeMinDcf(const ScoreSet& set, const DcfConfig& cfg);

struct MetricsReport {
  double eer = 0.0;
  double dcf1 = 0.0;
  double dcf5 = 0.0;
  std::size_t n_trials = 0;
};

MetricsReport ComputeMetrics(const ScoreSet& set);

/// dot(a, b) / (|a| |b|). Zero vectors are rejected.
double CosineScore(std::span<const float> a, std::span<const float> b);

/// Full-utterance embeddings from a `finetuned` or `lmt` checkpoint.
class EmbeddingExtractor {
 public:
  explicit EmbeddingExtractor(const std::string& checkpoint_path);

  std::vector<float> Extract(const Waveform& wave) const;
  std::vector<float> ExtractFile(const std::string& wav_path) const;
  std::size_t embedding_dim() const;
  const SpeakerModel& model() const { return model_; }

 private:
  SpeakerModel model_;
};

/// Scores every trial; each distinct path is embedded once. Relative trial
/// paths are resolved against `base_dir`. `forward_count` receives the
/// number of embeddings computed.
ScoreSet ScoreTrials(const EmbeddingExtractor& extractor, const TrialList& trials,
                     const std::string& base_dir, std::size_t* forward_count = nullptr);

/// `trial_index,label,score` rows.
void WriteScoresCsv(const ScoreSet& set, const std::string& path);
/// `metric,value` rows for EER, DCF1 and DCF5.
std::string ReportCsv(const MetricsReport& report);
void WriteReportCsv(const MetricsReport& report, const std::string& path);
MetricsReport ReadReportCsv(const std::string& path);
/// Two lines: `EER(%) DCF1 DCF5` and the values, EER in percent with two
/// decimals.
std::string FormatReportTable(const MetricsReport& report);

// ---- Run aggregation ------------------------------------------------------

inline constexpr char kScoresFileName[] = "scores.csv";
inline constexpr char kReportFileName[] = "report.csv";
inline constexpr char kRunInfoFileName[] = "run_info.txt";

/// Provenance of an evaluated checkpoint: stage, fine-tune mode, the corpora
/// used for pretraining and fine-tuning and the encoder digests.
KeyValueConfig RunInfoFromCheckpoint(const std::string& checkpoint_path);

struct RunSummary {
  std::string name;  // directory relative to the runs root
  std::string pretrain_source;  // "none" without pretraining
  std::string finetune_target;
  std::string mode;
  std::string encoder_unchanged;  // "yes", "no" or "n/a"
  MetricsReport report;
};

/// Every directory below `runs_dir` holding a report.csv, sorted by name.
/// A run_info.txt next to the report supplies the provenance columns.
std::vector<RunSummary> CollectRuns(const std::string& runs_dir);

/// `run,pretrain_source,finetune_target,mode,eer_percent,dcf1,dcf5,
/// relative_improvement,encoder_unchanged`, one row per run. The relative
/// improvement is (baseline EER - run EER) / baseline EER. Throws
/// std::invalid_argument when no run is named `baseline`.
std::string ComparisonCsv(const std::vector<RunSummary>& runs, const std::string& baseline);

}  // namespace selfsv

#endif  // SELFSV_EVAL_H_
