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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "selfsv/checkpoint.h"
#include "selfsv/config.h"
#include "selfsv/io.h"
#include "selfsv/parallel.h"

namespace selfsv {

namespace {

struct OperatingPoint {
  double p_miss;
  double p_fa;
};

// Operating points for thresholds -inf, each midpoint between adjacent
// distinct scores, +inf (in increasing threshold order).
std::vector<OperatingPoint> Sweep(const ScoreSet& set) {
  std::size_t n_target = 0;
  for (bool l : set.labels) n_target += l;
  const std::size_t n_non = set.labels.size() - n_target;
  std::vector<std::size_t> order(set.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });
  std::vector<OperatingPoint> points;
  points.reserve(order.size() + 1);
  std::size_t targets_below = 0, non_below = 0;
  points.push_back({0.0, 1.0});
  for (std::size_t i = 0; i < order.size();) {
    const double s = set.scores[order[i]];
    for (; i < order.size() && set.scores[order[i]] == s; ++i) {
      (set.labels[order[i]] ? targets_below : non_below)++;
    }
    points.push_back({static_cast<double>(targets_below) / static_cast<double>(n_target),
                      static_cast<double>(n_non - non_below) / static_cast<double>(n_non)});
  }
  return points;
}

}  // namespace

void ScoreSet::Validate(bool require_both_classes) const {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("score set: " + std::to_string(scores.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("score set: non-finite score");
  }
  if (require_both_classes) {
    const bool any_target = std::find(labels.begin(), labels.end(), true) != labels.end();
    const bool any_non = std::find(labels.begin(), labels.end(), false) != labels.end();
    if (!any_target || !any_non) {
      throw std::invalid_argument("score set: need both target and nontarget trials");
    }
  }
}

void DcfConfig::Validate() const {
  if (!(p_target > 0.0 && p_target < 1.0)) {
    throw std::invalid_argument("dcf: p_target must be in (0, 1)");
  }
  if (!(c_miss > 0.0 && c_fa > 0.0)) throw std::invalid_argument("dcf: costs must be > 0");
}

double ComputeEer(const ScoreSet& set) {
  set.Validate();
  const auto points = Sweep(set);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double d0 = points[i].p_miss - points[i].p_fa;
    const double d1 = points[i + 1].p_miss - points[i + 1].p_fa;
    if (d0 == 0.0) return points[i].p_miss;
    if (d0 < 0.0 && d1 > 0.0) {
      const double alpha = d0 / (d0 - d1);
      return points[i].p_miss + alpha * (points[i + 1].p_miss - points[i].p_miss);
    }
  }
  return points.back().p_miss;  // d reaches zero exactly at +inf
}

double ComputeMinDcf(const ScoreSet& set, const DcfConfig& cfg) {
  set.Validate();
  cfg.Validate();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : Sweep(set)) {
    best = std::min(best, cfg.c_miss * p.p_miss * cfg.p_target +
                              cfg.c_fa * p.p_fa * (1.0 - cfg.p_target));
  }
  return best / std::min(cfg.c_miss * cfg.p_target, cfg.c_fa * (1.0 - cfg.p_target));
}

MetricsReport ComputeMetrics(const ScoreSet& set) {
  MetricsReport r;
  r.eer = ComputeEer(set);
  r.dcf1 = ComputeMinDcf(set, kDcf1);
  r.dcf5 = ComputeMinDcf(set, kDcf5);
  r.n_trials = set.scores.size();
  return r;
}

double CosineScore(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_score: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw std::invalid_argument("cosine_score: zero vector");
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

namespace {

SpeakerModel LoadScoringModel(const std::string& path) {
  const CheckpointFile file = CheckpointFile::Load(path);
  const std::string stage = file.MetaOr(kStageKey, "");
  if (stage != kStageFinetuned && stage != kStageLmt) {
    throw std::invalid_argument(path + ": embeddings need a finetuned or lmt checkpoint, found stage '" +
                                stage + "'");
  }
  return SpeakerModel::Load(file);
}

}  // namespace

EmbeddingExtractor::EmbeddingExtractor(const std::string& checkpoint_path)
    : model_(LoadScoringModel(checkpoint_path)) {}

std::vector<float> EmbeddingExtractor::Extract(const Waveform& wave) const {
  NoGradGuard no_grad;
  const Tensor y = model_.Embed(wave.samples, true);
  return y.values();
}

std::vector<float> EmbeddingExtractor::ExtractFile(const std::string& wav_path) const {
  return Extract(LoadWav(wav_path));
}

std::size_t EmbeddingExtractor::embedding_dim() const {
  return static_cast<std::size_t>(model_.backend().config().embedding_dim);
}

ScoreSet ScoreTrials(const EmbeddingExtractor& extractor, const TrialList& trials,
                     const std::string& base_dir, std::size_t* forward_count) {
  std::map<std::string, std::size_t> slot;
  std::vector<std::string> unique;
  for (const auto& t : trials) {
    for (const auto* p : {&t.path_a, &t.path_b}) {
      if (slot.emplace(*p, unique.size()).second) unique.push_back(*p);
    }
  }
  std::vector<std::vector<float>> embeddings(unique.size());
  std::atomic<std::size_t> forwards{0};
  ParallelFor(unique.size(), [&](std::size_t i) {
    const std::filesystem::path p(unique[i]);
    const std::string full =
        p.is_absolute() || base_dir.empty() ? p.string() : (std::filesystem::path(base_dir) / p).string();
    embeddings[i] = extractor.ExtractFile(full);
    ++forwards;
  });
  ScoreSet set;
  set.scores.reserve(trials.size());
  set.labels.reserve(trials.size());
  for (const auto& t : trials) {
    set.scores.push_back(CosineScore(embeddings[slot[t.path_a]], embeddings[slot[t.path_b]]));
    set.labels.push_back(t.target);
  }
  if (forward_count) *forward_count = forwards.load();
  return set;
}

void WriteScoresCsv(const ScoreSet& set, const std::string& path) {
  set.Validate(false);
  std::string out = "trial_index,label,score\n";
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    out += std::to_string(i) + "," + (set.labels[i] ? "1" : "0") + "," +
           FormatDouble(set.scores[i]) + "\n";
  }
  WriteFileBytes(path, out);
}

std::string ReportCsv(const MetricsReport& report) {
  return "metric,value\nEER," + FormatDouble(report.eer) + "\nDCF1," +
         FormatDouble(report.dcf1) + "\nDCF5," + FormatDouble(report.dcf5) + "\n";
}

void WriteReportCsv(const MetricsReport& report, const std::string& path) {
  WriteFileBytes(path, ReportCsv(report));
}

MetricsReport ReadReportCsv(const std::string& path) {
  MetricsReport r;
  bool eer = false, dcf1 = false, dcf5 = false;
  for (const auto& line : SplitString(ReadFileBytes(path), '\n')) {
    const auto fields = SplitString(line, ',');
    if (fields.size() != 2 || fields[0] == "metric") continue;
    double value = 0.0;
    try {
      value = std::stod(fields[1]);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": bad value '" + fields[1] + "'");
    }
    if (fields[0] == "EER") {
      r.eer = value;
      eer = true;
    } else if (fields[0] == "DCF1") {
      r.dcf1 = value;
      dcf1 = true;
    } else if (fields[0] == "DCF5") {
      r.dcf5 = value;
      dcf5 = true;
    }
  }
  if (!eer || !dcf1 || !dcf5) throw std::runtime_error(path + ": missing metric rows");
  return r;
}

std::string FormatReportTable(const MetricsReport& report) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "EER(%%) DCF1 DCF5\n%.2f %.4f %.4f\n", 100.0 * report.eer,
                report.dcf1, report.dcf5);
  return buf;
}

KeyValueConfig RunInfoFromCheckpoint(const std::string& checkpoint_path) {
  const CheckpointFile file = CheckpointFile::Load(checkpoint_path);
  KeyValueConfig info;
  info.Set("stage", file.MetaOr(kStageKey, ""));
  info.Set("mode", file.MetaOr("run.finetune.mode", ""));
  info.Set("backend", file.MetaOr(kBackendKindKey, ""));
  info.Set("finetune_target", file.MetaOr(kDataKey, ""));
  info.Set("pretrain_source", file.MetaOr(kPretrainDataKey, "none"));
  info.Set("encoder_digest", file.MetaOr(kEncoderDigestKey, ""));
  info.Set("pretrained_encoder_digest", file.MetaOr(kPretrainedEncoderDigestKey, ""));
  return info;
}

std::vector<RunSummary> CollectRuns(const std::string& runs_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(runs_dir)) throw std::invalid_argument("not a directory: " + runs_dir);
  std::vector<RunSummary> runs;
  for (const auto& entry : fs::recursive_directory_iterator(runs_dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != kReportFileName) continue;
    const fs::path dir = entry.path().parent_path();
    RunSummary run;
    run.name = fs::relative(dir, runs_dir).generic_string();
    run.report = ReadReportCsv(entry.path().string());
    run.pretrain_source = "none";
    run.encoder_unchanged = "n/a";
    const fs::path info_path = dir / kRunInfoFileName;
    if (fs::exists(info_path)) {
      const KeyValueConfig info = KeyValueConfig::Load(info_path.string());
      info.Read("pretrain_source", run.pretrain_source);
      info.Read("finetune_target", run.finetune_target);
      info.Read("mode", run.mode);
      std::string before, after;
      info.Read("pretrained_encoder_digest", before);
      info.Read("encoder_digest", after);
      if (!before.empty() && !after.empty()) run.encoder_unchanged = before == after ? "yes" : "no";
    }
    runs.push_back(std::move(run));
  }
  std::sort(runs.begin(), runs.end(),
            [](const RunSummary& a, const RunSummary& b) { return a.name < b.name; });
  return runs;
}

std::string ComparisonCsv(const std::vector<RunSummary>& runs, const std::string& baseline) {
  const auto base = std::find_if(runs.begin(), runs.end(),
                                 [&](const RunSummary& r) { return r.name == baseline; });
  if (base == runs.end()) throw std::invalid_argument("baseline run '" + baseline + "' not found");
  const double base_eer = base->report.eer;
  std::string out =
      "run,pretrain_source,finetune_target,mode,eer_percent,dcf1,dcf5,relative_improvement,"
      "encoder_unchanged\n";
  for (const auto& r : runs) {
    const std::string improvement =
        base_eer > 0.0 ? FormatDouble((base_eer - r.report.eer) / base_eer) : "nan";
    out += r.name + "," + r.pretrain_source + "," + r.finetune_target + "," + r.mode + "," +
           FormatDouble(100.0 * r.report.eer) + "," + FormatDouble(r.report.dcf1) + "," +
           FormatDouble(r.report.dcf5) + "," + improvement + "," + r.encoder_unchanged + "\n";
  }
  return out;
}

}  // namespace selfsv
