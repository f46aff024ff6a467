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

// selfsv: command-line entry point for corpus synthesis, clustering,
// pretraining, fine-tuning, large-margin tuning, evaluation and reporting.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Settings are
// resolved as built-in defaults < --config file < command-line flags.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "selfsv/config.h"
#include "selfsv/eval.h"
#include "selfsv/io.h"
#include "selfsv/synthcorpus.h"
#include "selfsv/targets.h"
#include "selfsv/training.h"

namespace fs = std::filesystem;

namespace selfsv {
namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr char kTrialsFileName[] = "trials.txt";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool Given(const CLI::Option* opt) { return opt->count() > 0; }

// Options every subcommand accepts.
struct CommonOptions {
  std::uint64_t seed = 1;
  std::string config;
  std::string out;
  CLI::Option* seed_opt = nullptr;
};

void AddCommon(CLI::App* cmd, CommonOptions& common, bool out_required = true) {
  common.seed_opt = cmd->add_option("--seed", common.seed, "Random seed");
  cmd->add_option("--config", common.config, "key=value settings file")
      ->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", common.out, "Output directory");
  if (out_required) out->required();
}

KeyValueConfig LoadConfig(const CommonOptions& common) {
  if (common.config.empty()) return {};
  return KeyValueConfig::Load(common.config);
}

CorpusManifest LoadData(const std::string& data) {
  const fs::path p(data);
  const fs::path manifest = fs::is_directory(p) ? p / kManifestFileName : p;
  if (!fs::exists(manifest)) throw UsageError("no manifest at " + manifest.string());
  return LoadManifest(manifest.string());
}

// Library validation failures while assembling a configuration are usage
// errors; everything thrown later is a runtime failure.
template <typename Fn>
void Validating(Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::string Join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// ---- synth ------------------------------------------------------------------

struct SynthOptions {
  CommonOptions common;
  int speakers = 20, utts = 20, eval_speakers = 0, eval_utts = 10, trials = 300;
  double seconds = 4.0;
  CLI::Option *speakers_opt, *utts_opt, *eval_speakers_opt, *eval_utts_opt, *trials_opt,
      *seconds_opt;
};

CLI::App* SetupSynth(CLI::App& app, SynthOptions& o, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("synth", "Generate a synthetic corpus and trial list");
  AddCommon(cmd, o.common);
  o.speakers_opt = cmd->add_option("--speakers", o.speakers, "Training speakers")
                       ->check(CLI::PositiveNumber);
  o.utts_opt = cmd->add_option("--utts", o.utts, "Utterances per training speaker")
                   ->check(CLI::PositiveNumber);
  o.eval_speakers_opt = cmd->add_option("--eval-speakers", o.eval_speakers,
                                        "Held-out speakers (0: trials use all utterances)")
                            ->check(CLI::NonNegativeNumber);
  o.eval_utts_opt = cmd->add_option("--eval-utts", o.eval_utts, "Utterances per held-out speaker")
                        ->check(CLI::PositiveNumber);
  o.seconds_opt = cmd->add_option("--seconds", o.seconds, "Utterance duration")
                      ->check(CLI::PositiveNumber);
  o.trials_opt = cmd->add_option("--trials", o.trials,
                                 "Target and nontarget trials each (capped by availability)")
                     ->check(CLI::PositiveNumber);
  run = [&o] {
    const KeyValueConfig kv = LoadConfig(o.common);
    CorpusConfig cc;
    int trials = o.trials;
    Validating([&] {
      kv.Read("synth.speakers", cc.train_speakers);
      kv.Read("synth.utts", cc.train_utts);
      kv.Read("synth.eval_speakers", cc.eval_speakers);
      kv.Read("synth.eval_utts", cc.eval_utts);
      kv.Read("synth.seconds", cc.seconds);
      kv.Read("synth.trials", trials);
      kv.Read("seed", cc.seed);
    });
    if (!kv.Has("synth.eval_speakers")) cc.eval_speakers = 0;
    if (Given(o.speakers_opt)) cc.train_speakers = o.speakers;
    if (Given(o.utts_opt)) cc.train_utts = o.utts;
    if (Given(o.eval_speakers_opt)) cc.eval_speakers = o.eval_speakers;
    if (Given(o.eval_utts_opt)) cc.eval_utts = o.eval_utts;
    if (Given(o.seconds_opt)) cc.seconds = o.seconds;
    if (Given(o.trials_opt)) trials = o.trials;
    if (Given(o.common.seed_opt)) cc.seed = o.common.seed;
    if (cc.train_speakers < 1 || cc.train_utts < 1 || cc.eval_speakers < 0 ||
        cc.eval_utts < 1 || !(cc.seconds > 0.0) || trials < 1) {
      throw UsageError("synth: counts and durations must be positive");
    }

    const CorpusManifest m = GenerateCorpus(cc, o.common.out);
    const std::string split = cc.eval_speakers > 0 ? "eval" : "";
    const auto [n_target, n_non] = AvailableTrialPairs(m, split);
    const int t = static_cast<int>(std::min<std::size_t>(trials, n_target));
    const int n = static_cast<int>(std::min<std::size_t>(trials, n_non));
    if (t < 1 || n < 1) {
      throw std::runtime_error("synth: corpus too small for target and nontarget trials");
    }
    SaveTrials(WriteTrials(m, t, n, DeriveSeed(cc.seed, 0x7a1a), split),
               Join(o.common.out, kTrialsFileName));
    std::printf("wrote %zu utterances, %d target and %d nontarget trials to %s\n",
                m.entries.size(), t, n, o.common.out.c_str());
    std::printf("manifest sha256 %s\n",
                FileSha256(Join(o.common.out, kManifestFileName)).c_str());
  };
  return cmd;
}

// ---- cluster / pretrain -------------------------------------------------------

struct PretrainOptions {
  CommonOptions common;
  std::string data, ckpt_in;
  int iteration = 1, k = 0, steps = 0, batch_size = 0, layer = -1;
  double crop_seconds = 0.0;
  bool warm_start = false;
  CLI::Option *iteration_opt, *ckpt_opt, *k_opt, *layer_opt;
  // Set by `pretrain` only.
  CLI::Option* steps_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* crop_opt = nullptr;
};

void AddTargetOptions(CLI::App* cmd, PretrainOptions& o) {
  AddCommon(cmd, o.common);
  cmd->add_option("--data", o.data, "Corpus directory or manifest.tsv")->required();
  o.iteration_opt = cmd->add_option("--iteration", o.iteration, "Clustering iteration")
                        ->check(CLI::IsMember({1, 2}));
  o.ckpt_opt = cmd->add_option("--ckpt-in", o.ckpt_in, "Iteration-1 checkpoint (iteration 2)");
  o.k_opt = cmd->add_option("--k", o.k, "Number of clusters")->check(CLI::Range(2, 1 << 20));
  o.layer_opt = cmd->add_option("--layer", o.layer, "Layer clustered in iteration 2")
                    ->check(CLI::NonNegativeNumber);
}

PretrainConfig ResolvePretrain(const PretrainOptions& o) {
  PretrainConfig cfg;
  Validating([&] {
    cfg.Apply(LoadConfig(o.common));
    if (Given(o.iteration_opt)) cfg.iteration = o.iteration;
    if (Given(o.ckpt_opt)) cfg.init_checkpoint = o.ckpt_in;
    if (Given(o.k_opt)) cfg.k = o.k;
    if (Given(o.layer_opt)) cfg.cluster_layer = o.layer;
    if (o.steps_opt && Given(o.steps_opt)) cfg.steps = o.steps;
    if (o.batch_opt && Given(o.batch_opt)) cfg.batch_size = o.batch_size;
    if (o.crop_opt && Given(o.crop_opt)) cfg.crop_seconds = o.crop_seconds;
    if (o.warm_start) cfg.warm_start = true;
    if (Given(o.common.seed_opt)) cfg.seed = o.common.seed;
    if (cfg.iteration == 2 && cfg.init_checkpoint.empty()) {
      throw std::invalid_argument("iteration 2 requires --ckpt-in");
    }
    if (cfg.iteration == 2 && !fs::exists(cfg.init_checkpoint)) {
      throw std::invalid_argument("checkpoint not found: " + cfg.init_checkpoint);
    }
    cfg.Validate();
  });
  return cfg;
}

CLI::App* SetupCluster(CLI::App& app, PretrainOptions& o, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("cluster", "Build k-means targets (codebook and frame labels)");
  AddTargetOptions(cmd, o);
  run = [&o] {
    const PretrainConfig cfg = ResolvePretrain(o);
    const CorpusManifest m = LoadData(o.data);
    TargetsConfig tc;
    tc.k = cfg.Clusters();
    tc.seed = DeriveSeed(cfg.seed, 0xc1, static_cast<std::uint64_t>(cfg.iteration));
    tc.frame_cap = cfg.frame_cap;
    tc.max_iters = cfg.kmeans_iters;
    tc.split = cfg.split;
    const TargetSet targets =
        cfg.iteration == 1 ? BuildTargetsIter1(m, cfg.mfcc, cfg.encoder, tc)
                           : BuildTargetsIter2(m, cfg.init_checkpoint, cfg.cluster_layer, tc);
    fs::create_directories(o.common.out);
    targets.codebook.Save(Join(o.common.out, kCodebookFileName));
    SaveLabels(targets.sequences, tc.k, Join(o.common.out, kLabelsFileName));
    cfg.ToKeyValue().Save(Join(o.common.out, kRunConfigFileName));
    std::printf("k=%d features=%s utterances=%zu objective=%.6g\n", tc.k,
                targets.codebook.feature_kind.c_str(), targets.sequences.size(),
                targets.objective.empty() ? 0.0 : targets.objective.back());
  };
  return cmd;
}

CLI::App* SetupPretrain(CLI::App& app, PretrainOptions& o, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("pretrain", "Masked-prediction pretraining on cluster targets");
  AddTargetOptions(cmd, o);
  o.steps_opt = cmd->add_option("--steps", o.steps, "Training steps")->check(CLI::PositiveNumber);
  o.batch_opt = cmd->add_option("--batch-size", o.batch_size, "Crops per step")
                    ->check(CLI::PositiveNumber);
  o.crop_opt = cmd->add_option("--crop-seconds", o.crop_seconds, "Crop length")
                   ->check(CLI::PositiveNumber);
  cmd->add_flag("--continue", o.warm_start,
                "Iteration 2 starts from the iteration-1 encoder instead of from scratch");
  run = [&o] {
    const PretrainConfig cfg = ResolvePretrain(o);
    const CorpusManifest m = LoadData(o.data);
    const PretrainResult r = RunPretraining(m, cfg, o.common.out);
    std::printf("iteration %d: %zu steps, %d skipped, final loss %.4f (ln K = %.4f)\n",
                cfg.iteration, r.losses.size(), r.skipped_batches, r.final_loss,
                std::log(static_cast<double>(r.k)));
    std::printf("checkpoint %s\n", r.checkpoint_path.c_str());
  };
  return cmd;
}

// ---- finetune / lmt -----------------------------------------------------------

struct FinetuneOptions {
  CommonOptions common;
  std::string data, mode, backend, pretrained;
  int epochs = 0, batch_size = 0;
  double crop_seconds = 0.0;
  bool no_augment = false;
  CLI::Option *mode_opt, *backend_opt, *pretrained_opt, *epochs_opt, *batch_opt, *crop_opt;
};

void PrintEpochs(const FinetuneResult& r) {
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    std::printf("epoch %zu: loss %.4f accuracy %.4f lr %.3g\n", e, r.epoch_loss[e],
                r.epoch_accuracy[e], r.epoch_lr[e]);
  }
  std::printf("final train accuracy %.4f\n", r.epoch_accuracy.back());
  std::printf("checkpoint %s\n", r.checkpoint_path.c_str());
}

CLI::App* SetupFinetune(CLI::App& app, FinetuneOptions& o, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("finetune", "Train a speaker back-end with AAM-softmax");
  AddCommon(cmd, o.common);
  cmd->add_option("--data", o.data, "Corpus directory or manifest.tsv")->required();
  o.mode_opt = cmd->add_option("--mode", o.mode, "random-init, frozen or learnable")
                   ->check(CLI::IsMember({"random-init", "random_init", "frozen", "learnable"}));
  o.backend_opt =
      cmd->add_option("--backend", o.backend, "mhfa or tdnn")->check(CLI::IsMember({"mhfa", "tdnn"}));
  o.pretrained_opt = cmd->add_option("--pretrained", o.pretrained, "Pretrained checkpoint");
  o.epochs_opt = cmd->add_option("--epochs", o.epochs, "Epochs")->check(CLI::PositiveNumber);
  o.batch_opt = cmd->add_option("--batch-size", o.batch_size, "Utterances per batch")
                    ->check(CLI::PositiveNumber);
  o.crop_opt = cmd->add_option("--crop-seconds", o.crop_seconds, "Training crop length")
                   ->check(CLI::PositiveNumber);
  cmd->add_flag("--no-augment", o.no_augment, "Disable noise and reverberation");
  run = [&o] {
    FinetuneConfig cfg;
    Validating([&] {
      cfg.Apply(LoadConfig(o.common));
      if (Given(o.mode_opt)) cfg.mode = ParseFinetuneMode(o.mode);
      if (Given(o.backend_opt)) cfg.backend = ParseBackendKind(o.backend);
      if (Given(o.pretrained_opt)) cfg.pretrained = o.pretrained;
      if (Given(o.epochs_opt)) cfg.epochs = o.epochs;
      if (Given(o.batch_opt)) cfg.batch_size = o.batch_size;
      if (Given(o.crop_opt)) cfg.crop_seconds = o.crop_seconds;
      if (o.no_augment) cfg.augment = false;
      if (Given(o.common.seed_opt)) cfg.seed = o.common.seed;
      cfg.Validate();
      if (!cfg.pretrained.empty() && !fs::exists(cfg.pretrained)) {
        throw std::invalid_argument("checkpoint not found: " + cfg.pretrained);
      }
    });
    const CorpusManifest m = LoadData(o.data);
    const FinetuneResult r = RunFinetune(m, cfg, o.common.out);
    std::printf("mode %s, encoder digest %s\n", FinetuneModeName(cfg.mode).c_str(),
                r.encoder_digest_before == r.encoder_digest_after ? "unchanged" : "changed");
    PrintEpochs(r);
  };
  return cmd;
}

struct LmtOptions {
  CommonOptions common;
  std::string data, ckpt;
  int epochs = 0;
  double margin = 0.0, crop_seconds = 0.0;
  CLI::Option *epochs_opt, *margin_opt, *crop_opt;
};

CLI::App* SetupLmt(CLI::App& app, LmtOptions& o, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("lmt", "Large-margin tuning of a fine-tuned checkpoint");
  AddCommon(cmd, o.common);
  cmd->add_option("--data", o.data, "Corpus directory or manifest.tsv")->required();
  cmd->add_option("--ckpt", o.ckpt, "Fine-tuned checkpoint")->required();
  o.epochs_opt = cmd->add_option("--epochs", o.epochs, "Epochs")->check(CLI::PositiveNumber);
  o.margin_opt = cmd->add_option("--margin", o.margin, "AAM margin")->check(CLI::NonNegativeNumber);
  o.crop_opt = cmd->add_option("--crop-seconds", o.crop_seconds, "Training crop length")
                   ->check(CLI::PositiveNumber);
  run = [&o] {
    LmtConfig cfg;
    Validating([&] {
      cfg.Apply(LoadConfig(o.common));
      if (Given(o.epochs_opt)) cfg.epochs = o.epochs;
      if (Given(o.margin_opt)) cfg.margin = o.margin;
      if (Given(o.crop_opt)) cfg.crop_seconds = o.crop_seconds;
      if (Given(o.common.seed_opt)) cfg.seed = o.common.seed;
      if (!fs::exists(o.ckpt)) throw std::invalid_argument("checkpoint not found: " + o.ckpt);
    });
    const CorpusManifest m = LoadData(o.data);
    FinetuneResult r;
    Validating([&] { r = RunLargeMarginTuning(m, o.ckpt, cfg, o.common.out); });
    std::printf("margin %.2f, crop %.1f s\n", r.margin, r.crop_seconds);
    PrintEpochs(r);
  };
  return cmd;
}

// ---- eval / report ------------------------------------------------------------

struct EvalOptions {
  CommonOptions common;
  std::string ckpt, trials;
};

CLI::App* SetupEval(CLI::App& app, EvalOptions& o, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("eval", "Score a trial list and compute EER, DCF1 and DCF5");
  AddCommon(cmd, o.common);
  cmd->add_option("--ckpt", o.ckpt, "Fine-tuned or large-margin checkpoint")->required();
  cmd->add_option("--trials", o.trials, "Trial list ('<0|1> <path_a> <path_b>' lines)")
      ->required();
  run = [&o] {
    Validating([&] {
      if (!fs::exists(o.ckpt)) throw std::invalid_argument("checkpoint not found: " + o.ckpt);
    });
    const TrialList trials = LoadTrials(o.trials);
    const std::string base_dir = fs::path(o.trials).parent_path().string();
    const EmbeddingExtractor extractor(o.ckpt);
    const ScoreSet scores = ScoreTrials(extractor, trials, base_dir);
    const MetricsReport report = ComputeMetrics(scores);
    fs::create_directories(o.common.out);
    WriteScoresCsv(scores, Join(o.common.out, kScoresFileName));
    WriteReportCsv(report, Join(o.common.out, kReportFileName));
    RunInfoFromCheckpoint(o.ckpt).Save(Join(o.common.out, kRunInfoFileName));
    std::fputs(FormatReportTable(report).c_str(), stdout);
  };
  return cmd;
}

struct ReportOptions {
  CommonOptions common;
  std::string runs, baseline;
};

CLI::App* SetupReport(CLI::App& app, ReportOptions& o, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("report", "Compare evaluated runs against a baseline run");
  AddCommon(cmd, o.common, false);
  cmd->add_option("--runs", o.runs, "Directory searched for report.csv files")->required();
  cmd->add_option("--baseline", o.baseline, "Run name (path below --runs) used as baseline")
      ->required();
  run = [&o] {
    std::string csv;
    Validating([&] {
      const auto runs = CollectRuns(o.runs);
      if (runs.empty()) throw std::invalid_argument("no report.csv found under " + o.runs);
      csv = ComparisonCsv(runs, o.baseline);
    });
    if (o.common.out.empty()) {
      std::fputs(csv.c_str(), stdout);
    } else {
      fs::create_directories(o.common.out);
      WriteFileBytes(Join(o.common.out, "comparison.csv"), csv);
      std::printf("wrote %s\n", Join(o.common.out, "comparison.csv").c_str());
    }
  };
  return cmd;
}

int Main(int argc, char** argv) {
  CLI::App app{"Self-pretraining for speaker verification at desk scale"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  SynthOptions synth;
  PretrainOptions cluster, pretrain;
  FinetuneOptions finetune;
  LmtOptions lmt;
  EvalOptions eval;
  ReportOptions report;
  std::vector<std::pair<CLI::App*, std::function<void()>>> commands(7);
  commands[0].first = SetupSynth(app, synth, commands[0].second);
  commands[1].first = SetupCluster(app, cluster, commands[1].second);
  commands[2].first = SetupPretrain(app, pretrain, commands[2].second);
  commands[3].first = SetupFinetune(app, finetune, commands[3].second);
  commands[4].first = SetupLmt(app, lmt, commands[4].second);
  commands[5].first = SetupEval(app, eval, commands[5].second);
  commands[6].first = SetupReport(app, report, commands[6].second);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  CLI::App* chosen = app.get_subcommands().front();
  try {
    for (auto& [cmd, run] : commands) {
      if (cmd == chosen) run();
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << chosen->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

}  // namespace
}  // namespace selfsv

int main(int argc, char** argv) { return selfsv::Main(argc, argv); }
