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

// Acceptance suite: prints one PASS/FAIL line per criterion (AC1-AC8) and
// exits non-zero if any criterion fails. Indented lines carry measurements.

#include <CLI11.hpp>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "aam_oracle.h"
#include "gradcheck.h"
#include "metric_oracles.h"
#include "model_gradient_cases.h"
#include "op_gradient_cases.h"
#include "selfsv/backend.h"
#include "selfsv/checkpoint.h"
#include "selfsv/eval.h"
#include "selfsv/io.h"
#include "selfsv/synthcorpus.h"
#include "selfsv/targets.h"
#include "selfsv/training.h"

namespace fs = std::filesystem;

namespace selfsv {
namespace {

using Clock = std::chrono::steady_clock;

double SecondsSince(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool Report(int id, bool pass, const std::string& what) {
  std::printf("AC%d %s %s\n", id, pass ? "PASS" : "FAIL", what.c_str());
  std::fflush(stdout);
  return pass;
}

void Note(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void Note(const char* fmt, ...) {
  std::printf("  ");
  va_list args;
  va_start(args, fmt);
  std::vprintf(fmt, args);
  va_end(args);
  std::printf("\n");
  std::fflush(stdout);
}

std::string Fmt(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c);
  return buf;
}

// ---- AC1 ----------------------------------------------------------------------

bool GradientSuite() {
  constexpr double kTolerance = 1e-3;
  constexpr int kShapes = 3;
  const auto start = Clock::now();
  auto cases = testing::OpGradientCases();
  for (auto& c : testing::ModelGradientCases()) cases.push_back(std::move(c));
  double worst = 0.0;
  std::string worst_name;
  bool ok = true;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    for (int v = 0; v < kShapes; ++v) {
      std::mt19937_64 rng(1000 + 10 * i + static_cast<std::size_t>(v));
      const auto r = cases[i].run(rng, v);
      if (r.checked == 0 || !(r.relative_error < kTolerance)) {
        ok = false;
        Note("%s shape %d: relative error %.3g over %zu entries", cases[i].name.c_str(), v,
             r.relative_error, r.checked);
      }
      if (r.relative_error > worst) {
        worst = r.relative_error;
        worst_name = cases[i].name;
      }
    }
  }
  const double seconds = SecondsSince(start);
  ok = ok && seconds < 60.0;
  return Report(1, ok,
                "gradient suite: " + std::to_string(cases.size()) + " ops/heads x " +
                    std::to_string(kShapes) + " shapes, max relative error " +
                    Fmt("%.2e", worst) + " (" + worst_name + ") < 1e-3, " +
                    Fmt("%.1f s < 60 s", seconds));
}

// ---- AC2 ----------------------------------------------------------------------

bool MetricOracles() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double max_diff = 0.0, max_invariance = 0.0;
  std::size_t max_trials = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const ScoreSet s = testing::RandomScoreSet(rng, 1000);
    max_trials = std::max(max_trials, s.scores.size());
    const double eer = ComputeEer(s);
    const double dcf1 = ComputeMinDcf(s, kDcf1);
    const double dcf5 = ComputeMinDcf(s, kDcf5);
    max_diff = std::max({max_diff, std::abs(eer - testing::BruteForceEer(s)),
                         std::abs(dcf1 - testing::BruteForceMinDcf(s, kDcf1)),
                         std::abs(dcf5 - testing::BruteForceMinDcf(s, kDcf5))});
    const auto f = testing::RandomMonotoneMap(rng);
    ScoreSet mapped = s;
    for (double& v : mapped.scores) v = f(v);
    max_invariance = std::max({max_invariance, std::abs(ComputeEer(mapped) - eer),
                               std::abs(ComputeMinDcf(mapped, kDcf1) - dcf1),
                               std::abs(ComputeMinDcf(mapped, kDcf5) - dcf5)});
  }
  const double seconds = SecondsSince(start);
  const bool ok = max_diff < 1e-9 && max_invariance < 1e-9 && seconds < 30.0;
  return Report(2, ok,
                "metric oracles: 100 sets (<= " + std::to_string(max_trials) +
                    " trials), max |EER/minDCF - sweep oracle| " + Fmt("%.1e", max_diff) +
                    " < 1e-9, monotone-map drift " + Fmt("%.1e", max_invariance) + ", " +
                    Fmt("%.2f s < 30 s", seconds));
}

// ---- AC3 ----------------------------------------------------------------------

Tensor RandomTensor(Shape shape, std::mt19937_64& rng, float scale = 1.0f) {
  std::normal_distribution<float> g(0.0f, scale);
  std::vector<float> v(NumElements(shape));
  for (float& x : v) x = g(rng);
  return Tensor::FromData(std::move(shape), std::move(v));
}

LayerStack RandomStack(std::size_t layers, std::size_t t, std::size_t d, std::mt19937_64& rng,
                       float scale = 1.0f) {
  LayerStack s;
  for (std::size_t l = 0; l < layers; ++l) s.push_back(RandomTensor({t, d}, rng, scale));
  return s;
}

bool MhfaInvariants() {
  std::mt19937_64 rng(3);
  double select_err = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    const std::size_t layers = 2 + static_cast<std::size_t>(draw % 6);
    const LayerStack s = RandomStack(layers, 5 + static_cast<std::size_t>(draw), 8, rng);
    for (std::size_t j = 0; j < layers; ++j) {
      std::vector<float> raw(layers, 0.0f);
      raw[j] = 1e4f;
      const Tensor out = LayerAggregate(Tensor::FromData({layers}, raw), s);
      for (std::size_t i = 0; i < out.numel(); ++i) {
        select_err = std::max(select_err, std::abs(static_cast<double>(out.values()[i]) -
                                                   s[j].values()[i]));
      }
    }
  }

  BackendConfig cfg;
  cfg.num_layers = 5;
  cfg.input_dim = 16;
  ParameterSet params;
  Backend backend(cfg, params, rng);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (auto& p : params.items()) {
    if (p.name.find("_weights") != std::string::npos) {
      for (float& v : p.tensor.mutable_data()) v = g(rng);
    }
  }
  double perm_err = 0.0, row_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const LayerStack s = RandomStack(5, 10 + static_cast<std::size_t>(trial), 16, rng);
    std::vector<std::size_t> perm(s[0].dim(0));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    LayerStack permuted;
    for (const auto& h : s) permuted.push_back(IndexRows(h, perm));
    const Tensor y = backend.Forward(s);
    const Tensor yp = backend.Forward(permuted);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      perm_err = std::max(perm_err, std::abs(static_cast<double>(y.values()[i]) - yp.values()[i]));
    }
    // Row sums are checked on sharp and flat attention as well.
    const float scale = trial % 3 == 0 ? 20.0f : trial % 3 == 1 ? 0.05f : 1.0f;
    LayerStack scaled;
    for (const auto& h : s) scaled.push_back(Scale(h, scale));
    Tensor att;
    backend.Forward(scaled, &att);
    for (std::size_t h = 0; h < att.dim(0); ++h) {
      double total = 0.0;
      for (std::size_t t = 0; t < att.dim(1); ++t) total += att.at(h, t);
      row_err = std::max(row_err, std::abs(total - 1.0));
    }
  }
  const bool ok = select_err <= 1e-4 && perm_err <= 1e-5 && row_err <= 1e-6;
  return Report(3, ok,
                "layer weighting / MHFA: one-hot selection error " + Fmt("%.1e", select_err) +
                    " <= 1e-4, permutation drift " + Fmt("%.1e", perm_err) +
                    " <= 1e-5, attention row-sum error " + Fmt("%.1e", row_err) + " <= 1e-6");
}

// ---- AC4 ----------------------------------------------------------------------

bool AamReductions() {
  std::mt19937_64 rng(4);
  AamConfig zero;
  zero.margin = 0.0;
  double reduction_err = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t b = 1 + static_cast<std::size_t>(draw % 5);
    const std::size_t c = 2 + static_cast<std::size_t>(draw % 7);
    const std::size_t e = 3 + static_cast<std::size_t>(draw % 9);
    const Tensor64 y = testing::RandomTensor64({b, e}, rng, 1.0, false);
    const Tensor64 w = testing::RandomTensor64({c, e}, rng, 1.0, false);
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng() % c);
    reduction_err =
        std::max(reduction_err, std::abs(AamSoftmaxLoss(y, labels, w, zero).item() -
                                         testing::ScaledCrossEntropyOracle(y, w, labels, 30.0)));
  }
  AamConfig with;  // margin 0.2, scale 30
  int valid = 0, violations = 0;
  while (valid < 1000) {
    const Tensor64 y = testing::RandomTensor64({1, 6}, rng, 1.0, false);
    const Tensor64 w = testing::RandomTensor64({5, 6}, rng, 1.0, false);
    const std::vector<int> label = {static_cast<int>(rng() % 5)};
    const double cos_true = CosineLogits(y, w).at(0, static_cast<std::size_t>(label[0]));
    if (std::acos(cos_true) + with.margin > M_PI) continue;
    ++valid;
    if (AamSoftmaxLoss(y, label, w, with).item() < AamSoftmaxLoss(y, label, w, zero).item()) {
      ++violations;
    }
  }
  const bool ok = reduction_err <= 1e-6 && violations == 0;
  return Report(4, ok,
                "AAM: |loss(m=0) - scaled CE| " + Fmt("%.1e", reduction_err) +
                    " <= 1e-6, loss(m=0.2) >= loss(m=0) on " + std::to_string(valid - violations) +
                    "/1000 draws");
}

// ---- Desk-scale pipeline shared by AC5-AC7 -----------------------------------

EncoderConfig DeskEncoder() {
  EncoderConfig enc;
  enc.cnn_strides = {5, 4, 4, 4};
  enc.cnn_channels = 32;
  enc.dim = 64;
  enc.layers = 4;
  enc.heads = 4;
  return enc;
}

class DeskPipeline {
 public:
  DeskPipeline(fs::path root, int pretrain_steps)
      : root_(std::move(root)), pretrain_steps_(pretrain_steps) {}

  struct Evaluation {
    MetricsReport metrics;
    double mean_target = 0.0;     // mean same-speaker cosine
    double mean_nontarget = 0.0;  // mean cross-speaker cosine
  };

  struct SeedState {
    std::optional<CorpusManifest> corpus;
    TrialList trials;
    std::optional<PretrainResult> pre1, pre2;
    std::optional<FinetuneResult> random_init, learnable;
    std::optional<Evaluation> random_eval, learnable_eval;
  };

  const CorpusManifest& Corpus(int seed) {
    auto& s = state_[seed];
    if (!s.corpus) {
      Timed([&] {
        CorpusConfig cc;  // 20 x 20 train, 10 x 10 eval, 4 s
        cc.seed = static_cast<std::uint64_t>(seed);
        s.corpus = GenerateCorpus(cc, Dir(seed, "corpus"));
        s.trials = WriteTrials(*s.corpus, 300, 300, DeriveSeed(static_cast<std::uint64_t>(seed), 0x7a1a));
        SaveTrials(s.trials, Dir(seed, "corpus") + "/trials.txt");
      });
    }
    return *s.corpus;
  }

  const PretrainResult& Pre(int seed, int iteration) {
    auto& s = state_[seed];
    auto& slot = iteration == 1 ? s.pre1 : s.pre2;
    if (!slot) {
      const CorpusManifest& m = Corpus(seed);
      const std::string init = iteration == 2 ? Pre(seed, 1).checkpoint_path : "";
      Timed([&] {
        PretrainConfig cfg;
        cfg.iteration = iteration;
        cfg.init_checkpoint = init;
        cfg.steps = pretrain_steps_;
        cfg.encoder = DeskEncoder();
        cfg.seed = static_cast<std::uint64_t>(seed);
        slot = RunPretraining(m, cfg, Dir(seed, iteration == 1 ? "pretrain1" : "pretrain2"));
      });
      Note("seed %d pretraining iteration %d: k=%d, final loss %.3f (ln K %.3f)", seed, iteration,
           slot->k, slot->final_loss, std::log(static_cast<double>(slot->k)));
    }
    return *slot;
  }

  FinetuneConfig FinetuneFor(int seed, FinetuneMode mode, const std::string& pretrained) const {
    FinetuneConfig cfg;  // MHFA, 10 epochs, margin 0.2, scale 30, lr 5e-4 x 0.9^e
    cfg.mode = mode;
    cfg.pretrained = pretrained;
    cfg.encoder = DeskEncoder();
    cfg.seed = static_cast<std::uint64_t>(seed);
    return cfg;
  }

  // EER of random-init (first) and self-pretrained learnable (second).
  std::pair<MetricsReport, MetricsReport> Compare(int seed) {
    auto& s = state_[seed];
    const CorpusManifest& m = Corpus(seed);
    if (!s.random_eval) {
      Timed([&] {
        s.random_init = RunFinetune(m, FinetuneFor(seed, FinetuneMode::kRandomInit, ""),
                                    Dir(seed, "random_init"));
        s.random_eval = Evaluate(*s.random_init, s.trials, m);
      });
      Describe(seed, "random-init", *s.random_init, *s.random_eval, m);
    }
    if (!s.learnable_eval) {
      const std::string pre = Pre(seed, 2).checkpoint_path;
      Timed([&] {
        s.learnable = RunFinetune(m, FinetuneFor(seed, FinetuneMode::kLearnable, pre),
                                  Dir(seed, "learnable"));
        s.learnable_eval = Evaluate(*s.learnable, s.trials, m);
      });
      Describe(seed, "self-pretrained learnable", *s.learnable, *s.learnable_eval, m);
    }
    return {s.random_eval->metrics, s.learnable_eval->metrics};
  }

  std::string Dir(int seed, const std::string& name) const {
    return (root_ / ("seed" + std::to_string(seed)) / name).string();
  }
  double seconds() const { return seconds_; }

 private:
  static Evaluation Evaluate(const FinetuneResult& run, const TrialList& trials,
                             const CorpusManifest& m) {
    const EmbeddingExtractor extractor(run.checkpoint_path);
    const ScoreSet scores = ScoreTrials(extractor, trials, m.root);
    Evaluation e;
    e.metrics = ComputeMetrics(scores);
    std::size_t n_target = 0;
    for (std::size_t i = 0; i < scores.scores.size(); ++i) {
      (scores.labels[i] ? e.mean_target : e.mean_nontarget) += scores.scores[i];
      n_target += scores.labels[i];
    }
    e.mean_target /= static_cast<double>(n_target);
    e.mean_nontarget /= static_cast<double>(scores.scores.size() - n_target);
    WriteReportCsv(e.metrics,
                   (fs::path(run.checkpoint_path).parent_path() / kReportFileName).string());
    return e;
  }

  // Measurements outside the timed pipeline: clean train-split accuracy and
  // mean same- vs cross-speaker cosine on the held-out trials.
  static void Describe(int seed, const char* label, const FinetuneResult& run,
                       const Evaluation& e, const CorpusManifest& m) {
    const SpeakerModel model = SpeakerModel::Load(CheckpointFile::Load(run.checkpoint_path));
    Note("seed %d %s: EER %.2f%%, DCF1 %.3f, DCF5 %.3f; train accuracy %.3f last epoch, "
         "%.3f clean; mean cosine same %.3f / cross %.3f",
         seed, label, 100.0 * e.metrics.eer, e.metrics.dcf1, e.metrics.dcf5,
         run.epoch_accuracy.back(), ClassificationAccuracy(model, m), e.mean_target,
         e.mean_nontarget);
  }

  template <typename Fn>
  void Timed(Fn&& fn) {
    const auto start = Clock::now();
    fn();
    seconds_ += SecondsSince(start);
  }

  fs::path root_;
  int pretrain_steps_;
  std::map<int, SeedState> state_;
  double seconds_ = 0.0;
};

// ---- AC5 ----------------------------------------------------------------------

bool FrozenContract(DeskPipeline& pipe) {
  const PretrainResult& pre = pipe.Pre(1, 1);
  const CorpusManifest& m = pipe.Corpus(1);
  const auto start = Clock::now();
  const FinetuneResult run =
      RunFinetune(m, pipe.FinetuneFor(1, FinetuneMode::kFrozen, pre.checkpoint_path),
                  pipe.Dir(1, "frozen"));
  ParameterSet pretrained;
  LoadEncoder(CheckpointFile::Load(pre.checkpoint_path), pretrained);
  const SpeakerModel saved = SpeakerModel::Load(CheckpointFile::Load(run.checkpoint_path));
  const std::string reference = ParameterDigest(pretrained, "encoder.");
  const std::string stored = ParameterDigest(saved.params(), "encoder.");
  const bool ok = run.encoder_digest_before == reference && run.encoder_digest_after == reference &&
                  stored == reference;
  return Report(5, ok,
                "frozen fine-tune (" + std::to_string(run.epoch_loss.size()) +
                    " epochs, train accuracy " + Fmt("%.3f", run.epoch_accuracy.back()) +
                    "): encoder digest " + reference.substr(0, 16) + (ok ? " unchanged" : " CHANGED") +
                    Fmt(", %.0f s", SecondsSince(start)));
}

// ---- AC6 ----------------------------------------------------------------------

bool PipelineReproduction(DeskPipeline& pipe, const std::vector<int>& seeds) {
  int wins = 0;
  bool all_below = true;
  std::string eers;
  for (int seed : seeds) {
    const auto [random_init, learnable] = pipe.Compare(seed);
    wins += learnable.eer <= random_init.eer;
    all_below = all_below && random_init.eer < 0.20 && learnable.eer < 0.20;
    eers += Fmt(" seed %.0f: %.2f%% vs %.2f%%;", seed, 100.0 * learnable.eer,
                100.0 * random_init.eer);
  }
  const double minutes = pipe.seconds() / 60.0;
  const int needed = static_cast<int>(seeds.size()) - static_cast<int>(seeds.size()) / 3;
  const bool ok = all_below && wins >= needed && minutes < 45.0;
  return Report(6, ok,
                "desk pipeline (self-pretrained learnable vs random-init EER):" + eers +
                    " pretrained <= random-init in " + std::to_string(wins) + "/" +
                    std::to_string(seeds.size()) + " (need " + std::to_string(needed) +
                    "), all < 20%: " + (all_below ? "yes" : "no") +
                    Fmt(", %.1f min < 45 min", minutes) + " on " +
                    std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " core(s)");
}

// ---- AC7 ----------------------------------------------------------------------

bool TwoIterationClustering(DeskPipeline& pipe) {
  const PretrainResult& pre1 = pipe.Pre(1, 1);
  const PretrainResult& pre2 = pipe.Pre(1, 2);
  const double disagreement =
      LabelDisagreement(pre1.targets.sequences, pre2.targets.sequences);
  const double ln_k = std::log(static_cast<double>(pre2.k));
  const bool ok = disagreement > 0.10 && pre2.final_loss < ln_k;
  return Report(7, ok,
                "re-clustering (" + pre2.targets.codebook.feature_kind + ", K=" +
                    std::to_string(pre2.k) + "): iteration-2 labels disagree on " +
                    Fmt("%.1f%%", 100.0 * disagreement) + " of frames (> 10%), final loss " +
                    Fmt("%.3f < ln K = %.3f", pre2.final_loss, ln_k));
}

// ---- AC8 ----------------------------------------------------------------------

int RunCli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "'" + cli + "' " + args + " >> '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool Determinism(const fs::path& root, const std::string& cli) {
  const auto start = Clock::now();
  const fs::path config = root / "small.cfg";
  fs::create_directories(root);
  WriteFileBytes(config.string(),
                 "encoder.cnn_strides=5,4,4,4\nencoder.cnn_channels=16\nencoder.dim=32\n"
                 "encoder.layers=2\nencoder.heads=2\npretrain.k=16\nfinetune.epochs=2\n"
                 "backend.embedding_dim=32\n");
  std::vector<std::string> reports, scores;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = "'" + dir.string() + "/";
    const std::string cfg = " --config '" + config.string() + "'";
    const fs::path log = dir / "log.txt";
    const std::vector<std::string> steps = {
        "synth --speakers 6 --utts 6 --eval-speakers 3 --eval-utts 4 --seconds 2 --seed 8 --out " +
            d + "data'",
        "pretrain --data " + d + "data' --steps 60 --seed 8" + cfg + " --out " + d + "pre1'",
        "pretrain --data " + d + "data' --iteration 2 --ckpt-in " + d +
            "pre1/model.ckpt' --steps 60 --seed 8" + cfg + " --out " + d + "pre2'",
        "finetune --data " + d + "data' --mode learnable --pretrained " + d +
            "pre2/model.ckpt' --seed 8" + cfg + " --out " + d + "ft'",
        "eval --ckpt " + d + "ft/model.ckpt' --trials " + d + "data/trials.txt' --out " + d +
            "eval'"};
    for (const auto& step : steps) {
      if (RunCli(cli, step, log) != 0) {
        return Report(8, false, "determinism: command failed: selfsv " + step);
      }
    }
    reports.push_back(ReadFileBytes((dir / "eval" / kReportFileName).string()));
    scores.push_back(ReadFileBytes((dir / "eval" / kScoresFileName).string()));
  }
  const bool ok = reports[0] == reports[1] && scores[0] == scores[1];
  return Report(8, ok,
                "determinism: synth -> pretrain x2 -> finetune -> eval twice, report.csv " +
                    std::string(reports[0] == reports[1] ? "byte-identical" : "DIFFERS") +
                    " (sha256 " + Sha256Hex(reports[0]).substr(0, 16) + "), scores.csv " +
                    (scores[0] == scores[1] ? "byte-identical" : "DIFFERS") +
                    Fmt(", %.0f s", SecondsSince(start)));
}

int Main(int argc, char** argv) {
  CLI::App app{"selfsv acceptance suite"};
  std::vector<int> only;
  std::vector<int> seeds = {1, 2, 3};
  std::string workdir = "acceptance_work";
  std::string cli = SELFSV_CLI_PATH;
  int pretrain_steps = 3000;
  app.add_option("--only", only, "Run only these criteria (1-8)")->check(CLI::Range(1, 8));
  app.add_option("--seeds", seeds, "Pipeline seeds");
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--cli", cli, "Path of the selfsv binary");
  app.add_option("--pretrain-steps", pretrain_steps, "Steps per pretraining iteration")
      ->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}
                                              : std::set<int>(only.begin(), only.end());
  DeskPipeline pipe(fs::path(workdir) / "pipeline", pretrain_steps);
  int failed = 0;
  for (int id : selected) {
    bool pass = false;
    try {
      switch (id) {
        case 1: pass = GradientSuite(); break;
        case 2: pass = MetricOracles(); break;
        case 3: pass = MhfaInvariants(); break;
        case 4: pass = AamReductions(); break;
        case 5: pass = FrozenContract(pipe); break;
        case 6: pass = PipelineReproduction(pipe, seeds); break;
        case 7: pass = TwoIterationClustering(pipe); break;
        case 8: pass = Determinism(fs::path(workdir) / "determinism", cli); break;
      }
    } catch (const std::exception& e) {
      pass = Report(id, false, std::string("error: ") + e.what());
    }
    failed += !pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(selected.size()) - failed,
              selected.size());
  return failed == 0 ? 0 : 1;
}

}  // namespace
}  // namespace selfsv

int main(int argc, char** argv) { return selfsv::Main(argc, argv); }
