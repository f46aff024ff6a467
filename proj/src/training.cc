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

#include "selfsv/training.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "selfsv/checkpoint.h"
#include "selfsv/io.h"
#include "selfsv/parallel.h"

namespace selfsv {

namespace fs = std::filesystem;

namespace {

constexpr char kRunMetaPrefix[] = "run.";

void WriteEncoderKv(KeyValueConfig& kv, const EncoderConfig& e) {
  kv.Set("encoder.variant", VariantName(e.variant));
  kv.Set("encoder.layers", e.layers);
  kv.Set("encoder.dim", e.dim);
  kv.Set("encoder.heads", e.heads);
  kv.Set("encoder.ffn_mult", e.ffn_mult);
  kv.Set("encoder.cnn_strides", e.cnn_strides);
  kv.Set("encoder.cnn_kernels", e.cnn_kernels);
  kv.Set("encoder.cnn_channels", e.cnn_channels);
  kv.Set("encoder.conv_kernel", e.conv_kernel);
}

void ReadEncoderKv(const KeyValueConfig& kv, EncoderConfig& e) {
  if (kv.Has("encoder.variant")) e.variant = ParseVariant(kv.Get("encoder.variant"));
  kv.Read("encoder.layers", e.layers);
  kv.Read("encoder.dim", e.dim);
  kv.Read("encoder.heads", e.heads);
  kv.Read("encoder.ffn_mult", e.ffn_mult);
  kv.Read("encoder.cnn_strides", e.cnn_strides);
  kv.Read("encoder.cnn_kernels", e.cnn_kernels);
  kv.Read("encoder.cnn_channels", e.cnn_channels);
  kv.Read("encoder.conv_kernel", e.conv_kernel);
}

void StoreRunConfig(CheckpointFile& file, const KeyValueConfig& kv) {
  for (const auto& [k, v] : kv.entries()) file.SetMeta(kRunMetaPrefix + k, v);
}

KeyValueConfig LoadRunConfig(const CheckpointFile& file) {
  KeyValueConfig kv;
  const std::string prefix = kRunMetaPrefix;
  for (const auto& [k, v] : file.meta()) {
    if (k.compare(0, prefix.size(), prefix) == 0) kv.Set(k.substr(prefix.size()), v);
  }
  return kv;
}

void WriteLossCurve(const std::vector<std::pair<int, double>>& rows, const std::string& path) {
  std::string out = "step,loss\n";
  for (const auto& [step, loss] : rows) out += std::to_string(step) + "," + FormatDouble(loss) + "\n";
  WriteFileBytes(path, out);
}

std::string PrepareOutDir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw std::runtime_error("cannot create output directory " + out_dir);
  }
  return out_dir;
}

std::string Join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

struct Utterance {
  std::string path;
  Waveform wave;
  int speaker = 0;
};

std::vector<Utterance> LoadUtterances(const CorpusManifest& manifest, const std::string& split,
                                      std::vector<std::string>* speakers) {
  const auto entries = manifest.Split(split);
  if (entries.empty()) {
    throw std::invalid_argument("manifest has no utterances in split '" + split + "'");
  }
  std::set<std::string> ids;
  for (const auto& e : entries) ids.insert(e.speaker_id);
  std::vector<std::string> sorted(ids.begin(), ids.end());
  std::vector<Utterance> out(entries.size());
  ParallelFor(entries.size(), [&](std::size_t i) {
    out[i].path = entries[i].path;
    out[i].wave = LoadWav(manifest.AbsolutePath(entries[i].path));
    out[i].speaker = static_cast<int>(
        std::lower_bound(sorted.begin(), sorted.end(), entries[i].speaker_id) - sorted.begin());
  });
  if (speakers) *speakers = std::move(sorted);
  return out;
}

}  // namespace

double WarmupDecayLr(int step, int total_steps, double peak, double warmup_fraction) {
  if (total_steps <= 0) throw std::invalid_argument("lr schedule: total_steps must be > 0");
  const int warmup = static_cast<int>(std::ceil(warmup_fraction * total_steps));
  if (step < warmup) return peak * (step + 1) / warmup;
  const int decay = total_steps - warmup;
  return decay <= 0 ? peak : peak * static_cast<double>(total_steps - step) / decay;
}

double EpochLr(int epoch, double peak, double decay) { return peak * std::pow(decay, epoch); }

std::string ParameterDigest(const ParameterSet& params, const std::string& prefix) {
  std::string bytes;
  for (const auto& p : params.items()) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    bytes += p.name + ShapeToString(p.tensor.shape());
    AppendFloatsLE(p.tensor.values(), bytes);
  }
  return Sha256Hex(bytes);
}

// ---- Pretraining -------------------------------------------------------------

int PretrainConfig::Clusters() const {
  if (k > 0) return k;
  return iteration == 1 ? kDefaultIter1Clusters : kDefaultIter2Clusters;
}

void PretrainConfig::Validate() const {
  if (iteration != 1 && iteration != 2) {
    throw std::invalid_argument("pretrain: iteration must be 1 or 2");
  }
  if (steps <= 0) throw std::invalid_argument("pretrain: steps must be > 0");
  if (batch_size <= 0) throw std::invalid_argument("pretrain: batch_size must be > 0");
  if (!(crop_seconds > 0.0)) throw std::invalid_argument("pretrain: crop_seconds must be > 0");
  if (k < 0 || (k > 0 && k < 2)) throw std::invalid_argument("pretrain: k must be >= 2");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("pretrain: warmup_fraction must be in [0, 1)");
  }
  if (iteration == 2 && init_checkpoint.empty()) {
    throw std::invalid_argument("pretrain: iteration 2 needs the iteration-1 checkpoint");
  }
  encoder.Validate();
}

void PretrainConfig::Apply(const KeyValueConfig& kv) {
  kv.Read("pretrain.iteration", iteration);
  kv.Read("pretrain.steps", steps);
  kv.Read("pretrain.batch_size", batch_size);
  kv.Read("pretrain.crop_seconds", crop_seconds);
  kv.Read("pretrain.k", k);
  kv.Read("pretrain.mask_prob", mask.prob);
  kv.Read("pretrain.mask_span", mask.span);
  kv.Read("pretrain.lr", lr);
  kv.Read("pretrain.warmup_fraction", warmup_fraction);
  kv.Read("seed", seed);
  kv.Read("pretrain.frame_cap", frame_cap);
  kv.Read("pretrain.kmeans_iters", kmeans_iters);
  kv.Read("pretrain.cluster_layer", cluster_layer);
  kv.Read("pretrain.init_checkpoint", init_checkpoint);
  kv.Read("pretrain.warm_start", warm_start);
  kv.Read("pretrain.split", split);
  ReadEncoderKv(kv, encoder);
}

KeyValueConfig PretrainConfig::ToKeyValue() const {
  KeyValueConfig kv;
  kv.Set("pretrain.iteration", iteration);
  kv.Set("pretrain.steps", steps);
  kv.Set("pretrain.batch_size", batch_size);
  kv.Set("pretrain.crop_seconds", crop_seconds);
  kv.Set("pretrain.k", Clusters());
  kv.Set("pretrain.mask_prob", mask.prob);
  kv.Set("pretrain.mask_span", mask.span);
  kv.Set("pretrain.lr", lr);
  kv.Set("pretrain.warmup_fraction", warmup_fraction);
  kv.Set("seed", seed);
  kv.Set("pretrain.frame_cap", static_cast<std::uint64_t>(frame_cap));
  kv.Set("pretrain.kmeans_iters", kmeans_iters);
  kv.Set("pretrain.cluster_layer", cluster_layer);
  kv.Set("pretrain.init_checkpoint", init_checkpoint);
  kv.Set("pretrain.warm_start", warm_start);
  kv.Set("pretrain.split", split);
  WriteEncoderKv(kv, encoder);
  return kv;
}

template <typename T>
BasicTensor<T> MaskedPredictionLoss(const BasicTensor<T>& logits,
                                    std::span<const std::size_t> masked,
                                    std::span<const int> labels) {
  if (logits.ndim() != 2 || labels.size() != logits.dim(0)) {
    throw ShapeError("masked_prediction_loss: logits " + ShapeToString(logits.shape()) +
                     " vs " + std::to_string(labels.size()) + " labels");
  }
  if (masked.empty()) throw std::invalid_argument("masked_prediction_loss: empty mask");
  std::vector<int> picked;
  picked.reserve(masked.size());
  for (std::size_t t : masked) {
    if (t >= labels.size()) throw std::out_of_range("masked_prediction_loss: frame out of range");
    picked.push_back(labels[t]);
  }
  return CrossEntropy(IndexRows(logits, masked), std::span<const int>(picked));
}

template Tensor MaskedPredictionLoss(const Tensor&, std::span<const std::size_t>,
                                     std::span<const int>);
template Tensor64 MaskedPredictionLoss(const Tensor64&, std::span<const std::size_t>,
                                       std::span<const int>);

PretrainModel::PretrainModel(const EncoderConfig& encoder, int k, std::uint64_t seed)
    : PretrainModel(encoder, k, std::mt19937_64(seed)) {}

PretrainModel::PretrainModel(const EncoderConfig& encoder, int k, std::mt19937_64 rng)
    : encoder_(encoder, params_, rng), k_(k) {
  if (k < 2) throw std::invalid_argument("pretrain model: k must be >= 2");
  const auto d = static_cast<std::size_t>(encoder.dim);
  head_w_ = params_.Add("pretrain.head.weight",
                        NormalInit<float>({d, static_cast<std::size_t>(k)},
                                          1.0 / std::sqrt(static_cast<double>(d)), rng));
  head_b_ = params_.Add("pretrain.head.bias", Tensor::Zeros({static_cast<std::size_t>(k)}));
}

Tensor PretrainModel::Logits(const Tensor& h0) const {
  return Linear(encoder_.Encode(h0).back(), head_w_, head_b_);
}

std::optional<Tensor> PretrainModel::Loss(const std::vector<PretrainExample>& batch,
                                          const MaskConfig& mask, std::uint64_t seed) const {
  std::vector<Tensor> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor h0 = encoder_.CnnEncode(batch[i].samples);
    if (h0.dim(0) != batch[i].labels.size()) {
      throw ShapeError("pretrain: " + std::to_string(batch[i].labels.size()) +
                       " labels for " + std::to_string(h0.dim(0)) + " frames");
    }
    if (h0.dim(0) < static_cast<std::size_t>(mask.span)) continue;
    const auto masked = encoder_.ApplyMask(h0, mask, DeriveSeed(seed, i));
    if (masked.indices.empty()) continue;
    rows.push_back(IndexRows(Logits(masked.masked), masked.indices));
    for (std::size_t t : masked.indices) labels.push_back(batch[i].labels[t]);
  }
  if (rows.empty()) return std::nullopt;
  const Tensor all = rows.size() == 1 ? rows[0] : Concat(rows, 0);
  return CrossEntropy(all, std::span<const int>(labels));
}

PretrainResult RunPretraining(const CorpusManifest& manifest, const PretrainConfig& cfg_in,
                              const std::string& out_dir) {
  PretrainConfig cfg = cfg_in;
  std::optional<CheckpointFile> init;
  if (cfg.iteration == 2) {
    if (cfg.init_checkpoint.empty()) {
      throw std::invalid_argument("pretrain: iteration 2 needs the iteration-1 checkpoint");
    }
    init = CheckpointFile::Load(cfg.init_checkpoint);
    cfg.encoder = EncoderConfig::FromMeta(*init);
  }
  cfg.Validate();
  PrepareOutDir(out_dir);

  PretrainResult result;
  result.k = cfg.Clusters();
  TargetsConfig tcfg;
  tcfg.k = result.k;
  tcfg.seed = DeriveSeed(cfg.seed, 0xc1, static_cast<std::uint64_t>(cfg.iteration));
  tcfg.frame_cap = cfg.frame_cap;
  tcfg.max_iters = cfg.kmeans_iters;
  tcfg.split = cfg.split;
  result.targets = cfg.iteration == 1
                       ? BuildTargetsIter1(manifest, cfg.mfcc, cfg.encoder, tcfg)
                       : BuildTargetsIter2(manifest, cfg.init_checkpoint, cfg.cluster_layer, tcfg);
  const std::string codebook_path = Join(out_dir, kCodebookFileName);
  result.targets.codebook.Save(codebook_path);
  SaveLabels(result.targets.sequences, result.k, Join(out_dir, kLabelsFileName));

  const auto utts = LoadUtterances(manifest, cfg.split, nullptr);
  const auto& seqs = result.targets.sequences;

  PretrainModel model(cfg.encoder, result.k,
                      DeriveSeed(cfg.seed, 0x1417, static_cast<std::uint64_t>(cfg.iteration)));
  if (init && cfg.warm_start) init->LoadParameters(model.params(), "encoder.");

  const int sr = utts.front().wave.sample_rate;
  const auto crop_samples = static_cast<std::size_t>(std::lround(cfg.crop_seconds * sr));
  const std::size_t crop_frames = EncoderFrameCount(crop_samples, cfg.encoder);
  if (crop_frames == 0) throw std::invalid_argument("pretrain: crop shorter than one frame");
  const std::size_t crop_len = MinSamplesForFrames(crop_frames, cfg.encoder);
  const auto stride = static_cast<std::size_t>(cfg.encoder.TotalStride());

  AdamState adam;
  std::mt19937_64 batch_rng(DeriveSeed(cfg.seed, 0xba7c, static_cast<std::uint64_t>(cfg.iteration)));
  std::vector<std::pair<int, double>> curve;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<PretrainExample> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t u = batch_rng() % utts.size();
      const auto& samples = utts[u].wave.samples;
      const auto& labels = seqs[u].labels;
      if (labels.size() <= crop_frames) {
        batch.push_back({samples, labels});
        continue;
      }
      const std::size_t first = batch_rng() % (labels.size() - crop_frames + 1);
      batch.push_back({std::span<const float>(samples).subspan(first * stride, crop_len),
                       std::span<const int>(labels).subspan(first, crop_frames)});
    }
    const auto loss = model.Loss(batch, cfg.mask,
                                 DeriveSeed(cfg.seed, static_cast<std::uint64_t>(cfg.iteration),
                                            static_cast<std::uint64_t>(step)));
    if (!loss) {
      ++result.skipped_batches;
      std::cerr << "warning: pretrain step " << step << " has no masked frames; skipped\n";
      continue;
    }
    model.params().ZeroGrad();
    Backward(*loss);
    adam.lr = WarmupDecayLr(step, cfg.steps, cfg.lr, cfg.warmup_fraction);
    AdamStep(model.params(), adam);
    const double value = loss->item();
    if (!std::isfinite(value)) {
      throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(step));
    }
    result.losses.push_back(value);
    curve.emplace_back(step, value);
  }
  if (!result.losses.empty()) {
    const std::size_t tail = std::max<std::size_t>(1, result.losses.size() / 10);
    double sum = 0.0;
    for (std::size_t i = result.losses.size() - tail; i < result.losses.size(); ++i) {
      sum += result.losses[i];
    }
    result.final_loss = sum / static_cast<double>(tail);
  }

  CheckpointFile file;
  file.SetMeta(kStageKey, cfg.iteration == 1 ? kStagePretrainIter1 : kStagePretrainIter2);
  cfg.encoder.WriteMeta(file);
  const KeyValueConfig run = cfg.ToKeyValue();
  StoreRunConfig(file, run);
  file.SetMeta(kDataKey, manifest.Name());
  file.SetMeta("codebook", kCodebookFileName);
  file.SetMeta("codebook_sha256", FileSha256(codebook_path));
  file.SetMeta("feature_kind", result.targets.codebook.feature_kind);
  file.SetMeta("steps_done", std::to_string(result.losses.size()));
  file.SetMeta("skipped_batches", std::to_string(result.skipped_batches));
  file.AddParameters(model.params(), "encoder.");
  file.AddParameters(model.params(), "pretrain.");
  result.checkpoint_path = Join(out_dir, kCheckpointFileName);
  file.Save(result.checkpoint_path);
  WriteLossCurve(curve, Join(out_dir, kLossCurveFileName));
  run.Save(Join(out_dir, kRunConfigFileName));
  return result;
}

// ---- Fine-tuning ----------------------------------------------------------

std::string FinetuneModeName(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::kRandomInit:
      return "random_init";
    case FinetuneMode::kFrozen:
      return "frozen";
    case FinetuneMode::kLearnable:
      return "learnable";
  }
  return "";
}

FinetuneMode ParseFinetuneMode(const std::string& name) {
  if (name == "random_init" || name == "random-init") return FinetuneMode::kRandomInit;
  if (name == "frozen") return FinetuneMode::kFrozen;
  if (name == "learnable") return FinetuneMode::kLearnable;
  throw std::invalid_argument("unknown fine-tune mode '" + name +
                              "' (expected random-init, frozen or learnable)");
}

void FinetuneConfig::Validate() const {
  if (mode == FinetuneMode::kRandomInit && !pretrained.empty()) {
    throw std::invalid_argument("finetune: random_init mode does not take a pretrained checkpoint");
  }
  if (mode != FinetuneMode::kRandomInit && pretrained.empty()) {
    throw std::invalid_argument("finetune: " + FinetuneModeName(mode) +
                                " mode needs a pretrained checkpoint");
  }
  if (epochs < 1) throw std::invalid_argument("finetune: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("finetune: batch_size must be >= 1");
  if (!(crop_seconds > 0.0)) throw std::invalid_argument("finetune: crop_seconds must be > 0");
  if (!(lr > 0.0) || !(lr_decay > 0.0)) throw std::invalid_argument("finetune: bad learning rate");
  AamConfig{margin, scale, 0}.Validate();
  if (mode == FinetuneMode::kRandomInit) encoder.Validate();
}

void FinetuneConfig::Apply(const KeyValueConfig& kv) {
  if (kv.Has("finetune.mode")) mode = ParseFinetuneMode(kv.Get("finetune.mode"));
  if (kv.Has("finetune.backend")) backend = ParseBackendKind(kv.Get("finetune.backend"));
  kv.Read("finetune.epochs", epochs);
  kv.Read("finetune.margin", margin);
  kv.Read("finetune.scale", scale);
  kv.Read("finetune.lr", lr);
  kv.Read("finetune.lr_decay", lr_decay);
  kv.Read("finetune.crop_seconds", crop_seconds);
  kv.Read("finetune.batch_size", batch_size);
  kv.Read("finetune.augment", augment);
  kv.Read("augment.apply_prob", augmentation.apply_prob);
  kv.Read("augment.snr_min_db", augmentation.snr_min_db);
  kv.Read("augment.snr_max_db", augmentation.snr_max_db);
  kv.Read("augment.rt60_min_s", augmentation.rt60_min_s);
  kv.Read("augment.rt60_max_s", augmentation.rt60_max_s);
  kv.Read("seed", seed);
  kv.Read("finetune.pretrained", pretrained);
  kv.Read("finetune.split", split);
  kv.Read("backend.embedding_dim", backend_cfg.embedding_dim);
  kv.Read("backend.heads", backend_cfg.heads);
  kv.Read("backend.key_dim", backend_cfg.key_dim);
  kv.Read("backend.value_dim", backend_cfg.value_dim);
  kv.Read("backend.tdnn_channels", backend_cfg.tdnn_channels);
  kv.Read("backend.tdnn_kernel", backend_cfg.tdnn_kernel);
  kv.Read("backend.tdnn_dilations", backend_cfg.tdnn_dilations);
  kv.Read("backend.attention_dim", backend_cfg.attention_dim);
  ReadEncoderKv(kv, encoder);
}

KeyValueConfig FinetuneConfig::ToKeyValue() const {
  KeyValueConfig kv;
  kv.Set("finetune.mode", FinetuneModeName(mode));
  kv.Set("finetune.backend", BackendKindName(backend));
  kv.Set("finetune.epochs", epochs);
  kv.Set("finetune.margin", margin);
  kv.Set("finetune.scale", scale);
  kv.Set("finetune.lr", lr);
  kv.Set("finetune.lr_decay", lr_decay);
  kv.Set("finetune.crop_seconds", crop_seconds);
  kv.Set("finetune.batch_size", batch_size);
  kv.Set("finetune.augment", augment);
  kv.Set("augment.apply_prob", augmentation.apply_prob);
  kv.Set("augment.snr_min_db", augmentation.snr_min_db);
  kv.Set("augment.snr_max_db", augmentation.snr_max_db);
  kv.Set("augment.rt60_min_s", augmentation.rt60_min_s);
  kv.Set("augment.rt60_max_s", augmentation.rt60_max_s);
  kv.Set("seed", seed);
  kv.Set("finetune.pretrained", pretrained);
  kv.Set("finetune.split", split);
  kv.Set("backend.embedding_dim", backend_cfg.embedding_dim);
  kv.Set("backend.heads", backend_cfg.heads);
  kv.Set("backend.key_dim", backend_cfg.key_dim);
  kv.Set("backend.value_dim", backend_cfg.value_dim);
  kv.Set("backend.tdnn_channels", backend_cfg.tdnn_channels);
  kv.Set("backend.tdnn_kernel", backend_cfg.tdnn_kernel);
  kv.Set("backend.tdnn_dilations", backend_cfg.tdnn_dilations);
  kv.Set("backend.attention_dim", backend_cfg.attention_dim);
  WriteEncoderKv(kv, encoder);
  return kv;
}

void LmtConfig::Apply(const KeyValueConfig& kv) {
  kv.Read("lmt.margin", margin);
  kv.Read("lmt.crop_seconds", crop_seconds);
  kv.Read("lmt.epochs", epochs);
  kv.Read("seed", seed);
}

KeyValueConfig LmtConfig::ToKeyValue() const {
  KeyValueConfig kv;
  kv.Set("lmt.margin", margin);
  kv.Set("lmt.crop_seconds", crop_seconds);
  kv.Set("lmt.epochs", epochs);
  kv.Set("seed", seed);
  return kv;
}

namespace {

std::size_t ClassCount(const std::vector<std::string>& speakers) {
  if (speakers.empty()) throw std::invalid_argument("speaker model: no speakers");
  return speakers.size();
}

}  // namespace

SpeakerModel::SpeakerModel(const EncoderConfig& encoder, const BackendConfig& backend,
                           std::vector<std::string> speakers, std::uint64_t seed)
    : SpeakerModel(encoder, backend, std::move(speakers), std::mt19937_64(seed)) {}

SpeakerModel::SpeakerModel(const EncoderConfig& encoder, const BackendConfig& backend,
                           std::vector<std::string> speakers, std::mt19937_64 rng)
    : encoder_(encoder, params_, rng),
      backend_(backend, params_, rng),
      class_weights_(params_.Add(
          "aam.weight",
          NormalInit<float>({ClassCount(speakers), static_cast<std::size_t>(backend.embedding_dim)},
                            1.0, rng))),
      speakers_(std::move(speakers)) {}

SpeakerModel SpeakerModel::Load(const CheckpointFile& file) {
  const EncoderConfig enc = EncoderConfig::FromMeta(file);
  const BackendConfig be = BackendConfig::FromMeta(file);
  SpeakerModel model(enc, be, SplitString(file.Meta("speakers"), ','), std::uint64_t{0});
  file.LoadParameters(model.params_);
  return model;
}

Tensor SpeakerModel::Embed(std::span<const float> samples, bool frozen_encoder) const {
  if (!frozen_encoder) return backend_.Forward(encoder_.Forward(samples));
  LayerStack stack;
  {
    NoGradGuard no_grad;
    stack = encoder_.Forward(samples);
  }
  return backend_.Forward(stack);
}

void SpeakerModel::Store(CheckpointFile& file) const {
  encoder_.config().WriteMeta(file);
  backend_.config().WriteMeta(file);
  std::string joined;
  for (std::size_t i = 0; i < speakers_.size(); ++i) {
    if (i) joined += ",";
    joined += speakers_[i];
  }
  file.SetMeta("speakers", joined);
  file.AddParameters(params_);
}

namespace {

struct EpochSettings {
  double margin = 0.2;
  double scale = 30.0;
  double crop_seconds = 2.0;
  double lr = 5e-4;
  double lr_decay = 0.9;
  int epochs = 10;
  int start_epoch = 0;
  int batch_size = 16;
  bool augment = true;
  AugmentConfig augmentation;
  bool frozen = false;
  std::uint64_t seed = 1;
};

void TrainSpeakerEpochs(SpeakerModel& model, const std::vector<Utterance>& utts,
                        const EpochSettings& s, FinetuneResult& result,
                        std::vector<std::pair<int, double>>& curve) {
  const Augmenter augmenter(s.augmentation, DefaultNoiseBank(DeriveSeed(s.seed, 0x401e)));
  AamConfig aam;
  aam.margin = s.margin;
  aam.scale = s.scale;
  aam.n_classes = static_cast<int>(model.speakers().size());
  result.margin = s.margin;
  result.crop_seconds = s.crop_seconds;
  AdamState adam;
  int step = curve.empty() ? 0 : curve.back().first + 1;
  for (int local = 0; local < s.epochs; ++local) {
    const int epoch = s.start_epoch + local;
    const auto e = static_cast<std::uint64_t>(epoch);
    adam.lr = EpochLr(epoch, s.lr, s.lr_decay);
    std::vector<std::size_t> order(utts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(DeriveSeed(s.seed, 0x5f1e, e));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(s.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(s.batch_size));
      std::vector<Tensor> ys;
      std::vector<int> labels;
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t u = order[j];
        Waveform wave = utts[u].wave;
        if (s.augment) wave = augmenter.Apply(wave, DeriveSeed(s.seed, 0xa000 + e, u));
        const Waveform crop = RandomCrop(wave, s.crop_seconds, DeriveSeed(s.seed, 0xc000 + e, u));
        ys.push_back(model.Embed(crop.samples, s.frozen));
        labels.push_back(utts[u].speaker);
      }
      const Tensor y = ys.size() == 1 ? ys[0] : Concat(ys, 0);
      const Tensor loss = AamSoftmaxLoss(y, labels, model.class_weights(), aam);
      {
        NoGradGuard no_grad;
        const Tensor cos = CosineLogits(y.Detach(), model.class_weights().Detach());
        for (std::size_t i = 0; i < labels.size(); ++i) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < cos.dim(1); ++c) {
            if (cos.at(i, c) > cos.at(i, best)) best = c;
          }
          correct += static_cast<int>(best) == labels[i];
        }
      }
      model.params().ZeroGrad();
      Backward(loss);
      AdamStep(model.params(), adam);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw std::runtime_error("finetune: non-finite loss in epoch " + std::to_string(epoch));
      }
      curve.emplace_back(step++, value);
      loss_sum += value;
      seen += labels.size();
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    result.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(seen));
    result.epoch_lr.push_back(adam.lr);
  }
}

void ConfigureTrainable(SpeakerModel& model, FinetuneMode mode) {
  // The mask embedding only exists for pretraining.
  model.params().SetTrainable("encoder.mask_embedding", false);
  if (mode == FinetuneMode::kFrozen) model.params().SetTrainable("encoder.", false);
}

EpochSettings SettingsFrom(const FinetuneConfig& cfg) {
  EpochSettings s;
  s.margin = cfg.margin;
  s.scale = cfg.scale;
  s.crop_seconds = cfg.crop_seconds;
  s.lr = cfg.lr;
  s.lr_decay = cfg.lr_decay;
  s.epochs = cfg.epochs;
  s.batch_size = cfg.batch_size;
  s.augment = cfg.augment;
  s.augmentation = cfg.augmentation;
  s.frozen = cfg.mode == FinetuneMode::kFrozen;
  s.seed = cfg.seed;
  return s;
}

}  // namespace

FinetuneResult RunFinetune(const CorpusManifest& manifest, const FinetuneConfig& cfg_in,
                           const std::string& out_dir) {
  FinetuneConfig cfg = cfg_in;
  cfg.Validate();
  std::optional<CheckpointFile> pre;
  if (!cfg.pretrained.empty()) {
    pre = CheckpointFile::Load(cfg.pretrained);
    const std::string stage = pre->MetaOr(kStageKey, "");
    if (stage != kStagePretrainIter1 && stage != kStagePretrainIter2) {
      throw std::invalid_argument(cfg.pretrained + ": expected a pretrained checkpoint, found stage '" +
                                  stage + "'");
    }
    cfg.encoder = EncoderConfig::FromMeta(*pre);
  }
  PrepareOutDir(out_dir);
  std::vector<std::string> speakers;
  const auto utts = LoadUtterances(manifest, cfg.split, &speakers);

  BackendConfig be = cfg.backend_cfg;
  be.kind = cfg.backend;
  be.num_layers = cfg.encoder.layers + 1;
  be.input_dim = cfg.encoder.dim;
  SpeakerModel model(cfg.encoder, be, speakers, DeriveSeed(cfg.seed, 0xf17e));
  if (pre) pre->LoadParameters(model.params(), "encoder.");
  ConfigureTrainable(model, cfg.mode);

  FinetuneResult result;
  result.encoder_digest_before = ParameterDigest(model.params(), "encoder.");
  std::vector<std::pair<int, double>> curve;
  TrainSpeakerEpochs(model, utts, SettingsFrom(cfg), result, curve);
  result.encoder_digest_after = ParameterDigest(model.params(), "encoder.");

  CheckpointFile file;
  file.SetMeta(kStageKey, kStageFinetuned);
  model.Store(file);
  const KeyValueConfig run = cfg.ToKeyValue();
  StoreRunConfig(file, run);
  file.SetMeta("epochs_done", std::to_string(cfg.epochs));
  file.SetMeta(kDataKey, manifest.Name());
  file.SetMeta(kEncoderDigestKey, result.encoder_digest_after);
  if (pre) {
    file.SetMeta("pretrained_sha256", FileSha256(cfg.pretrained));
    file.SetMeta(kPretrainDataKey, pre->MetaOr(kDataKey, ""));
    file.SetMeta(kPretrainedEncoderDigestKey, result.encoder_digest_before);
  }
  result.checkpoint_path = Join(out_dir, kCheckpointFileName);
  file.Save(result.checkpoint_path);
  WriteLossCurve(curve, Join(out_dir, kLossCurveFileName));
  run.Save(Join(out_dir, kRunConfigFileName));
  return result;
}

double ClassificationAccuracy(const SpeakerModel& model, const CorpusManifest& manifest,
                              const std::string& split) {
  const auto entries = manifest.Split(split);
  if (entries.empty()) {
    throw std::invalid_argument("manifest has no utterances in split '" + split + "'");
  }
  const auto& speakers = model.speakers();
  std::vector<char> correct(entries.size(), 0);
  ParallelFor(entries.size(), [&](std::size_t i) {
    const auto it = std::find(speakers.begin(), speakers.end(), entries[i].speaker_id);
    if (it == speakers.end()) return;
    NoGradGuard no_grad;
    const Waveform wave = LoadWav(manifest.AbsolutePath(entries[i].path));
    const Tensor cos = CosineLogits(model.Embed(wave.samples, true), model.class_weights());
    std::size_t best = 0;
    for (std::size_t c = 1; c < cos.dim(1); ++c) {
      if (cos.at(0, c) > cos.at(0, best)) best = c;
    }
    correct[i] = best == static_cast<std::size_t>(it - speakers.begin());
  });
  return static_cast<double>(std::count(correct.begin(), correct.end(), 1)) /
         static_cast<double>(entries.size());
}

FinetuneResult RunLargeMarginTuning(const CorpusManifest& manifest,
                                    const std::string& checkpoint_path, const LmtConfig& lmt,
                                    const std::string& out_dir) {
  const CheckpointFile in = CheckpointFile::Load(checkpoint_path);
  const std::string stage = in.MetaOr(kStageKey, "");
  if (stage != kStageFinetuned) {
    throw std::invalid_argument(checkpoint_path + ": large-margin tuning needs stage '" +
                                std::string(kStageFinetuned) + "', found '" + stage + "'");
  }
  if (lmt.epochs < 1) throw std::invalid_argument("lmt: epochs must be >= 1");
  if (!(lmt.crop_seconds > 0.0)) throw std::invalid_argument("lmt: crop_seconds must be > 0");
  FinetuneConfig ft;
  ft.pretrained.clear();
  ft.Apply(LoadRunConfig(in));
  if (lmt.margin < ft.margin) {
    throw std::invalid_argument("lmt: margin " + FormatDouble(lmt.margin) +
                                " is below the fine-tuning margin " + FormatDouble(ft.margin));
  }
  PrepareOutDir(out_dir);
  std::vector<std::string> speakers;
  const auto utts = LoadUtterances(manifest, ft.split, &speakers);
  SpeakerModel model = SpeakerModel::Load(in);
  if (speakers != model.speakers()) {
    throw std::invalid_argument("lmt: manifest speakers differ from the checkpoint's");
  }
  ConfigureTrainable(model, ft.mode);

  EpochSettings s = SettingsFrom(ft);
  s.margin = lmt.margin;
  s.crop_seconds = lmt.crop_seconds;
  s.epochs = lmt.epochs;
  s.start_epoch = std::stoi(in.Meta("epochs_done"));
  s.seed = DeriveSeed(lmt.seed, 0x1a7);

  FinetuneResult result;
  result.encoder_digest_before = ParameterDigest(model.params(), "encoder.");
  std::vector<std::pair<int, double>> curve;
  TrainSpeakerEpochs(model, utts, s, result, curve);
  result.encoder_digest_after = ParameterDigest(model.params(), "encoder.");

  CheckpointFile file;
  file.SetMeta(kStageKey, kStageLmt);
  model.Store(file);
  KeyValueConfig run = LoadRunConfig(in);
  run.Merge(lmt.ToKeyValue());
  StoreRunConfig(file, run);
  file.SetMeta("epochs_done", std::to_string(s.start_epoch + lmt.epochs));
  file.SetMeta("finetuned_sha256", FileSha256(checkpoint_path));
  file.SetMeta(kDataKey, manifest.Name());
  file.SetMeta(kEncoderDigestKey, result.encoder_digest_after);
  for (const char* key : {kPretrainDataKey, kPretrainedEncoderDigestKey}) {
    if (in.HasMeta(key)) file.SetMeta(key, in.Meta(key));
  }
  result.checkpoint_path = Join(out_dir, kCheckpointFileName);
  file.Save(result.checkpoint_path);
  WriteLossCurve(curve, Join(out_dir, kLossCurveFileName));
  run.Save(Join(out_dir, kRunConfigFileName));
  return result;
}

}  // namespace selfsv
