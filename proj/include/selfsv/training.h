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

#ifndef SELFSV_TRAINING_H_
#define SELFSV_TRAINING_H_

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "selfsv/backend.h"
#include "selfsv/config.h"
#include "selfsv/encoder.h"
#include "selfsv/features.h"
#include "selfsv/synthcorpus.h"
#include "selfsv/targets.h"

namespace selfsv {

// ---- Learning-rate schedules ---------------------------------------------

/// Linear warmup over the first `warmup_fraction` of `total_steps`, then
/// linear decay to zero. `step` is 0-based.
double WarmupDecayLr(int step, int total_steps, double peak, double warmup_fraction);

/// peak * decay^epoch.
double EpochLr(int epoch, double peak, double decay);

/// SHA-256 over the names, shapes and values of every parameter whose name
/// starts with `prefix`.
std::string ParameterDigest(const ParameterSet& params, const std::string& prefix);

// ---- Masked-prediction pretraining ----------------------------------------

struct PretrainConfig {
  int iteration = 1;
  int steps = 3000;
  int batch_size = 4;
  double crop_seconds = 2.0;
  int k = 0;  // 0 picks kDefaultIter1Clusters / kDefaultIter2Clusters
  MaskConfig mask;
  double lr = 5e-4;
  double warmup_fraction = 0.08;
  std::uint64_t seed = 1;
  EncoderConfig encoder;
  MfccConfig mfcc;
  std::size_t frame_cap = 200000;
  int kmeans_iters = 50;
  int cluster_layer = -1;        // iteration 2; -1 = round(L / 2)
  std::string init_checkpoint;   // iteration 2: the iteration-1 checkpoint
  bool warm_start = false;       // iteration 2 starts from init_checkpoint
  std::string split = "train";

  int Clusters() const;
  void Validate() const;
  void Apply(const KeyValueConfig& kv);
  KeyValueConfig ToKeyValue() const;
};

/// Cross-entropy of `logits` [T, K] against the frame labels, restricted to
/// the `masked` frames. Unmasked rows do not influence the value or the
/// gradient.
template <typename T>
BasicTensor<T> MaskedPredictionLoss(const BasicTensor<T>& logits,
                                    std::span<const std::size_t> masked,
                                    std::span<const int> labels);

/// A waveform crop and the cluster labels of its encoder frames.
struct PretrainExample {
  std::span<const float> samples;
  std::span<const int> labels;
};

/// Encoder plus the linear projection from the final layer to K logits.
class PretrainModel {
 public:
  PretrainModel(const EncoderConfig& encoder, int k, std::uint64_t seed);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }
  int k() const { return k_; }

  /// Final-layer logits [T, K] for an encoded (possibly masked) H0.
  Tensor Logits(const Tensor& h0) const;

  /// Masks every example, predicts the masked frames and returns the mean
  /// cross-entropy over all masked frames of the batch, or nothing when no
  /// frame was masked.
  std::optional<Tensor> Loss(const std::vector<PretrainExample>& batch,
                             const MaskConfig& mask, std::uint64_t seed) const;

 private:
  PretrainModel(const EncoderConfig& encoder, int k, std::mt19937_64 rng);

  ParameterSet params_;
  Encoder encoder_;
  Tensor head_w_, head_b_;
  int k_;
};

struct PretrainResult {
  std::string checkpoint_path;
  std::vector<double> losses;  // one per applied step
  int skipped_batches = 0;
  double final_loss = 0.0;     // mean over the last tenth of the run
  int k = 0;
  TargetSet targets;
};

inline constexpr char kCheckpointFileName[] = "model.ckpt";
// Checkpoint metadata naming the corpora and encoder state behind a run.
inline constexpr char kDataKey[] = "data";
inline constexpr char kPretrainDataKey[] = "pretrain_data";
inline constexpr char kEncoderDigestKey[] = "encoder_digest";
inline constexpr char kPretrainedEncoderDigestKey[] = "pretrained_encoder_digest";
inline constexpr char kLossCurveFileName[] = "loss.csv";
inline constexpr char kRunConfigFileName[] = "run_config.txt";
inline constexpr char kCodebookFileName[] = "codebook.ckpt";
inline constexpr char kLabelsFileName[] = "labels.bin";

/// Clusters targets for the configured iteration, trains the encoder on
/// them and writes the checkpoint, codebook, labels, loss curve and run
/// config into `out_dir`.
PretrainResult RunPretraining(const CorpusManifest& manifest, const PretrainConfig& cfg,
                              const std::string& out_dir);

// ---- Speaker fine-tuning --------------------------------------------------

enum class FinetuneMode { kRandomInit, kFrozen, kLearnable };

std::string FinetuneModeName(FinetuneMode mode);
/// Accepts both "random_init" and "random-init".
FinetuneMode ParseFinetuneMode(const std::string& name);

struct FinetuneConfig {
  FinetuneMode mode = FinetuneMode::kLearnable;
  BackendKind backend = BackendKind::kMhfa;
  BackendConfig backend_cfg;  // num_layers and input_dim follow the encoder
  int epochs = 10;
  double margin = 0.2;
  double scale = 30.0;
  double lr = 5e-4;
  double lr_decay = 0.9;
  double crop_seconds = 2.0;
  int batch_size = 16;
  bool augment = true;
  AugmentConfig augmentation;
  std::uint64_t seed = 1;
  EncoderConfig encoder;       // random_init only
  std::string pretrained;      // frozen / learnable
  std::string split = "train";

  void Validate() const;
  void Apply(const KeyValueConfig& kv);
  KeyValueConfig ToKeyValue() const;
};

struct LmtConfig {
  double margin = 0.5;
  double crop_seconds = 5.0;
  int epochs = 3;
  std::uint64_t seed = 1;

  void Apply(const KeyValueConfig& kv);
  KeyValueConfig ToKeyValue() const;
};

/// Encoder, pooling back-end and AAM class weights.
class SpeakerModel {
 public:
  SpeakerModel(const EncoderConfig& encoder, const BackendConfig& backend,
               std::vector<std::string> speakers, std::uint64_t seed);

  /// Rebuilds a model saved by Save(); parameters are restored exactly.
  static SpeakerModel Load(const CheckpointFile& file);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }
  const Backend& backend() const { return backend_; }
  const Tensor& class_weights() const { return class_weights_; }
  const std::vector<std::string>& speakers() const { return speakers_; }

  /// Embedding [1, E]. With `frozen_encoder` the encoder runs without
  /// recording a graph.
  Tensor Embed(std::span<const float> samples, bool frozen_encoder = false) const;

  /// Writes configs, speakers and every parameter into `file`.
  void Store(CheckpointFile& file) const;

 private:
  SpeakerModel(const EncoderConfig& encoder, const BackendConfig& backend,
               std::vector<std::string> speakers, std::mt19937_64 rng);

  ParameterSet params_;
  Encoder encoder_;
  Backend backend_;
  Tensor class_weights_;
  std::vector<std::string> speakers_;
};

struct FinetuneResult {
  std::string checkpoint_path;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;  // argmax of margin-free cosine logits
  std::vector<double> epoch_lr;
  double margin = 0.0;
  double crop_seconds = 0.0;
  std::string encoder_digest_before;
  std::string encoder_digest_after;
};

/// Trains encoder + back-end + class weights with AAM-softmax.
FinetuneResult RunFinetune(const CorpusManifest& manifest, const FinetuneConfig& cfg,
                           const std::string& out_dir);

/// Fraction of `split` utterances whose full, unaugmented waveform is
/// closest (cosine) to its own speaker's class weight. Speakers unknown to
/// the model count as errors.
double ClassificationAccuracy(const SpeakerModel& model, const CorpusManifest& manifest,
                              const std::string& split = "train");

/// Continues a `finetuned` checkpoint with a larger margin and longer crops;
/// everything else, including the learning-rate epoch count, carries over.
FinetuneResult RunLargeMarginTuning(const CorpusManifest& manifest,
                                    const std::string& checkpoint_path,
                                    const LmtConfig& cfg, const std::string& out_dir);

}  // namespace selfsv

#endif  // SELFSV_TRAINING_H_
