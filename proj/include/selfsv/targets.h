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

#ifndef SELFSV_TARGETS_H_
#define SELFSV_TARGETS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "selfsv/encoder.h"
#include "selfsv/features.h"
#include "selfsv/synthcorpus.h"

namespace selfsv {

struct Codebook {
  Matrix centroids;                 // K x D
  std::string feature_kind = "mfcc";  // or "latent:<layer>"

  std::size_t k() const { return centroids.rows; }
  std::size_t dim() const { return centroids.cols; }

  void Save(const std::string& path) const;
  static Codebook Load(const std::string& path);
};

struct KMeansResult {
  Codebook codebook;
  std::vector<int> labels;         // final assignment of the fitted points
  std::vector<double> objective;   // after each assignment step
  int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. Empty clusters take the point farthest
/// from its centroid.
KMeansResult KMeansFit(const Matrix& points, int k, int max_iters,
                       std::uint64_t seed);

/// Nearest centroid per row (squared Euclidean, ties to the lowest index).
std::vector<int> KMeansAssign(const Matrix& points, const Codebook& codebook);

/// Sum of squared distances to the assigned centroids.
double KMeansObjective(const Matrix& points, const Matrix& centroids,
                       std::span<const int> labels);

struct LabelSequence {
  std::string utterance_path;  // as listed in the manifest
  std::vector<int> labels;     // one per encoder frame
};

struct TargetSet {
  Codebook codebook;
  std::vector<LabelSequence> sequences;
  std::vector<double> objective;
};

/// Labels file: text header with K and per-utterance offsets followed by a
/// little-endian int32 payload.
void SaveLabels(const std::vector<LabelSequence>& sequences, int k,
                const std::string& path);
std::vector<LabelSequence> LoadLabels(const std::string& path, int* k = nullptr);

inline constexpr int kDefaultIter1Clusters = 32;
inline constexpr int kDefaultIter2Clusters = 64;

struct TargetsConfig {
  int k = kDefaultIter1Clusters;
  std::uint64_t seed = 1;
  std::size_t frame_cap = 200000;
  int max_iters = 50;
  std::string split = "train";
};

/// Maps each encoder frame centre to the MFCC frame with the nearest centre.
std::vector<std::size_t> AlignFramesToEncoder(std::size_t num_samples,
                                              const MfccConfig& mfcc,
                                              const EncoderConfig& encoder,
                                              int sample_rate);

/// Picks at most `cap` row indices out of `n` by seeded stride subsampling.
std::vector<std::size_t> SubsampleRows(std::size_t n, std::size_t cap,
                                       std::uint64_t seed);

/// First iteration: clusters MFCC frames and labels every utterance of the
/// split at the encoder frame rate.
TargetSet BuildTargetsIter1(const CorpusManifest& manifest, const MfccConfig& mfcc,
                            const EncoderConfig& encoder, const TargetsConfig& cfg);

/// Layer used for re-clustering when none is given: round(L / 2).
int DefaultClusterLayer(int layers);

/// Second iteration: clusters layer `layer` outputs of a first-iteration
/// checkpoint. `layer` < 0 selects DefaultClusterLayer.
TargetSet BuildTargetsIter2(const CorpusManifest& manifest,
                            const std::string& checkpoint_path, int layer,
                            const TargetsConfig& cfg);

/// Fraction of frames whose label in `b` disagrees with the majority label
/// of `a` observed for that `b` cluster. Zero when `b` is a relabelling or
/// refinement of `a`, so arbitrary cluster numbering does not count.
double LabelDisagreement(const std::vector<LabelSequence>& a,
                         const std::vector<LabelSequence>& b);

}  // namespace selfsv

#endif  // SELFSV_TARGETS_H_
