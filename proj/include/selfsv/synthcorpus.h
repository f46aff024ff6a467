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

#ifndef SELFSV_SYNTHCORPUS_H_
#define SELFSV_SYNTHCORPUS_H_

#include <cstdint>
#include <string>
#include <vector>

#include "selfsv/features.h"

namespace selfsv {

struct SpeakerProfile {
  std::string speaker_id;
  double f0_base = 150.0;  // Hz, 90-260
  // Gains of the speaker's fixed resonant filter, one per resonance.
  std::vector<double> formant_gains;
  // Centre frequencies (Hz) of that filter.
  std::vector<double> formant_freqs;
  double vocal_tract_scale = 1.0;  // multiplies the shared vowel formants
  double spectral_tilt = 0.5;      // one-pole lowpass coefficient
  double breathiness = 0.05;       // aspiration noise relative to voicing
  double jitter = 0.01;            // per-period relative F0 perturbation
};

/// Deterministic in (corpus_seed, index).
SpeakerProfile MakeSpeakerProfile(std::uint64_t corpus_seed, int index);

/// Speech-like audio: jittered harmonic excitation through time-varying
/// vowel resonators and the speaker's fixed filter, with pauses, syllabic
/// amplitude modulation and a low noise floor. Peak-normalized to 0.9.
Waveform GenerateUtterance(const SpeakerProfile& profile, double seconds,
                           std::uint64_t seed);

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  std::string speaker_id;
  std::string split;  // "train" or "eval"
};

struct CorpusManifest {
  std::string root;  // directory holding manifest.tsv
  std::uint64_t corpus_seed = 0;
  std::vector<ManifestEntry> entries;

  std::string AbsolutePath(const std::string& relative) const;
  /// Final component of `root` ("corpus" when root is empty).
  std::string Name() const;
  std::vector<ManifestEntry> Split(const std::string& split) const;
};

constexpr const char* kManifestFileName = "manifest.tsv";

void SaveManifest(const CorpusManifest& manifest, const std::string& path);
/// Reads `<rel_path>\t<speaker>\t<split>` lines; root becomes the file's
/// directory.
CorpusManifest LoadManifest(const std::string& path);

struct CorpusConfig {
  int train_speakers = 20;
  int train_utts = 20;
  int eval_speakers = 10;
  int eval_utts = 10;
  double seconds = 4.0;
  std::uint64_t seed = 1;
};

/// Writes wav/<spk>/<spk>_<utt>.wav plus manifest.tsv under out_dir.
/// Eval speakers never appear in the train split.
CorpusManifest GenerateCorpus(const CorpusConfig& cfg,
                              const std::string& out_dir);
/// All speakers in the train split.
CorpusManifest GenerateCorpus(int n_speakers, int utts_per_speaker,
                              double seconds, std::uint64_t seed,
                              const std::string& out_dir);

struct Trial {
  bool target = false;
  std::string path_a;
  std::string path_b;
};

using TrialList = std::vector<Trial>;

/// Samples distinct utterance pairs without replacement from the entries of
/// `split` (every entry when `split` is empty). Throws when the pool cannot
/// supply the requested counts.
TrialList WriteTrials(const CorpusManifest& manifest, int n_target,
                      int n_nontarget, std::uint64_t seed,
                      const std::string& split = "eval");

/// Number of same-speaker and different-speaker pairs available.
std::pair<std::size_t, std::size_t> AvailableTrialPairs(
    const CorpusManifest& manifest, const std::string& split);

void SaveTrials(const TrialList& trials, const std::string& path);
TrialList LoadTrials(const std::string& path);

/// White noise plus babble mixed from random synthetic talkers.
std::vector<Waveform> DefaultNoiseBank(std::uint64_t seed,
                                       double seconds = 4.0);

}  // namespace selfsv

#endif  // SELFSV_SYNTHCORPUS_H_
