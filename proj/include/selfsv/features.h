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

#ifndef SELFSV_FEATURES_H_
#define SELFSV_FEATURES_H_

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfsv {

constexpr int kDefaultSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kDefaultSampleRate;

  double seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Dense row-major real matrix for non-differentiable numerics
/// (features, clustering, embeddings).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), data(r * c, fill) {}

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<const float> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

struct FrameMatrix {
  Matrix frames;  // T x D
  double frame_rate = 100.0;
};

class AudioFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- WAV I/O: RIFF PCM 16-bit mono little-endian -------------------------

/// Reads a PCM16 mono WAV; samples are scaled by 1/32768. Any other layout
/// raises AudioFormatError naming the offending header field.
Waveform LoadWav(const std::string& path,
                 int expected_rate = kDefaultSampleRate);
/// Writes samples as PCM16, clipping to [-1, 1) and rounding to nearest.
void SaveWav(const std::string& path, const Waveform& wave);

// ---- MFCC -----------------------------------------------------------------

struct MfccConfig {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 24;
  int n_coeffs = 13;
  bool use_deltas = true;
  double log_floor = 1e-10;
  double preemphasis = 0.97;
  double low_freq = 20.0;
  double high_freq = 0.0;  // 0 means Nyquist

  std::size_t WindowSamples(int sample_rate) const;
  std::size_t HopSamples(int sample_rate) const;
  std::size_t Dimension() const {
    return static_cast<std::size_t>(n_coeffs) * (use_deltas ? 3 : 1);
  }
  void Validate() const;
};

/// Frame count for `num_samples`: 1 + floor((N - window) / hop).
std::size_t MfccFrameCount(std::size_t num_samples, const MfccConfig& cfg,
                           int sample_rate);

/// Pre-emphasis, Hamming window, magnitude FFT, mel filterbank, floored
/// log, orthonormal DCT-II truncated to n_coeffs, optional deltas.
FrameMatrix Mfcc(const Waveform& wave, const MfccConfig& cfg = {});

/// Triangular mel filters over the rfft bins, [n_mels x (fft_size/2 + 1)].
Matrix MelFilterbank(int n_mels, std::size_t fft_size, int sample_rate,
                     double low_freq, double high_freq);

/// Regression deltas with a +-2 frame window and edge replication.
Matrix ComputeDeltas(const Matrix& features);

// ---- Augmentation -------------------------------------------------------

constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Mixes looped/cropped noise at the requested SNR (dB). `snr_db` of
/// +infinity returns the input unchanged. Output is clipped to [-1, 1].
Waveform AddNoiseSnr(const Waveform& wave, const Waveform& noise,
                     double snr_db, std::uint64_t seed);

/// Noise gain that puts `noise` at `snr_db` below `signal` (power ratio).
double NoiseScaleForSnr(double signal_power, double noise_power, double snr_db);

double MeanPower(std::span<const float> samples);

/// Exponentially decaying white-noise impulse response whose amplitude
/// envelope falls by 60 dB after rt60 seconds. h[0] = 1 (direct path).
std::vector<float> ReverbImpulseResponse(double rt60_s, int sample_rate,
                                         std::uint64_t seed);

/// Convolves with ReverbImpulseResponse, truncates to the input length and
/// rescales so the output peak equals the input peak.
Waveform SynthReverb(const Waveform& wave, double rt60_s, std::uint64_t seed);

/// Full linear convolution via FFT (length a.size() + b.size() - 1).
std::vector<double> FftConvolve(std::span<const float> a,
                                std::span<const float> b);

/// Contiguous crop; shorter inputs are padded by wrapping around.
Waveform RandomCrop(const Waveform& wave, double seconds, std::uint64_t seed);
/// Crop offset RandomCrop would use for these arguments.
std::size_t RandomCropOffset(std::size_t input_length, std::size_t crop_length,
                             std::uint64_t seed);

struct AugmentConfig {
  double apply_prob = 0.6;
  double snr_min_db = 0.0;
  double snr_max_db = 15.0;
  double rt60_min_s = 0.1;
  double rt60_max_s = 0.5;
};

/// Seeded noise-or-reverb corruption drawn from a noise bank.
class Augmenter {
 public:
  Augmenter(AugmentConfig cfg, std::vector<Waveform> noise_bank);
  Waveform Apply(const Waveform& wave, std::uint64_t seed) const;
  const AugmentConfig& config() const { return cfg_; }

 private:
  AugmentConfig cfg_;
  std::vector<Waveform> noise_bank_;
};

}  // namespace selfsv

#endif  // SELFSV_FEATURES_H_
