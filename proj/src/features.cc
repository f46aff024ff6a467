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

#include "selfsv/features.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <mutex>
#include <numbers>
#include <random>

#include "selfsv/io.h"

namespace selfsv {

namespace {

// FFTW planning is not thread-safe; execution is.
std::mutex g_fftw_plan_mutex;

std::size_t NextPowerOfTwo(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::uint32_t ReadU32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::uint16_t ReadU16(const std::string& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    (static_cast<unsigned char>(b[at + 1]) << 8));
}

void PutU32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>(v >> (8 * i)));
}

void PutU16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

// Real-input FFT magnitude of a zero-padded frame.
class MagnitudeFft {
 public:
  explicit MagnitudeFft(std::size_t size)
      : size_(size),
        in_(fftw_alloc_real(size)),
        out_(fftw_alloc_complex(size / 2 + 1)) {
    std::lock_guard<std::mutex> lock(g_fftw_plan_mutex);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(size), in_, out_,
                                 FFTW_ESTIMATE);
  }
  ~MagnitudeFft() {
    std::lock_guard<std::mutex> lock(g_fftw_plan_mutex);
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  MagnitudeFft(const MagnitudeFft&) = delete;
  MagnitudeFft& operator=(const MagnitudeFft&) = delete;

  void Run(std::span<const double> frame, std::vector<double>& magnitude) {
    std::fill(in_, in_ + size_, 0.0);
    std::copy(frame.begin(), frame.end(), in_);
    fftw_execute(plan_);
    magnitude.resize(size_ / 2 + 1);
    for (std::size_t k = 0; k < magnitude.size(); ++k)
      magnitude[k] = std::hypot(out_[k][0], out_[k][1]);
  }

 private:
  std::size_t size_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace

Waveform LoadWav(const std::string& path, int expected_rate) {
  const std::string b = ReadFileBytes(path);
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 ||
      b.compare(8, 4, "WAVE") != 0) {
    throw AudioFormatError(path + ": not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  Waveform wave;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::uint32_t size = ReadU32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) {
      throw AudioFormatError(path + ": chunk '" + id + "' is truncated");
    }
    if (id == "fmt ") {
      if (size < 16) throw AudioFormatError(path + ": fmt chunk too small");
      const std::uint16_t format = ReadU16(b, body);
      const std::uint16_t channels = ReadU16(b, body + 2);
      const std::uint32_t rate = ReadU32(b, body + 4);
      const std::uint16_t bits = ReadU16(b, body + 14);
      if (format != 1) {
        throw AudioFormatError(path + ": audio_format is " +
                               std::to_string(format) + ", expected 1 (PCM)");
      }
      if (channels != 1) {
        throw AudioFormatError(path + ": channels is " +
                               std::to_string(channels) + ", expected 1");
      }
      if (bits != 16) {
        throw AudioFormatError(path + ": bits_per_sample is " +
                               std::to_string(bits) + ", expected 16");
      }
      if (static_cast<int>(rate) != expected_rate) {
        throw AudioFormatError(path + ": sample_rate is " +
                               std::to_string(rate) + ", expected " +
                               std::to_string(expected_rate));
      }
      wave.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw AudioFormatError(path + ": data chunk before fmt");
      const std::size_t n = size / 2;
      wave.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::int16_t>(ReadU16(b, body + 2 * i));
        wave.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return wave;
    }
    pos = body + size + (size & 1);
  }
  throw AudioFormatError(path + ": no data chunk");
}

void SaveWav(const std::string& path, const Waveform& wave) {
  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(wave.samples.size() * 2);
  std::string b;
  b.reserve(44 + data_bytes);
  b += "RIFF";
  PutU32(b, 36 + data_bytes);
  b += "WAVEfmt ";
  PutU32(b, 16);
  PutU16(b, 1);
  PutU16(b, 1);
  PutU32(b, static_cast<std::uint32_t>(wave.sample_rate));
  PutU32(b, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  PutU16(b, 2);
  PutU16(b, 16);
  b += "data";
  PutU32(b, data_bytes);
  for (float x : wave.samples) {
    const double scaled = std::nearbyint(static_cast<double>(x) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    PutU16(b, static_cast<std::uint16_t>(v));
  }
  WriteFileBytes(path, b);
}

std::size_t MfccConfig::WindowSamples(int sample_rate) const {
  return static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
}

std::size_t MfccConfig::HopSamples(int sample_rate) const {
  return static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0));
}

void MfccConfig::Validate() const {
  if (n_coeffs < 1 || n_mels < 1 || n_coeffs > n_mels) {
    throw std::invalid_argument("mfcc: need 1 <= n_coeffs <= n_mels");
  }
  if (hop_ms <= 0 || window_ms < hop_ms) {
    throw std::invalid_argument("mfcc: need 0 < hop_ms <= window_ms");
  }
  if (log_floor <= 0) throw std::invalid_argument("mfcc: log_floor must be > 0");
}

std::size_t MfccFrameCount(std::size_t num_samples, const MfccConfig& cfg,
                           int sample_rate) {
  const std::size_t window = cfg.WindowSamples(sample_rate);
  const std::size_t hop = cfg.HopSamples(sample_rate);
  if (num_samples < window) return 0;
  return 1 + (num_samples - window) / hop;
}

Matrix MelFilterbank(int n_mels, std::size_t fft_size, int sample_rate,
                     double low_freq, double high_freq) {
  const double nyquist = sample_rate / 2.0;
  if (high_freq <= 0.0) high_freq = nyquist;
  const double mel_low = HzToMel(low_freq), mel_high = HzToMel(high_freq);
  const double mel_step = (mel_high - mel_low) / (n_mels + 1);
  const std::size_t bins = fft_size / 2 + 1;
  Matrix fb(static_cast<std::size_t>(n_mels), bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = mel_low + m * mel_step;
    const double center = left + mel_step;
    const double right = center + mel_step;
    for (std::size_t k = 0; k < bins; ++k) {
      const double mel = HzToMel(static_cast<double>(k) * sample_rate / fft_size);
      double w = 0.0;
      if (mel > left && mel <= center) {
        w = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        w = (right - mel) / (right - center);
      }
      fb(static_cast<std::size_t>(m), k) = static_cast<float>(w);
    }
  }
  return fb;
}

Matrix ComputeDeltas(const Matrix& f) {
  Matrix d(f.rows, f.cols);
  const long last = static_cast<long>(f.rows) - 1;
  auto clamp_row = [last](long r) { return static_cast<std::size_t>(std::clamp(r, 0L, last)); };
  for (std::size_t t = 0; t < f.rows; ++t) {
    for (std::size_t c = 0; c < f.cols; ++c) {
      double acc = 0.0;
      for (long n = 1; n <= 2; ++n) {
        acc += n * (static_cast<double>(f(clamp_row(long(t) + n), c)) -
                    f(clamp_row(long(t) - n), c));
      }
      d(t, c) = static_cast<float>(acc / 10.0);  // 2 * (1^2 + 2^2)
    }
  }
  return d;
}

FrameMatrix Mfcc(const Waveform& wave, const MfccConfig& cfg) {
  cfg.Validate();
  const int sr = wave.sample_rate;
  const std::size_t window = cfg.WindowSamples(sr);
  const std::size_t hop = cfg.HopSamples(sr);
  const std::size_t frames = MfccFrameCount(wave.samples.size(), cfg, sr);
  if (frames == 0) {
    throw std::invalid_argument("mfcc: " + std::to_string(wave.samples.size()) +
                                " samples is shorter than one " +
                                std::to_string(window) + "-sample window");
  }
  const std::size_t fft_size = NextPowerOfTwo(window);
  const Matrix fb = MelFilterbank(cfg.n_mels, fft_size, sr, cfg.low_freq,
                                  cfg.high_freq);
  std::vector<double> hamming(window);
  for (std::size_t n = 0; n < window; ++n) {
    hamming[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (window - 1));
  }
  const std::size_t n_mels = static_cast<std::size_t>(cfg.n_mels);
  const std::size_t n_coeffs = static_cast<std::size_t>(cfg.n_coeffs);
  Matrix dct(n_coeffs, n_mels);
  for (std::size_t k = 0; k < n_coeffs; ++k) {
    const double norm = std::sqrt((k == 0 ? 1.0 : 2.0) / n_mels);
    for (std::size_t m = 0; m < n_mels; ++m) {
      dct(k, m) = static_cast<float>(
          norm * std::cos(std::numbers::pi * k * (m + 0.5) / n_mels));
    }
  }

  MagnitudeFft fft(fft_size);
  Matrix cep(frames, n_coeffs);
  std::vector<double> frame(window), magnitude, log_mel(n_mels);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* src = wave.samples.data() + t * hop;
    for (std::size_t n = 0; n < window; ++n) frame[n] = src[n];
    for (std::size_t n = window - 1; n > 0; --n) frame[n] -= cfg.preemphasis * frame[n - 1];
    frame[0] -= cfg.preemphasis * frame[0];
    for (std::size_t n = 0; n < window; ++n) frame[n] *= hamming[n];
    fft.Run(frame, magnitude);
    for (std::size_t m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < magnitude.size(); ++k) e += fb(m, k) * magnitude[k];
      log_mel[m] = std::log(std::max(e, cfg.log_floor));
    }
    for (std::size_t k = 0; k < n_coeffs; ++k) {
      double acc = 0.0;
      for (std::size_t m = 0; m < n_mels; ++m) acc += dct(k, m) * log_mel[m];
      cep(t, k) = static_cast<float>(acc);
    }
  }

  FrameMatrix out;
  out.frame_rate = static_cast<double>(sr) / hop;
  if (!cfg.use_deltas) {
    out.frames = std::move(cep);
    return out;
  }
  const Matrix d1 = ComputeDeltas(cep);
  const Matrix d2 = ComputeDeltas(d1);
  out.frames = Matrix(frames, 3 * n_coeffs);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < n_coeffs; ++k) {
      out.frames(t, k) = cep(t, k);
      out.frames(t, n_coeffs + k) = d1(t, k);
      out.frames(t, 2 * n_coeffs + k) = d2(t, k);
    }
  }
  return out;
}

double MeanPower(std::span<const float> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (float x : samples) acc += static_cast<double>(x) * x;
  return acc / static_cast<double>(samples.size());
}

double NoiseScaleForSnr(double signal_power, double noise_power,
                        double snr_db) {
  return std::sqrt(signal_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

Waveform AddNoiseSnr(const Waveform& wave, const Waveform& noise,
                     double snr_db, std::uint64_t seed) {
  if (noise.sample_rate != wave.sample_rate) {
    throw std::invalid_argument("add_noise_snr: noise rate " +
                                std::to_string(noise.sample_rate) +
                                " differs from signal rate " +
                                std::to_string(wave.sample_rate));
  }
  if (std::isinf(snr_db) && snr_db > 0) return wave;
  const double ps = MeanPower(wave.samples);
  if (ps == 0.0) throw std::invalid_argument("add_noise_snr: signal is silent");
  if (noise.samples.empty()) throw std::invalid_argument("add_noise_snr: empty noise");
  const std::size_t n = wave.samples.size();
  std::mt19937_64 rng(seed);
  const std::size_t offset = std::uniform_int_distribution<std::size_t>(
      0, noise.samples.size() - 1)(rng);
  std::vector<float> segment(n);
  for (std::size_t i = 0; i < n; ++i)
    segment[i] = noise.samples[(offset + i) % noise.samples.size()];
  const double pn = MeanPower(segment);
  if (pn == 0.0) throw std::invalid_argument("add_noise_snr: noise is silent");
  const double scale = NoiseScaleForSnr(ps, pn, snr_db);
  Waveform out{std::vector<float>(n), wave.sample_rate};
  for (std::size_t i = 0; i < n; ++i) {
    const double v = wave.samples[i] + scale * segment[i];
    out.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

std::vector<float> ReverbImpulseResponse(double rt60_s, int sample_rate,
                                         std::uint64_t seed) {
  if (!(rt60_s > 0.0)) throw std::invalid_argument("synth_reverb: rt60 must be > 0");
  const double rt60_samples = rt60_s * sample_rate;
  const std::size_t length = static_cast<std::size_t>(std::floor(rt60_samples)) + 1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<float> h(length);
  h[0] = 1.0f;
  const double decay = std::log(1000.0) / rt60_samples;  // -60 dB in amplitude
  for (std::size_t n = 1; n < length; ++n) {
    h[n] = static_cast<float>(gauss(rng) * std::exp(-decay * n));
  }
  return h;
}

std::vector<double> FftConvolve(std::span<const float> a,
                                std::span<const float> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = NextPowerOfTwo(out_len);
  double* buf = fftw_alloc_real(n);
  fftw_complex* fa = fftw_alloc_complex(n / 2 + 1);
  fftw_complex* fb = fftw_alloc_complex(n / 2 + 1);
  fftw_plan forward_a, forward_b, inverse;
  {
    std::lock_guard<std::mutex> lock(g_fftw_plan_mutex);
    forward_a = fftw_plan_dft_r2c_1d(static_cast<int>(n), buf, fa, FFTW_ESTIMATE);
    forward_b = fftw_plan_dft_r2c_1d(static_cast<int>(n), buf, fb, FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(static_cast<int>(n), fa, buf, FFTW_ESTIMATE);
  }
  std::fill(buf, buf + n, 0.0);
  std::copy(a.begin(), a.end(), buf);
  fftw_execute(forward_a);
  std::fill(buf, buf + n, 0.0);
  std::copy(b.begin(), b.end(), buf);
  fftw_execute(forward_b);
  for (std::size_t k = 0; k < n / 2 + 1; ++k) {
    const std::complex<double> p =
        std::complex<double>(fa[k][0], fa[k][1]) * std::complex<double>(fb[k][0], fb[k][1]);
    fa[k][0] = p.real();
    fa[k][1] = p.imag();
  }
  fftw_execute(inverse);
  std::vector<double> out(buf, buf + out_len);
  for (auto& v : out) v /= static_cast<double>(n);
  {
    std::lock_guard<std::mutex> lock(g_fftw_plan_mutex);
    fftw_destroy_plan(forward_a);
    fftw_destroy_plan(forward_b);
    fftw_destroy_plan(inverse);
  }
  fftw_free(buf);
  fftw_free(fa);
  fftw_free(fb);
  return out;
}

Waveform SynthReverb(const Waveform& wave, double rt60_s, std::uint64_t seed) {
  const std::vector<float> h = ReverbImpulseResponse(rt60_s, wave.sample_rate, seed);
  if (wave.samples.empty()) return wave;
  std::vector<double> wet = FftConvolve(wave.samples, h);
  wet.resize(wave.samples.size());
  double in_peak = 0.0, out_peak = 0.0;
  for (float x : wave.samples) in_peak = std::max(in_peak, std::abs(double(x)));
  for (double y : wet) out_peak = std::max(out_peak, std::abs(y));
  const double gain = out_peak > 0.0 ? in_peak / out_peak : 0.0;
  Waveform out{std::vector<float>(wet.size()), wave.sample_rate};
  for (std::size_t i = 0; i < wet.size(); ++i)
    out.samples[i] = static_cast<float>(wet[i] * gain);
  return out;
}

std::size_t RandomCropOffset(std::size_t input_length, std::size_t crop_length,
                             std::uint64_t seed) {
  if (input_length == 0) throw std::invalid_argument("random_crop: empty input");
  if (crop_length == input_length) return 0;
  std::mt19937_64 rng(seed);
  const std::size_t hi =
      crop_length < input_length ? input_length - crop_length : input_length - 1;
  return std::uniform_int_distribution<std::size_t>(0, hi)(rng);
}

Waveform RandomCrop(const Waveform& wave, double seconds, std::uint64_t seed) {
  const std::size_t n = wave.samples.size();
  const auto length =
      static_cast<std::size_t>(std::lround(seconds * wave.sample_rate));
  if (length == 0) throw std::invalid_argument("random_crop: zero-length crop");
  const std::size_t offset = RandomCropOffset(n, length, seed);
  Waveform out{std::vector<float>(length), wave.sample_rate};
  for (std::size_t i = 0; i < length; ++i)
    out.samples[i] = wave.samples[(offset + i) % n];
  return out;
}

Augmenter::Augmenter(AugmentConfig cfg, std::vector<Waveform> noise_bank)
    : cfg_(cfg), noise_bank_(std::move(noise_bank)) {
  if (noise_bank_.empty()) throw std::invalid_argument("augmenter: empty noise bank");
}

Waveform Augmenter::Apply(const Waveform& wave, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) >= cfg_.apply_prob) return wave;
  const bool use_noise = unit(rng) < 0.5;
  const std::uint64_t sub_seed = rng();
  if (use_noise) {
    if (MeanPower(wave.samples) == 0.0) return wave;
    const auto& noise = noise_bank_[std::uniform_int_distribution<std::size_t>(
        0, noise_bank_.size() - 1)(rng)];
    const double snr = cfg_.snr_min_db + (cfg_.snr_max_db - cfg_.snr_min_db) * unit(rng);
    return AddNoiseSnr(wave, noise, snr, sub_seed);
  }
  const double rt60 = cfg_.rt60_min_s + (cfg_.rt60_max_s - cfg_.rt60_min_s) * unit(rng);
  return SynthReverb(wave, rt60, sub_seed);
}

}  // namespace selfsv
