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

#include "selfsv/synthcorpus.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "selfsv/io.h"

namespace selfsv {

namespace {

namespace fs = std::filesystem;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Shared vowel inventory (F1, F2, F3 in Hz) for an average vocal tract.
constexpr std::array<std::array<double, 3>, 8> kVowels = {{
    {730, 1090, 2440},
    {270, 2290, 3010},
    {300, 870, 2240},
    {530, 1840, 2480},
    {570, 840, 2410},
    {660, 1720, 2410},
    {490, 1350, 1690},
    {520, 1190, 2390},
}};
constexpr std::array<double, 4> kFormantBandwidths = {160, 200, 280, 400};
constexpr double kFourthFormant = 3500.0;
constexpr std::array<double, 6> kSpeakerResonanceCenters = {350,  800,  1400,
                                                            2100, 3000, 4200};

// Two-pole resonator with unity DC gain (cascade formant synthesis).
struct Resonator {
  double a1 = 0, a2 = 0, b0 = 1, y1 = 0, y2 = 0;

  void Set(double freq, double bandwidth, double fs) {
    const double r = std::exp(-std::numbers::pi * bandwidth / fs);
    a1 = 2.0 * r * std::cos(kTwoPi * freq / fs);
    a2 = -r * r;
    b0 = 1.0 - a1 - a2;
  }
  double Step(double x) {
    const double y = b0 * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

// Two-pole bandpass with roughly unit gain at the centre frequency.
struct Bandpass {
  double a1 = 0, a2 = 0, g = 0, x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  Bandpass(double freq, double bandwidth, double fs) {
    const double r = std::exp(-std::numbers::pi * bandwidth / fs);
    a1 = 2.0 * r * std::cos(kTwoPi * freq / fs);
    a2 = -r * r;
    g = (1.0 - r * r) / 2.0;
  }
  double Step(double x) {
    const double y = g * (x - x2) + a1 * y1 + a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::string SpeakerName(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "spk%03d", index);
  return buf;
}

void PeakNormalize(std::vector<double>& y, double peak) {
  double m = 0.0;
  for (double v : y) m = std::max(m, std::abs(v));
  if (m > 0.0) {
    for (double& v : y) v *= peak / m;
  }
}

}  // namespace

SpeakerProfile MakeSpeakerProfile(std::uint64_t corpus_seed, int index) {
  std::mt19937_64 rng(DeriveSeed(corpus_seed, 0x5be4u, static_cast<std::uint64_t>(index)));
  SpeakerProfile p;
  p.speaker_id = SpeakerName(index);
  p.f0_base = Uniform(rng, 90.0, 260.0);
  p.vocal_tract_scale = Uniform(rng, 0.78, 1.28);
  for (double c : kSpeakerResonanceCenters) {
    p.formant_freqs.push_back(c * Uniform(rng, 0.85, 1.15));
    p.formant_gains.push_back(Uniform(rng, 0.0, 6.0));
  }
  p.spectral_tilt = Uniform(rng, 0.05, 0.9);
  p.breathiness = Uniform(rng, 0.02, 0.15);
  p.jitter = Uniform(rng, 0.005, 0.02);
  return p;
}

Waveform GenerateUtterance(const SpeakerProfile& profile, double seconds,
                           std::uint64_t seed) {
  if (!(seconds >= 1.0 && seconds <= 20.0)) {
    throw std::invalid_argument("generate_utterance: seconds must be in [1, 20], got " +
                                std::to_string(seconds));
  }
  const double fs = kDefaultSampleRate;
  const auto n = static_cast<std::size_t>(std::lround(seconds * fs));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Segment plan: per-sample vowel index, or -1 for a pause. Phrases of a
  // few phones are separated by short pauses.
  std::vector<int> plan(n, -1);
  int phones_left = std::uniform_int_distribution<int>(4, 7)(rng);
  for (std::size_t t = 0; t < n;) {
    const bool pause = phones_left == 0;
    const double dur_ms = pause ? Uniform(rng, 120, 180) : Uniform(rng, 50, 150);
    const auto len = static_cast<std::size_t>(dur_ms * fs / 1000.0);
    const int vowel = pause ? -1
                            : std::uniform_int_distribution<int>(
                                  0, static_cast<int>(kVowels.size()) - 1)(rng);
    for (std::size_t i = t; i < std::min(n, t + len); ++i) plan[i] = vowel;
    t += len;
    phones_left = pause ? std::uniform_int_distribution<int>(4, 7)(rng) : phones_left - 1;
  }

  const double am_rate = Uniform(rng, 3.0, 6.0);
  const double am_phase = Uniform(rng, 0.0, kTwoPi);
  const double f0_rate = Uniform(rng, 0.3, 1.2);
  const double f0_phase = Uniform(rng, 0.0, kTwoPi);

  std::array<Resonator, 4> formants;
  std::array<double, 4> current = {500, 1500, 2500, kFourthFormant};
  std::vector<Bandpass> speaker_filter;
  for (std::size_t i = 0; i < profile.formant_freqs.size(); ++i)
    speaker_filter.emplace_back(profile.formant_freqs[i], 250.0, fs);

  const double formant_smooth = 1.0 - std::exp(-1.0 / (0.015 * fs));
  const double voicing_smooth = 1.0 - std::exp(-1.0 / (0.010 * fs));
  double voicing = 0.0, phase = 0.0, tilt_state = 0.0;
  double jitter_factor = 1.0;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const int vowel = plan[i];
    if (vowel >= 0) {
      for (int k = 0; k < 3; ++k) {
        const double target = kVowels[vowel][k] * profile.vocal_tract_scale;
        current[k] += formant_smooth * (target - current[k]);
      }
    }
    current[3] = kFourthFormant * profile.vocal_tract_scale;
    if (i % 32 == 0) {
      for (int k = 0; k < 4; ++k)
        formants[k].Set(std::min(current[k], 0.45 * fs), kFormantBandwidths[k], fs);
    }
    voicing += voicing_smooth * ((vowel >= 0 ? 1.0 : 0.0) - voicing);

    const double f0 = profile.f0_base *
                      (1.0 + 0.08 * std::sin(kTwoPi * f0_rate * t + f0_phase) -
                       0.1 * t / seconds) *
                      jitter_factor;
    phase += f0 / fs;
    if (phase >= 1.0) {
      phase -= 1.0;
      jitter_factor = 1.0 + profile.jitter * gauss(rng);
    }
    const double pulse = 1.0 - 2.0 * phase;
    // Pauses keep faint breath noise through the same vocal tract.
    double x = voicing * pulse +
               (voicing * profile.breathiness + (1.0 - voicing) * 0.05) * gauss(rng);
    tilt_state = (1.0 - profile.spectral_tilt) * x + profile.spectral_tilt * tilt_state;
    x = tilt_state;
    for (auto& f : formants) x = f.Step(x);
    double shaped = x;
    for (std::size_t k = 0; k < speaker_filter.size(); ++k)
      shaped += profile.formant_gains[k] * speaker_filter[k].Step(x);
    const double am = 1.0 + 0.35 * std::sin(kTwoPi * am_rate * t + am_phase);
    y[i] = shaped * am;
  }
  PeakNormalize(y, 1.0);
  for (double& v : y) v += 0.002 * gauss(rng);
  PeakNormalize(y, 0.9);

  Waveform out;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(y[i]);
  return out;
}

std::string CorpusManifest::AbsolutePath(const std::string& relative) const {
  if (fs::path(relative).is_absolute() || root.empty()) return relative;
  return (fs::path(root) / relative).string();
}

std::string CorpusManifest::Name() const {
  fs::path p = fs::path(root).lexically_normal();
  if (!p.has_filename()) p = p.parent_path();
  const std::string name = p.filename().string();
  return name.empty() || name == "." ? "corpus" : name;
}

std::vector<ManifestEntry> CorpusManifest::Split(const std::string& split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (split.empty() || e.split == split) out.push_back(e);
  }
  return out;
}

void SaveManifest(const CorpusManifest& manifest, const std::string& path) {
  std::string text;
  for (const auto& e : manifest.entries)
    text += e.path + "\t" + e.speaker_id + "\t" + e.split + "\n";
  WriteFileBytes(path, text);
}

CorpusManifest LoadManifest(const std::string& path) {
  CorpusManifest m;
  m.root = fs::path(path).parent_path().string();
  std::istringstream in(ReadFileBytes(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = SplitString(line, '\t');
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected <path>\\t<speaker>\\t<split>");
    }
    m.entries.push_back({fields[0], fields[1], fields[2]});
  }
  return m;
}

CorpusManifest GenerateCorpus(const CorpusConfig& cfg,
                              const std::string& out_dir) {
  if (cfg.train_speakers < 0 || cfg.eval_speakers < 0 || cfg.train_utts < 0 ||
      cfg.eval_utts < 0 || cfg.train_speakers + cfg.eval_speakers == 0) {
    throw std::invalid_argument("generate_corpus: need a positive speaker count");
  }
  CorpusManifest m;
  m.root = out_dir;
  m.corpus_seed = cfg.seed;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error(out_dir + ": " + ec.message());
  const int total = cfg.train_speakers + cfg.eval_speakers;
  for (int s = 0; s < total; ++s) {
    const bool train = s < cfg.train_speakers;
    const SpeakerProfile profile = MakeSpeakerProfile(cfg.seed, s);
    const int utts = train ? cfg.train_utts : cfg.eval_utts;
    const fs::path dir = fs::path("wav") / profile.speaker_id;
    fs::create_directories(fs::path(out_dir) / dir, ec);
    if (ec) throw std::runtime_error((fs::path(out_dir) / dir).string() + ": " + ec.message());
    for (int u = 0; u < utts; ++u) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03d.wav", profile.speaker_id.c_str(), u);
      const std::string rel = (dir / name).string();
      const Waveform w = GenerateUtterance(
          profile, cfg.seconds,
          DeriveSeed(cfg.seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(u) + 1));
      SaveWav(m.AbsolutePath(rel), w);
      m.entries.push_back({rel, profile.speaker_id, train ? "train" : "eval"});
    }
  }
  SaveManifest(m, (fs::path(out_dir) / kManifestFileName).string());
  return m;
}

CorpusManifest GenerateCorpus(int n_speakers, int utts_per_speaker,
                              double seconds, std::uint64_t seed,
                              const std::string& out_dir) {
  CorpusConfig cfg;
  cfg.train_speakers = n_speakers;
  cfg.train_utts = utts_per_speaker;
  cfg.eval_speakers = 0;
  cfg.eval_utts = 0;
  cfg.seconds = seconds;
  cfg.seed = seed;
  return GenerateCorpus(cfg, out_dir);
}

namespace {

struct PairPools {
  std::vector<std::pair<std::size_t, std::size_t>> same, different;
};

PairPools EnumeratePairs(const std::vector<ManifestEntry>& pool) {
  PairPools p;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      if (pool[i].path == pool[j].path) continue;
      (pool[i].speaker_id == pool[j].speaker_id ? p.same : p.different)
          .emplace_back(i, j);
    }
  }
  return p;
}

}  // namespace

std::pair<std::size_t, std::size_t> AvailableTrialPairs(
    const CorpusManifest& manifest, const std::string& split) {
  const PairPools p = EnumeratePairs(manifest.Split(split));
  return {p.same.size(), p.different.size()};
}

TrialList WriteTrials(const CorpusManifest& manifest, int n_target,
                      int n_nontarget, std::uint64_t seed,
                      const std::string& split) {
  if (n_target < 0 || n_nontarget < 0) {
    throw std::invalid_argument("write_trials: counts must be non-negative");
  }
  const std::vector<ManifestEntry> pool = manifest.Split(split);
  PairPools pairs = EnumeratePairs(pool);
  const std::string where = split.empty() ? "manifest" : "split '" + split + "'";
  if (static_cast<std::size_t>(n_target) > pairs.same.size()) {
    throw std::invalid_argument("write_trials: " + std::to_string(n_target) +
                                " target trials requested but " + where + " has only " +
                                std::to_string(pairs.same.size()) + " same-speaker pairs");
  }
  if (static_cast<std::size_t>(n_nontarget) > pairs.different.size()) {
    throw std::invalid_argument("write_trials: " + std::to_string(n_nontarget) +
                                " nontarget trials requested but " + where + " has only " +
                                std::to_string(pairs.different.size()) +
                                " different-speaker pairs");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.same.begin(), pairs.same.end(), rng);
  std::shuffle(pairs.different.begin(), pairs.different.end(), rng);
  TrialList trials;
  auto emit = [&](const std::pair<std::size_t, std::size_t>& ij, bool target) {
    // Randomize which side of the pair comes first.
    const bool swap = (rng() & 1u) != 0;
    const auto& a = pool[swap ? ij.second : ij.first];
    const auto& b = pool[swap ? ij.first : ij.second];
    trials.push_back({target, a.path, b.path});
  };
  for (int i = 0; i < n_target; ++i) emit(pairs.same[i], true);
  for (int i = 0; i < n_nontarget; ++i) emit(pairs.different[i], false);
  std::shuffle(trials.begin(), trials.end(), rng);
  return trials;
}

void SaveTrials(const TrialList& trials, const std::string& path) {
  std::string text;
  for (const auto& t : trials)
    text += std::string(t.target ? "1" : "0") + " " + t.path_a + " " + t.path_b + "\n";
  WriteFileBytes(path, text);
}

TrialList LoadTrials(const std::string& path) {
  std::istringstream in(ReadFileBytes(path));
  std::string line;
  TrialList trials;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = SplitString(line, ' ');
    if (f.size() != 3 || (f[0] != "0" && f[0] != "1") || f[1].empty() || f[2].empty()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected '<0|1> <path_a> <path_b>'");
    }
    trials.push_back({f[0] == "1", f[1], f[2]});
  }
  return trials;
}

std::vector<Waveform> DefaultNoiseBank(std::uint64_t seed, double seconds) {
  const auto n = static_cast<std::size_t>(std::lround(seconds * kDefaultSampleRate));
  std::mt19937_64 rng(DeriveSeed(seed, 0x401eu));
  std::normal_distribution<double> gauss(0.0, 0.3);
  std::vector<Waveform> bank;

  std::vector<double> white(n);
  for (double& v : white) v = gauss(rng);
  PeakNormalize(white, 0.9);

  std::vector<std::vector<double>> noises = {white};
  for (int b = 0; b < 2; ++b) {
    std::vector<double> babble(n, 0.0);
    for (int talker = 0; talker < 6; ++talker) {
      // Talker indices far above any corpus speaker index.
      const SpeakerProfile p = MakeSpeakerProfile(rng(), 100000 + b * 10 + talker);
      const Waveform w = GenerateUtterance(p, std::max(1.0, seconds), rng());
      for (std::size_t i = 0; i < n && i < w.samples.size(); ++i) babble[i] += w.samples[i];
    }
    PeakNormalize(babble, 0.9);
    noises.push_back(std::move(babble));
  }
  for (auto& v : noises) {
    Waveform w;
    w.samples.assign(v.begin(), v.end());
    bank.push_back(std::move(w));
  }
  return bank;
}

}  // namespace selfsv
