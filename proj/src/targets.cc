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

#include "selfsv/targets.h"

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "selfsv/checkpoint.h"
#include "selfsv/io.h"
#include "selfsv/parallel.h"

namespace selfsv {

namespace {

constexpr char kLabelsMagic[] = "SELFSV-LABELS 1";

double SquaredDistance(const float* a, const float* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - b[i];
    s += diff * diff;
  }
  return s;
}

// Nearest centroid and its squared distance.
std::pair<int, double> Nearest(const float* x, const Matrix& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.rows; ++j) {
    const double d = SquaredDistance(x, &centroids.data[j * centroids.cols], centroids.cols);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return {best, best_d};
}

constexpr std::size_t kAssignChunk = 4096;

std::vector<int> AssignAll(const Matrix& points, const Matrix& centroids,
                           std::vector<double>* distances) {
  std::vector<int> labels(points.rows);
  if (distances) distances->assign(points.rows, 0.0);
  const std::size_t chunks = (points.rows + kAssignChunk - 1) / kAssignChunk;
  ParallelFor(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(points.rows, (c + 1) * kAssignChunk);
    for (std::size_t i = c * kAssignChunk; i < end; ++i) {
      const auto [label, d] = Nearest(&points.data[i * points.cols], centroids);
      labels[i] = label;
      if (distances) (*distances)[i] = d;
    }
  });
  return labels;
}

Matrix KMeansPlusPlus(const Matrix& points, int k, std::mt19937_64& rng) {
  const std::size_t n = points.rows, d = points.cols;
  Matrix centroids(static_cast<std::size_t>(k), d);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto copy_row = [&](std::size_t src, std::size_t dst) {
    std::copy_n(&points.data[src * d], d, &centroids.data[dst * d]);
  };
  std::size_t first = std::min(n - 1, static_cast<std::size_t>(unit(rng) * n));
  copy_row(first, 0);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = SquaredDistance(&points.data[i * d], &centroids.data[0], d);
  }
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(n - 1, static_cast<std::size_t>(unit(rng) * n));
    }
    copy_row(pick, static_cast<std::size_t>(c));
    const float* cen = &centroids.data[static_cast<std::size_t>(c) * d];
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], SquaredDistance(&points.data[i * d], cen, d));
    }
  }
  return centroids;
}

void CheckFinite(const Matrix& m, const std::string& what) {
  for (float v : m.data) {
    if (!std::isfinite(v)) throw std::invalid_argument(what + " contains non-finite values");
  }
}

}  // namespace

void Codebook::Save(const std::string& path) const {
  CheckpointFile file;
  file.SetMeta("kind", "codebook");
  file.SetMeta("K", std::to_string(k()));
  file.SetMeta("D", std::to_string(dim()));
  file.SetMeta("feature_kind", feature_kind);
  file.AddArray({"centroids", {centroids.rows, centroids.cols}, centroids.data});
  file.Save(path);
}

Codebook Codebook::Load(const std::string& path) {
  const CheckpointFile file = CheckpointFile::Load(path);
  if (file.MetaOr("kind", "") != "codebook") {
    throw std::runtime_error(path + ": not a codebook file");
  }
  const auto& arr = file.Array("centroids");
  Codebook cb;
  cb.feature_kind = file.Meta("feature_kind");
  const std::size_t k = std::stoul(file.Meta("K")), d = std::stoul(file.Meta("D"));
  if (arr.shape.size() != 2 || arr.shape[0] != k || arr.shape[1] != d) {
    throw std::runtime_error(path + ": centroid shape does not match K and D");
  }
  cb.centroids = Matrix(k, d);
  cb.centroids.data = arr.values;
  return cb;
}

KMeansResult KMeansFit(const Matrix& points, int k, int max_iters, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("kmeans: max_iters must be >= 1");
  if (points.cols == 0) throw std::invalid_argument("kmeans: points have zero dimension");
  if (points.rows < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("kmeans: " + std::to_string(points.rows) +
                                " points is fewer than k = " + std::to_string(k));
  }
  CheckFinite(points, "kmeans: points");
  const std::size_t n = points.rows, d = points.cols, kk = static_cast<std::size_t>(k);
  std::mt19937_64 rng(seed);

  KMeansResult result;
  Matrix centroids = KMeansPlusPlus(points, k, rng);
  std::vector<double> dist;
  std::vector<int> labels = AssignAll(points, centroids, &dist);
  result.objective.push_back(KMeansObjective(points, centroids, labels));

  for (int it = 1; it <= max_iters; ++it) {
    result.iterations = it;
    std::vector<double> sums(kk * d, 0.0);
    std::vector<std::size_t> counts(kk, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(labels[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += points.data[i * d + j];
    }
    std::vector<char> taken(n, 0);
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < d; ++j) {
          centroids.data[c * d + j] = static_cast<float>(sums[c * d + j] / counts[c]);
        }
        continue;
      }
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      taken[far] = 1;
      std::copy_n(&points.data[far * d], d, &centroids.data[c * d]);
    }
    std::vector<int> next = AssignAll(points, centroids, &dist);
    result.objective.push_back(KMeansObjective(points, centroids, next));
    const bool fixpoint = next == labels;
    labels = std::move(next);
    if (fixpoint) break;
  }
  result.codebook.centroids = std::move(centroids);
  result.labels = std::move(labels);
  return result;
}

std::vector<int> KMeansAssign(const Matrix& points, const Codebook& codebook) {
  if (points.cols != codebook.dim()) {
    throw std::invalid_argument("kmeans_assign: points have dimension " +
                                std::to_string(points.cols) + " but the codebook has " +
                                std::to_string(codebook.dim()));
  }
  if (codebook.k() == 0) throw std::invalid_argument("kmeans_assign: empty codebook");
  return AssignAll(points, codebook.centroids, nullptr);
}

double KMeansObjective(const Matrix& points, const Matrix& centroids,
                       std::span<const int> labels) {
  if (labels.size() != points.rows || points.cols != centroids.cols) {
    throw std::invalid_argument("kmeans_objective: size mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    total += SquaredDistance(&points.data[i * points.cols],
                             &centroids.data[c * centroids.cols], points.cols);
  }
  return total;
}

void SaveLabels(const std::vector<LabelSequence>& sequences, int k,
                const std::string& path) {
  std::ostringstream header;
  header << kLabelsMagic << "\n" << "k " << k << "\n";
  std::size_t offset = 0;
  std::string payload;
  for (const auto& seq : sequences) {
    header << "utt " << offset << " " << seq.labels.size() << " " << seq.utterance_path
           << "\n";
    offset += seq.labels.size();
    std::vector<std::int32_t> v(seq.labels.begin(), seq.labels.end());
    AppendInt32LE(v, payload);
  }
  header << "payload " << payload.size() << "\n";
  WriteFileBytes(path, header.str() + payload);
}

std::vector<LabelSequence> LoadLabels(const std::string& path, int* k) {
  const std::string bytes = ReadFileBytes(path);
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw std::runtime_error(path + ": truncated labels header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kLabelsMagic) throw std::runtime_error(path + ": not a labels file");
  int clusters = 0;
  {
    std::istringstream in(next_line());
    std::string tag;
    if (!(in >> tag >> clusters) || tag != "k") {
      throw std::runtime_error(path + ": missing cluster count");
    }
  }
  struct Entry {
    std::size_t offset, count;
  };
  std::vector<Entry> entries;
  std::vector<LabelSequence> out;
  std::size_t payload_bytes = 0;
  for (;;) {
    const std::string line = next_line();
    std::istringstream in(line);
    std::string tag;
    in >> tag;
    if (tag == "payload") {
      in >> payload_bytes;
      break;
    }
    Entry e{};
    std::string name;
    if (tag != "utt" || !(in >> e.offset >> e.count)) {
      throw std::runtime_error(path + ": malformed line '" + line + "'");
    }
    in >> std::ws;
    std::getline(in, name);
    entries.push_back(e);
    out.push_back({name, {}});
  }
  if (bytes.size() - pos != payload_bytes || payload_bytes % 4 != 0) {
    throw std::runtime_error(path + ": payload size mismatch");
  }
  const auto values = ReadInt32LE(std::string_view(bytes).substr(pos), payload_bytes / 4);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.offset + e.count > values.size()) {
      throw std::runtime_error(path + ": utterance range outside payload");
    }
    out[i].labels.assign(values.begin() + static_cast<std::ptrdiff_t>(e.offset),
                         values.begin() + static_cast<std::ptrdiff_t>(e.offset + e.count));
    for (int v : out[i].labels) {
      if (v < 0 || v >= clusters) throw std::runtime_error(path + ": label out of range");
    }
  }
  if (k) *k = clusters;
  return out;
}

std::vector<std::size_t> AlignFramesToEncoder(std::size_t num_samples,
                                              const MfccConfig& mfcc,
                                              const EncoderConfig& encoder,
                                              int sample_rate) {
  const std::size_t mfcc_frames = MfccFrameCount(num_samples, mfcc, sample_rate);
  if (mfcc_frames == 0) throw std::invalid_argument("align: utterance shorter than one MFCC window");
  const double win = static_cast<double>(mfcc.WindowSamples(sample_rate));
  const double hop = static_cast<double>(mfcc.HopSamples(sample_rate));
  const auto centers = EncoderFrameCenters(num_samples, encoder, sample_rate);
  std::vector<std::size_t> out(centers.size());
  for (std::size_t j = 0; j < centers.size(); ++j) {
    const double t = std::round((centers[j] * sample_rate - (win - 1.0) / 2.0) / hop);
    out[j] = static_cast<std::size_t>(
        std::clamp(t, 0.0, static_cast<double>(mfcc_frames - 1)));
  }
  return out;
}

std::vector<std::size_t> SubsampleRows(std::size_t n, std::size_t cap, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (n <= cap) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  const double stride = static_cast<double>(n) / static_cast<double>(cap);
  std::mt19937_64 rng(seed);
  const double offset = std::uniform_real_distribution<double>(0.0, stride)(rng);
  out.resize(cap);
  for (std::size_t i = 0; i < cap; ++i) {
    out[i] = std::min(n - 1, static_cast<std::size_t>(offset + i * stride));
  }
  return out;
}

namespace {

// Per-utterance features plus the feature row feeding each encoder frame.
struct UtteranceFeatures {
  Matrix features;
  std::vector<std::size_t> frame_rows;
};

TargetSet ClusterAndLabel(const std::vector<ManifestEntry>& entries,
                          const std::vector<UtteranceFeatures>& feats,
                          const TargetsConfig& cfg, const std::string& kind) {
  std::size_t total = 0;
  const std::size_t d = feats.empty() ? 0 : feats.front().features.cols;
  for (const auto& f : feats) total += f.features.rows;
  const auto picked = SubsampleRows(total, cfg.frame_cap, DeriveSeed(cfg.seed, 0x7a11));
  Matrix pool(picked.size(), d);
  {
    std::size_t u = 0, base = 0;
    for (std::size_t i = 0; i < picked.size(); ++i) {
      while (picked[i] >= base + feats[u].features.rows) base += feats[u++].features.rows;
      const auto row = feats[u].features.row(picked[i] - base);
      std::copy(row.begin(), row.end(), pool.row(i).begin());
    }
  }
  KMeansResult fit = KMeansFit(pool, cfg.k, cfg.max_iters, DeriveSeed(cfg.seed, 0x6b6d));
  TargetSet out;
  out.codebook = std::move(fit.codebook);
  out.codebook.feature_kind = kind;
  out.objective = std::move(fit.objective);
  out.sequences.resize(entries.size());
  ParallelFor(entries.size(), [&](std::size_t u) {
    const auto& f = feats[u];
    Matrix rows(f.frame_rows.size(), d);
    for (std::size_t j = 0; j < f.frame_rows.size(); ++j) {
      const auto src = f.features.row(f.frame_rows[j]);
      std::copy(src.begin(), src.end(), rows.row(j).begin());
    }
    out.sequences[u] = {entries[u].path, KMeansAssign(rows, out.codebook)};
  });
  return out;
}

std::vector<ManifestEntry> SplitOrThrow(const CorpusManifest& manifest,
                                        const std::string& split) {
  auto entries = manifest.Split(split);
  if (entries.empty()) {
    throw std::invalid_argument("targets: manifest has no utterances in split '" + split + "'");
  }
  return entries;
}

}  // namespace

TargetSet BuildTargetsIter1(const CorpusManifest& manifest, const MfccConfig& mfcc,
                            const EncoderConfig& encoder, const TargetsConfig& cfg) {
  const auto entries = SplitOrThrow(manifest, cfg.split);
  std::vector<UtteranceFeatures> feats(entries.size());
  ParallelFor(entries.size(), [&](std::size_t u) {
    const Waveform wave = LoadWav(manifest.AbsolutePath(entries[u].path));
    feats[u].features = Mfcc(wave, mfcc).frames;
    feats[u].frame_rows =
        AlignFramesToEncoder(wave.samples.size(), mfcc, encoder, wave.sample_rate);
  });
  return ClusterAndLabel(entries, feats, cfg, "mfcc");
}

int DefaultClusterLayer(int layers) {
  return static_cast<int>(std::lround(layers / 2.0));
}

TargetSet BuildTargetsIter2(const CorpusManifest& manifest,
                            const std::string& checkpoint_path, int layer,
                            const TargetsConfig& cfg) {
  const CheckpointFile file = CheckpointFile::Load(checkpoint_path);
  const std::string stage = file.MetaOr(kStageKey, "");
  if (stage != kStagePretrainIter1) {
    throw std::invalid_argument(checkpoint_path + ": expected stage '" +
                                std::string(kStagePretrainIter1) + "', found '" + stage + "'");
  }
  ParameterSet params;
  const Encoder enc = LoadEncoder(file, params);
  const int layers = enc.config().layers;
  if (layer < 0) layer = DefaultClusterLayer(layers);
  if (layer > layers) {
    throw std::out_of_range("targets: layer " + std::to_string(layer) +
                            " is out of range for an encoder with " +
                            std::to_string(layers) + " layers");
  }
  const auto entries = SplitOrThrow(manifest, cfg.split);
  std::vector<UtteranceFeatures> feats(entries.size());
  ParallelFor(entries.size(), [&](std::size_t u) {
    NoGradGuard no_grad;
    const Waveform wave = LoadWav(manifest.AbsolutePath(entries[u].path));
    const auto stack = enc.Forward(wave.samples);
    const auto& h = stack[static_cast<std::size_t>(layer)];
    Matrix m(h.dim(0), h.dim(1));
    std::copy(h.values().begin(), h.values().end(), m.data.begin());
    feats[u].frame_rows.resize(m.rows);
    feats[u].features = std::move(m);
    for (std::size_t j = 0; j < feats[u].frame_rows.size(); ++j) feats[u].frame_rows[j] = j;
  });
  return ClusterAndLabel(entries, feats, cfg, "latent:" + std::to_string(layer));
}

double LabelDisagreement(const std::vector<LabelSequence>& a,
                         const std::vector<LabelSequence>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("label_disagreement: utterance counts differ");
  std::map<int, std::map<int, std::size_t>> joint;
  std::size_t total = 0;
  for (std::size_t u = 0; u < a.size(); ++u) {
    if (a[u].labels.size() != b[u].labels.size()) {
      throw std::invalid_argument("label_disagreement: length mismatch for " +
                                  a[u].utterance_path);
    }
    for (std::size_t t = 0; t < a[u].labels.size(); ++t) ++joint[b[u].labels[t]][a[u].labels[t]];
    total += a[u].labels.size();
  }
  if (total == 0) return 0.0;
  std::size_t agree = 0;
  for (const auto& [label, counts] : joint) {
    std::size_t best = 0;
    for (const auto& [other, c] : counts) best = std::max(best, c);
    agree += best;
  }
  return 1.0 - static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace selfsv
