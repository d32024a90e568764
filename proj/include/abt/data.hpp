// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "abt/dsp.hpp"

namespace abt {

struct ManifestEntry {
  std::string clip_id;
  std::string path;
  double duration_s = 0.0;
  std::optional<std::string> label;
};

/// Ordered list of clips. Entries are sorted lexicographically by path and
/// clip ids are unique.
struct Manifest {
  std::vector<ManifestEntry> entries;

  bool empty() const { return entries.empty(); }
  size_t size() const { return entries.size(); }
};

/// Scans root_dir recursively for readable WAV files. Unreadable files are
/// skipped with a warning; an empty result is an error ("no audio files").
Manifest build_manifest(const std::string& root_dir);

/// JSON Lines, one {clip_id, path, duration_s, label?} object per line.
void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

/// Global scalar moments over every log-mel cell of a manifest (population
/// std). Per-bin moments are optionally carried alongside for the per-bin
/// normalization config flag.
struct DatasetStats {
  double mean = 0.0;
  double std = 0.0;
  int64_t n_cells = 0;
  uint64_t mel_config_hash = 0;
  std::vector<double> per_bin_mean;  // empty unless per-bin stats requested
  std::vector<double> per_bin_std;
};

/// Accumulator for streaming/parallel moment computation; merge order does
/// not change the result beyond rounding (compensated summation).
struct MomentAccumulator {
  long double sum = 0.0L;
  long double sum_sq = 0.0L;
  long double c_sum = 0.0L;     // Kahan compensation terms
  long double c_sum_sq = 0.0L;
  int64_t n = 0;
  double vmin = 0.0;
  double vmax = 0.0;

  void add(double x) {
    kahan_add(sum, c_sum, x);
    kahan_add(sum_sq, c_sum_sq, static_cast<long double>(x) * x);
    if (n == 0) {
      vmin = vmax = x;
    } else {
      vmin = x < vmin ? x : vmin;
      vmax = x > vmax ? x : vmax;
    }
    ++n;
  }
  void merge(const MomentAccumulator& o) {
    if (o.n == 0) return;
    kahan_add(sum, c_sum, o.sum);
    kahan_add(sum_sq, c_sum_sq, o.sum_sq);
    if (n == 0) {
      vmin = o.vmin;
      vmax = o.vmax;
    } else {
      vmin = o.vmin < vmin ? o.vmin : vmin;
      vmax = o.vmax > vmax ? o.vmax : vmax;
    }
    n += o.n;
  }
  bool constant() const { return n > 0 && vmin == vmax; }
  double mean() const { return n ? static_cast<double>(sum / n) : 0.0; }
  double variance() const {
    if (!n || constant()) return 0.0;
    const long double m = sum / n;
    const long double v = sum_sq / n - m * m;
    return v > 0.0L ? static_cast<double>(v) : 0.0;
  }

 private:
  static void kahan_add(long double& acc, long double& comp, long double x) {
    const long double y = x - comp;
    const long double t = acc + y;
    comp = (t - acc) - y;
    acc = t;
  }
};

/// Exact first/second moments over all log-mel cells of all clips.
/// Throws "degenerate dataset statistics" when the pooled std is zero.
DatasetStats dataset_stats(const Manifest& m, const MelConfig& cfg, bool per_bin = false);

/// Stats over already-computed spectrograms (used by tests and by callers
/// that cache their mel features).
DatasetStats dataset_stats_from_spectrograms(const std::vector<Spectrogram>& specs,
                                             uint64_t mel_config_hash, bool per_bin = false);

void save_stats(const DatasetStats& s, const std::string& path);
DatasetStats load_stats(const std::string& path);

uint64_t mel_config_hash(const MelConfig& cfg);

/// One synthetic sound class. kind is one of "tone" (stationary sinusoid),
/// "chirp" (linear frequency sweep across the band), "noise_burst"
/// (band-limited noise gated by an on/off envelope). Classes occupy
/// disjoint frequency bands so they are separable in time-averaged mel
/// space by construction.
struct SynthClass {
  std::string name;
  std::string kind;
  double f0_lo_hz = 0.0;
  double f0_hi_hz = 0.0;
  double duration_s = 1.2;
  double snr_db = 20.0;
};

struct SynthSpec {
  int n_clips_per_class = 20;
  std::vector<SynthClass> classes;
  uint64_t seed = 0;
  int sample_rate_hz = 16000;

  void validate(const MelConfig& mel) const;
};

/// The committed 3-class spec: low tone, mid chirp, high noise burst.
SynthSpec default_synth_spec(uint64_t seed);

SynthSpec load_synth_spec(const std::string& path);
void save_synth_spec(const SynthSpec& spec, const std::string& path);

/// Writes labeled WAV clips under out_dir and returns their manifest.
/// Bit-deterministic for a given spec (WAV bytes included).
Manifest synth_dataset(const SynthSpec& spec, const std::string& out_dir);

}  // namespace abt
