// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "abt/rng.hpp"

namespace abt {

/// Raw mono audio. Samples are nominal amplitudes in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
  double duration_ms() const { return duration_s() * 1000.0; }
};

/// Log-mel frontend configuration. Defaults: 16 kHz input, 64 ms Hann
/// window, 10 ms hop, 64 mel bins spanning 60-7800 Hz.
struct MelConfig {
  int sample_rate_hz = 16000;
  double window_ms = 64.0;
  double hop_ms = 10.0;
  int n_mels = 64;
  double fmin_hz = 60.0;
  double fmax_hz = 7800.0;
  double log_floor = 1e-8;

  int window_samples() const { return static_cast<int>(window_ms * sample_rate_hz / 1000.0 + 0.5); }
  int hop_samples() const { return static_cast<int>(hop_ms * sample_rate_hz / 1000.0 + 0.5); }
  /// Log-domain value of digital silence: ln(0 + log_floor).
  double silence_value() const;
  void validate() const;
};

/// F x T grid of natural-log mel magnitudes, row-major [mel][frame].
struct Spectrogram {
  int n_mels = 0;
  int n_frames = 0;
  double frame_hop_ms = 0.0;
  std::vector<double> values;

  Spectrogram() = default;
  Spectrogram(int f, int t, double hop_ms, double fill = 0.0)
      : n_mels(f), n_frames(t), frame_hop_ms(hop_ms),
        values(static_cast<size_t>(f) * static_cast<size_t>(t), fill) {}

  double& at(int f, int t) { return values[static_cast<size_t>(f) * n_frames + t]; }
  double at(int f, int t) const { return values[static_cast<size_t>(f) * n_frames + t]; }
  bool same_shape(const Spectrogram& o) const {
    return n_mels == o.n_mels && n_frames == o.n_frames;
  }
};

/// Band-limited resampling (windowed-sinc interpolation, fixed quality).
/// Output length is round(len * target / source); identity when rates match.
Waveform resample(const Waveform& w, int target_rate);

/// STFT framing: frames lie fully inside the signal (no center padding), so
/// n_frames = floor((len - window) / hop) + 1. Hann window (periodic),
/// power spectrum, HTK-mel triangular filterbank, values = ln(mel + floor).
Spectrogram logmel(const Waveform& w, const MelConfig& cfg);

/// Frame count logmel() will produce for a signal of n_samples.
int expected_n_frames(int64_t n_samples, const MelConfig& cfg);

/// Random contiguous crop to t_target frames, or pad at the tail with
/// pad_value when the input is shorter. Pad with the log-domain silence
/// value (MelConfig::silence_value), not literal zero: a zero cell would be
/// a non-silent constant in log-mel space.
Spectrogram crop_or_pad(const Spectrogram& s, int t_target, Rng& rng, double pad_value);

/// Audio span covered by n_frames at a given hop: (n_frames - 1) * hop_ms.
/// 96 frames at 10 ms hop span 950 ms.
double time_span_ms(int n_frames, double hop_ms);

/// Center frequencies (Hz) of the n_mels triangular filters for cfg. The
/// HTK mel scale is used: mel = 2595 * log10(1 + hz / 700).
std::vector<double> mel_filter_centers_hz(const MelConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// In-place iterative radix-2 FFT; size must be a power of two. Kept
/// in-house to avoid the planner state of an external FFT for what is a
/// fixed 1024-point transform on the hot path.
void fft_radix2(std::vector<std::complex<double>>& a, bool inverse);

}  // namespace abt
