// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/dsp.hpp"

#include <algorithm>
#include <cmath>

#include "abt/common.hpp"

namespace abt {

void MelConfig::validate() const {
  if (sample_rate_hz <= 0) throw UserError("mel config: sample_rate_hz must be positive");
  if (!(fmin_hz < fmax_hz && fmax_hz <= sample_rate_hz / 2.0)) {
    throw UserError("mel config: need fmin < fmax <= sample_rate/2");
  }
  if (window_ms < hop_ms) throw UserError("mel config: window_ms must be >= hop_ms");
  if (n_mels <= 0) throw UserError("mel config: n_mels must be positive");
  if (log_floor <= 0.0) throw UserError("mel config: log_floor must be positive");
}

double MelConfig::silence_value() const { return std::log(log_floor); }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw std::invalid_argument("fft size must be a power of two");
  }
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

namespace {

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

/// Triangular mel filterbank on FFT bin frequencies. Rows: n_mels filters,
/// columns: n_fft/2 + 1 bins. HTK mel scale, no area normalization.
std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg, size_t n_fft) {
  const size_t n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
  for (size_t i = 0; i < edges.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(cfg.n_mels + 1);
    edges[i] = mel_to_hz(mel);
  }
  std::vector<std::vector<double>> fb(static_cast<size_t>(cfg.n_mels),
                                      std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double f0 = edges[static_cast<size_t>(m)];
    const double f1 = edges[static_cast<size_t>(m) + 1];
    const double f2 = edges[static_cast<size_t>(m) + 2];
    for (size_t k = 0; k < n_bins; ++k) {
      const double fk =
          static_cast<double>(k) * cfg.sample_rate_hz / static_cast<double>(n_fft);
      double w = 0.0;
      if (fk > f0 && fk < f1) {
        w = (fk - f0) / (f1 - f0);
      } else if (fk >= f1 && fk < f2) {
        w = (f2 - fk) / (f2 - f1);
      }
      fb[static_cast<size_t>(m)][k] = w;
    }
  }
  return fb;
}

}  // namespace

std::vector<double> mel_filter_centers_hz(const MelConfig& cfg) {
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> centers(static_cast<size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(m + 1) /
                                    static_cast<double>(cfg.n_mels + 1);
    centers[static_cast<size_t>(m)] = mel_to_hz(mel);
  }
  return centers;
}

Waveform resample(const Waveform& w, int target_rate) {
  if (w.sample_rate <= 0 || target_rate <= 0) {
    throw UserError("resample: sample rates must be positive");
  }
  if (w.samples.empty()) throw UserError("empty waveform");
  if (target_rate == w.sample_rate) return w;

  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const int64_t in_len = static_cast<int64_t>(w.samples.size());
  const int64_t out_len = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(static_cast<double>(in_len) * ratio)));

  // Windowed-sinc kernel: cutoff at the narrower Nyquist (with a small
  // guard band), Blackman window, 16 zero crossings per side at cutoff.
  const double fc = 0.5 * std::min(1.0, ratio) * 0.95;
  const int half_width = static_cast<int>(std::ceil(16.0 / (2.0 * fc)));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<size_t>(out_len));
  for (int64_t n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) / ratio;  // position in input samples
    const int64_t k0 = static_cast<int64_t>(std::ceil(t)) - half_width;
    const int64_t k1 = static_cast<int64_t>(std::floor(t)) + half_width;
    double acc = 0.0;
    for (int64_t k = std::max<int64_t>(0, k0); k <= std::min(in_len - 1, k1); ++k) {
      const double x = t - static_cast<double>(k);
      const double u = x / half_width;  // in [-1, 1]
      const double win = 0.42 + 0.5 * std::cos(M_PI * u) + 0.08 * std::cos(2.0 * M_PI * u);
      acc += w.samples[static_cast<size_t>(k)] * 2.0 * fc * sinc(2.0 * fc * x) * win;
    }
    out.samples[static_cast<size_t>(n)] = acc;
  }
  return out;
}

int expected_n_frames(int64_t n_samples, const MelConfig& cfg) {
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  if (n_samples < win) return 0;
  return static_cast<int>((n_samples - win) / hop) + 1;
}

Spectrogram logmel(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  if (w.sample_rate != cfg.sample_rate_hz) {
    throw UserError("logmel: waveform sample rate does not match config");
  }
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  const int n_frames = expected_n_frames(static_cast<int64_t>(w.samples.size()), cfg);
  if (n_frames <= 0) throw UserError("clip too short");

  const size_t n_fft = next_pow2(static_cast<size_t>(win));
  const size_t n_bins = n_fft / 2 + 1;

  // Periodic Hann window.
  std::vector<double> window(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i) {
    window[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * i / static_cast<double>(win)));
  }
  const auto fb = mel_filterbank(cfg, n_fft);

  Spectrogram s(cfg.n_mels, n_frames, cfg.hop_ms);
  std::vector<std::complex<double>> buf(n_fft);
  std::vector<double> power(n_bins);
  for (int t = 0; t < n_frames; ++t) {
    const size_t off = static_cast<size_t>(t) * static_cast<size_t>(hop);
    for (size_t i = 0; i < n_fft; ++i) {
      buf[i] = i < static_cast<size_t>(win)
                   ? std::complex<double>(w.samples[off + i] * window[i], 0.0)
                   : std::complex<double>(0.0, 0.0);
    }
    fft_radix2(buf, false);
    for (size_t k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double mel = 0.0;
      const auto& row = fb[static_cast<size_t>(m)];
      for (size_t k = 0; k < n_bins; ++k) mel += row[k] * power[k];
      s.at(m, t) = std::log(mel + cfg.log_floor);
    }
  }
  return s;
}

Spectrogram crop_or_pad(const Spectrogram& s, int t_target, Rng& rng, double pad_value) {
  if (t_target <= 0) throw std::invalid_argument("crop_or_pad: t_target must be positive");
  if (s.n_frames == t_target) return s;

  Spectrogram out(s.n_mels, t_target, s.frame_hop_ms, pad_value);
  if (s.n_frames > t_target) {
    const int t0 = static_cast<int>(rng.uniform_int(0, s.n_frames - t_target));
    for (int f = 0; f < s.n_mels; ++f) {
      for (int t = 0; t < t_target; ++t) out.at(f, t) = s.at(f, t0 + t);
    }
  } else {
    for (int f = 0; f < s.n_mels; ++f) {
      for (int t = 0; t < s.n_frames; ++t) out.at(f, t) = s.at(f, t);
    }
  }
  return out;
}

double time_span_ms(int n_frames, double hop_ms) {
  if (n_frames <= 0) return 0.0;
  return static_cast<double>(n_frames - 1) * hop_ms;
}

}  // namespace abt
