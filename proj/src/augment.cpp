// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "abt/common.hpp"

namespace abt {

void AugmentConfig::validate() const {
  if (mixup_alpha < 0.0 || mixup_alpha > 0.5) {
    throw UserError("augment config: mixup_alpha must be in [0, 0.5] so the incoming clip stays dominant");
  }
  if (mixup_queue_len <= 0) throw UserError("augment config: mixup_queue_len must be positive");
  auto check_range = [](double lo, double hi, const char* what) {
    if (!(lo > 0.0 && lo <= hi)) {
      throw UserError(std::string("augment config: bad scale range for ") + what);
    }
  };
  check_range(rrc_freq_lo, rrc_freq_hi, "rrc_freq_scale");
  check_range(rrc_time_lo, rrc_time_hi, "rrc_time_scale");
  if (rlf_gain_lo > rlf_gain_hi) throw UserError("augment config: rlf_gain range inverted");
  if (noise_alpha < 0.0) throw UserError("augment config: noise_alpha must be >= 0");
}

void MixupQueue::push(const Spectrogram& s) {
  if (!items_.empty() && !items_.front().same_shape(s)) {
    throw std::invalid_argument("mixup queue: shape mismatch");
  }
  items_.push_back(s);
  while (static_cast<int>(items_.size()) > capacity_) items_.pop_front();
}

const Spectrogram& MixupQueue::sample(Rng& rng) const {
  if (items_.empty()) throw std::logic_error("mixup queue: sample from empty queue");
  const auto i = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(items_.size()) - 1));
  return items_[i];
}

Spectrogram normalize(const Spectrogram& s, const DatasetStats& stats) {
  if (stats.std <= 0.0) throw UserError("normalize: stats.std must be positive");
  Spectrogram out = s;
  if (!stats.per_bin_mean.empty()) {
    if (static_cast<int>(stats.per_bin_mean.size()) != s.n_mels) {
      throw UserError("normalize: per-bin stats dimension mismatch");
    }
    for (int f = 0; f < s.n_mels; ++f) {
      const double m = stats.per_bin_mean[static_cast<size_t>(f)];
      const double sd = stats.per_bin_std[static_cast<size_t>(f)];
      if (sd <= 0.0) throw UserError("normalize: degenerate per-bin std");
      for (int t = 0; t < s.n_frames; ++t) out.at(f, t) = (s.at(f, t) - m) / sd;
    }
  } else {
    for (auto& v : out.values) v = (v - stats.mean) / stats.std;
  }
  return out;
}

std::vector<Spectrogram> pre_post_norm(const std::vector<Spectrogram>& batch) {
  if (batch.empty()) throw std::invalid_argument("pre_post_norm: empty batch");
  MomentAccumulator acc;
  for (const auto& s : batch) {
    for (double v : s.values) acc.add(v);
  }
  const double mean = acc.mean();
  const double std = std::sqrt(acc.variance());
  if (std < 1e-12) throw UserError("degenerate batch");
  std::vector<Spectrogram> out = batch;
  for (auto& s : out) {
    for (auto& v : s.values) v = (v - mean) / std;
  }
  return out;
}

Spectrogram mixup_apply(const Spectrogram& s, const Spectrogram& partner, double lambda) {
  if (lambda == 0.0) return s;
  if (!s.same_shape(partner)) throw std::invalid_argument("mixup: shape mismatch");
  Spectrogram out = s;
  for (size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] =
        std::log((1.0 - lambda) * std::exp(s.values[i]) + lambda * std::exp(partner.values[i]));
  }
  return out;
}

Spectrogram mixup(const Spectrogram& s, MixupQueue& q, double alpha, Rng& rng) {
  Spectrogram out = s;
  if (!q.empty()) {
    const double lambda = rng.uniform(0.0, alpha);
    const Spectrogram& partner = q.sample(rng);
    out = mixup_apply(s, partner, lambda);
  }
  q.push(s);
  return out;
}

RrcCrop sample_rrc_crop(const AugmentConfig& cfg, int F, int T, Rng& rng) {
  const double uf = rng.uniform(cfg.rrc_freq_lo, cfg.rrc_freq_hi);
  const double ut = rng.uniform(cfg.rrc_time_lo, cfg.rrc_time_hi);
  RrcCrop c;
  c.h = static_cast<int>(std::clamp<int64_t>(std::llround(uf * F), 1, F));
  const auto w_max = static_cast<int64_t>(std::llround(cfg.rrc_time_hi * T));
  c.w = static_cast<int>(std::clamp<int64_t>(std::llround(ut * T), 1, std::max<int64_t>(1, w_max)));
  c.f0 = static_cast<int>(rng.uniform_int(0, F - c.h));
  // The time crop may overhang the input; offsets then start left of 0.
  const int lo = std::min(0, T - c.w);
  const int hi = std::max(0, T - c.w);
  c.t0 = static_cast<int>(rng.uniform_int(lo, hi));
  return c;
}

Spectrogram rrc_apply(const Spectrogram& s, const RrcCrop& crop, double pad_value) {
  const int F = s.n_mels, T = s.n_frames;
  auto read = [&](int f, int t) -> double {
    if (f < 0 || f >= F || t < 0 || t >= T) return pad_value;
    return s.at(f, t);
  };
  Spectrogram out(F, T, s.frame_hop_ms);
  const double sf = static_cast<double>(crop.h) / F;
  const double st = static_cast<double>(crop.w) / T;
  for (int f = 0; f < F; ++f) {
    const double src_f = crop.f0 + (f + 0.5) * sf - 0.5;
    const int f_lo = static_cast<int>(std::floor(src_f));
    const double af = src_f - f_lo;
    for (int t = 0; t < T; ++t) {
      const double src_t = crop.t0 + (t + 0.5) * st - 0.5;
      const int t_lo = static_cast<int>(std::floor(src_t));
      const double at = src_t - t_lo;
      const double v00 = read(f_lo, t_lo);
      const double v01 = read(f_lo, t_lo + 1);
      const double v10 = read(f_lo + 1, t_lo);
      const double v11 = read(f_lo + 1, t_lo + 1);
      out.at(f, t) = (1.0 - af) * ((1.0 - at) * v00 + at * v01) +
                     af * ((1.0 - at) * v10 + at * v11);
    }
  }
  return out;
}

Spectrogram rrc(const Spectrogram& s, const AugmentConfig& cfg, Rng& rng, double pad_value) {
  return rrc_apply(s, sample_rrc_crop(cfg, s.n_mels, s.n_frames, rng), pad_value);
}

Spectrogram rlf_apply(const Spectrogram& s, double gain) {
  Spectrogram out = s;
  const int T = s.n_frames;
  for (int t = 0; t < T; ++t) {
    const double ramp = T > 1 ? gain * static_cast<double>(t) / (T - 1) : 0.0;
    for (int f = 0; f < s.n_mels; ++f) out.at(f, t) += ramp;
  }
  return out;
}

Spectrogram rlf(const Spectrogram& s, const AugmentConfig& cfg, Rng& rng) {
  return rlf_apply(s, rng.uniform(cfg.rlf_gain_lo, cfg.rlf_gain_hi));
}

Spectrogram add_noise_lambda(const Spectrogram& s, double lambda, Rng& rng) {
  if (lambda == 0.0) return s;
  Spectrogram out = s;
  const double stddev = std::sqrt(lambda);
  for (auto& v : out.values) v += stddev * rng.normal();
  return out;
}

Spectrogram add_noise(const Spectrogram& s, double alpha, Rng& rng) {
  if (alpha < 0.0) throw std::invalid_argument("add_noise: alpha must be >= 0");
  if (alpha == 0.0) return s;
  return add_noise_lambda(s, rng.uniform(0.0, alpha), rng);
}

namespace {

Spectrogram run_blocks(const Spectrogram& x, const AugmentConfig& cfg, MixupQueue& q,
                       Rng& rng) {
  Spectrogram v = x;
  if (cfg.use_mixup) v = mixup(v, q, cfg.mixup_alpha, rng);
  if (cfg.use_rrc) v = rrc(v, cfg, rng, 0.0);  // canvas: post-normalization zero
  if (cfg.use_rlf) v = rlf(v, cfg, rng);
  if (cfg.use_noise) v = add_noise(v, cfg.noise_alpha, rng);
  return v;
}

}  // namespace

ViewPair make_views(const Spectrogram& raw, const AugmentConfig& cfg, const DatasetStats& stats,
                    MixupQueue& q, uint64_t clip_seed) {
  cfg.validate();
  const Spectrogram x = normalize(raw, stats);
  Rng rng1 = Rng::from_key({clip_seed, 1});
  Rng rng2 = Rng::from_key({clip_seed, 2});
  ViewPair out;
  out.v1 = run_blocks(x, cfg, q, rng1);
  out.v2 = run_blocks(x, cfg, q, rng2);
  return out;
}

std::pair<std::vector<Spectrogram>, std::vector<Spectrogram>> make_view_batch(
    const std::vector<Spectrogram>& raw, const AugmentConfig& cfg, const DatasetStats& stats,
    MixupQueue& q, const std::vector<uint64_t>& clip_seeds) {
  cfg.validate();
  if (raw.size() != clip_seeds.size()) {
    throw std::invalid_argument("make_view_batch: seeds/batch size mismatch");
  }
  std::vector<Spectrogram> v1, v2;
  v1.reserve(raw.size());
  v2.reserve(raw.size());
  if (cfg.norm_mode == NormMode::dataset) {
    for (size_t i = 0; i < raw.size(); ++i) {
      ViewPair p = make_views(raw[i], cfg, stats, q, clip_seeds[i]);
      v1.push_back(std::move(p.v1));
      v2.push_back(std::move(p.v2));
    }
  } else {
    const std::vector<Spectrogram> pre = pre_post_norm(raw);
    for (size_t i = 0; i < pre.size(); ++i) {
      Rng rng1 = Rng::from_key({clip_seeds[i], 1});
      Rng rng2 = Rng::from_key({clip_seeds[i], 2});
      v1.push_back(run_blocks(pre[i], cfg, q, rng1));
      v2.push_back(run_blocks(pre[i], cfg, q, rng2));
    }
    v1 = pre_post_norm(v1);
    v2 = pre_post_norm(v2);
  }
  return {std::move(v1), std::move(v2)};
}

MaskPlan mask_patches(int n_patches, double r, Rng& rng) {
  if (n_patches <= 0) throw std::invalid_argument("mask_patches: n_patches must be positive");
  if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("mask_patches: r must be in [0, 1)");
  const int m = static_cast<int>(std::llround(r * n_patches));
  std::vector<int> perm = rng.permutation(n_patches);
  MaskPlan plan;
  plan.r = r;
  plan.kept.assign(perm.begin(), perm.end() - m);
  plan.masked.assign(perm.end() - m, perm.end());
  return plan;
}

double masking_ratio_at(int epoch, double beta, int total_epochs, int warmup_epochs) {
  if (epoch < 0 || epoch > total_epochs || warmup_epochs > total_epochs) {
    throw std::invalid_argument("masking_ratio_at: need 0 <= epoch <= total, warmup <= total");
  }
  if (epoch < warmup_epochs) return 0.0;
  if (epoch >= total_epochs) return beta;
  const double span = static_cast<double>(total_epochs - warmup_epochs);
  if (span <= 0.0) return beta;
  return beta * std::sin(M_PI / 2.0 * static_cast<double>(epoch - warmup_epochs) / span);
}

}  // namespace abt
