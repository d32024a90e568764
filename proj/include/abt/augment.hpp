// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <utility>
#include <vector>

#include "abt/data.hpp"
#include "abt/dsp.hpp"
#include "abt/rng.hpp"

namespace abt {

enum class NormMode { dataset, pre_post };

struct AugmentConfig {
  bool use_mixup = true;
  double mixup_alpha = 0.4;
  int mixup_queue_len = 2048;
  bool use_rrc = true;
  double rrc_freq_lo = 0.6, rrc_freq_hi = 1.5;
  double rrc_time_lo = 0.6, rrc_time_hi = 1.5;
  bool use_rlf = true;
  double rlf_gain_lo = -1.0, rlf_gain_hi = 1.0;
  bool use_noise = false;
  double noise_alpha = 0.2;
  NormMode norm_mode = NormMode::dataset;

  void validate() const;
};

/// FIFO memory bank of recent normalized spectrograms, the mixing partners
/// for log-mixup-exp. Single-writer: pushes must be ordered by one owner.
class MixupQueue {
 public:
  explicit MixupQueue(int capacity) : capacity_(capacity) {}

  void push(const Spectrogram& s);
  const Spectrogram& sample(Rng& rng) const;
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  int capacity() const { return capacity_; }
  const Spectrogram& item(size_t i) const { return items_[i]; }
  void clear() { items_.clear(); }

 private:
  int capacity_;
  std::deque<Spectrogram> items_;
};

/// (s - mean) / std with the dataset scalars; per-bin when stats carry
/// per-bin moments.
Spectrogram normalize(const Spectrogram& s, const DatasetStats& stats);

/// Standardizes a batch by its own pooled moments (mean 0, std 1 across all
/// cells). Used for both the pre- and post-normalization stages; the stage
/// only determines where in the pipeline it runs.
std::vector<Spectrogram> pre_post_norm(const std::vector<Spectrogram>& batch);

/// Log-mixup-exp with an explicit partner and coefficient; exact identity
/// at lambda == 0. Exposed for tests; mixup() drives it from the queue.
Spectrogram mixup_apply(const Spectrogram& s, const Spectrogram& partner, double lambda);

/// lambda ~ U(0, alpha); partner sampled uniformly from the queue; mixes in
/// the linear-magnitude domain; s is pushed afterwards. Empty queue: output
/// is s (still pushed).
Spectrogram mixup(const Spectrogram& s, MixupQueue& q, double alpha, Rng& rng);

/// A sampled crop box on the (virtual) canvas. The frequency crop stays
/// within [0, F]; the time crop may overhang the input, reading pad_value
/// outside it.
struct RrcCrop {
  int h = 0, w = 0;
  int f0 = 0, t0 = 0;
};

RrcCrop sample_rrc_crop(const AugmentConfig& cfg, int F, int T, Rng& rng);

/// Bilinear crop-and-resize back to F x T (half-pixel mapping, so the
/// full-frame crop is an exact identity).
Spectrogram rrc_apply(const Spectrogram& s, const RrcCrop& crop, double pad_value);

Spectrogram rrc(const Spectrogram& s, const AugmentConfig& cfg, Rng& rng,
                double pad_value = 0.0);

/// Linear gain ramp in the log domain: frame t gains a * t / (T - 1).
Spectrogram rlf_apply(const Spectrogram& s, double gain);
Spectrogram rlf(const Spectrogram& s, const AugmentConfig& cfg, Rng& rng);

/// lambda ~ U(0, alpha); adds i.i.d. N(0, lambda) noise per cell. lambda is
/// read as the variance of the Gaussian.
Spectrogram add_noise(const Spectrogram& s, double alpha, Rng& rng);
Spectrogram add_noise_lambda(const Spectrogram& s, double lambda, Rng& rng);

struct ViewPair {
  Spectrogram v1, v2;
};

/// Two independently augmented views of one raw log-mel clip, dataset-norm
/// mode. Per-view RNG streams are split from clip_seed as (clip_seed, view)
/// so the views are independent yet reproducible. Block order is fixed:
/// Mixup -> RRC -> RLF -> (Noise).
ViewPair make_views(const Spectrogram& raw, const AugmentConfig& cfg,
                    const DatasetStats& stats, MixupQueue& q, uint64_t clip_seed);

/// Batch-level view generation handling both norm modes. In pre_post mode
/// the batch is standardized before augmentation and each view batch is
/// standardized again afterwards (drift correction); in dataset mode this
/// reduces to make_views per clip.
std::pair<std::vector<Spectrogram>, std::vector<Spectrogram>> make_view_batch(
    const std::vector<Spectrogram>& raw, const AugmentConfig& cfg, const DatasetStats& stats,
    MixupQueue& q, const std::vector<uint64_t>& clip_seeds);

/// Which patches survive masking. kept keeps the shuffled order of the
/// survivors; kept and masked partition 0..N-1.
struct MaskPlan {
  std::vector<int> kept;
  std::vector<int> masked;
  double r = 0.0;
};

/// MAE-style masking: shuffle 0..N-1, drop the last M = round(r*N).
MaskPlan mask_patches(int n_patches, double r, Rng& rng);

/// Sinusoidal masking-ratio schedule: 0 during warmup, then
/// beta * sin(pi/2 * (epoch - warmup) / (total - warmup)).
double masking_ratio_at(int epoch, double beta, int total_epochs, int warmup_epochs);

}  // namespace abt
