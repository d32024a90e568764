// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abt/augment.hpp"
#include "abt/checkpoint.hpp"
#include "abt/data.hpp"
#include "abt/encoder.hpp"
#include "abt/objective.hpp"
#include "abt/optim.hpp"
#include "abt/projector.hpp"

namespace abt {

struct MaskingConfig {
  bool enabled = false;
  bool use_schedule = false;
  double r = 0.2;           // fixed ratio when use_schedule is false
  double beta = 0.3;        // schedule target
  int warmup_epochs = 10;

  void validate() const;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  std::string encoder = "audiontt";  // audiontt | vit | vit_c
  AudioNTTConfig audiontt;
  ViTConfig vit;
  ProjectorConfig projector;  // in_dim 0 = derive from encoder
  LossConfig loss;
  AugmentConfig augment;
  std::string optimizer = "lars";  // lars | adamw | sgd
  LarsConfig lars;
  AdamWConfig adamw;
  SgdConfig sgd;
  int crop_frames = 96;
  MaskingConfig masking;
  uint64_t seed = 0;
  int checkpoint_every = 10;  // epochs
  std::string precision = "f64";  // f64 | f32 (params rounded to fp32 each step)
  MelConfig mel;

  void validate() const;
};

/// Per-step diagnostics. loss == alpha*invariance + lambda*redundancy holds
/// exactly by construction; feature_std_min is the collapse indicator.
struct StepMetrics {
  int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double invariance_term = 0.0;
  double redundancy_term = 0.0;
  double offdiag_mean_abs = 0.0;
  double diag_mean = 0.0;
  double feature_std_min = 0.0;
};

nlohmann::json step_metrics_to_json(const StepMetrics& m);

/// Encoder + projector over one shared parameter store: the two arms of a
/// step literally reuse these parameters (no target network).
struct ModelBundle {
  TrainConfig cfg;
  ParamStore store;
  std::unique_ptr<Encoder> encoder;
  std::unique_ptr<Projector> projector;
};

/// Builds and seeds a model from the config (init stream derived from
/// cfg.seed). projector.in_dim of 0 is resolved to the encoder rep dim.
std::unique_ptr<ModelBundle> build_model(const TrainConfig& cfg);

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg, const ParamStore& store);

/// Inputs of one optimizer step, produced by the (possibly prefetching)
/// augmentation side.
struct PreparedBatch {
  int epoch = 0;
  int step_in_epoch = 0;
  int64_t global_step = 0;
  std::vector<Spectrogram> view1, view2;
  std::vector<MaskPlan> masks;  // empty = unmasked; applies to view2 only
};

/// Deterministic single-process trainer. Batch preparation and the
/// optimizer step are split so the prefetch pipeline (and the tests) can
/// drive them independently; both sides are pure functions of
/// (seed, epoch, step) given the mixup queue discipline.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::vector<Spectrogram> clips, DatasetStats stats);

  int steps_per_epoch() const;
  /// Clip order for an epoch (seeded reshuffle).
  std::vector<int> epoch_order(int epoch) const;
  /// Crop + twin-view augmentation + masking for one step. Mutates the
  /// mixup queue; calls must follow step order.
  PreparedBatch prepare_batch(int epoch, int step_in_epoch);
  /// Forward both arms, loss, backward, optimizer step.
  StepMetrics train_step(const PreparedBatch& batch);

  ModelBundle& model() { return *model_; }
  Optimizer& optimizer() { return *opt_; }
  MixupQueue& queue() { return queue_; }
  const DatasetStats& stats() const { return stats_; }
  int64_t global_step() const { return global_step_; }

  Checkpoint make_checkpoint(int epoch_completed) const;
  void restore(const Checkpoint& ckpt);

 private:
  TrainConfig cfg_;
  std::vector<Spectrogram> clips_;
  DatasetStats stats_;
  std::unique_ptr<ModelBundle> model_;
  std::unique_ptr<Optimizer> opt_;
  MixupQueue queue_;
  int64_t global_step_ = 0;
};

struct PretrainResult {
  std::string final_checkpoint;
  std::vector<StepMetrics> metrics;
};

/// Epoch loop with seeded reshuffles, a bounded prefetch pipeline
/// (capacity 2 batches) between augmentation and the optimizer step,
/// per-step JSONL metrics, and checkpoints every checkpoint_every epochs.
/// Partial trailing batches are dropped (batch statistics degrade).
/// resume_path continues a run bit-identically from a checkpoint.
PretrainResult pretrain(const TrainConfig& cfg, const Manifest& manifest,
                        const DatasetStats& stats, const std::string& out_dir,
                        const std::string& resume_path = "");

/// Same entry point for callers that already hold log-mel clips.
PretrainResult pretrain_clips(const TrainConfig& cfg, std::vector<Spectrogram> clips,
                              const DatasetStats& stats, const std::string& out_dir,
                              const std::string& resume_path = "");

/// Rebuilds a model from a checkpoint (config snapshot + tensors).
std::unique_ptr<ModelBundle> load_model(const Checkpoint& ckpt);

/// Loads raw log-mel spectrograms for every manifest entry (resampling on
/// ingest when rates differ).
std::vector<Spectrogram> load_clips(const Manifest& manifest, const MelConfig& mel);

}  // namespace abt
