// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "abt/data.hpp"
#include "abt/tensor.hpp"
#include "abt/train.hpp"

namespace abt {

struct EmbeddingRecord {
  std::string clip_id;
  std::optional<double> timestamp_ms;
  std::vector<double> vec;
};

struct EmbeddingSet {
  std::vector<EmbeddingRecord> records;
  int dim = 0;
  uint64_t checkpoint_hash = 0;
};

/// Frozen scene embeddings: the full normalized spectrogram is split into
/// consecutive crop_frames windows (tail window padded with the normalized
/// silence value), each encoded in inference mode, and the per-window
/// representations pooled to one vector per clip (mean by default, max as
/// the config alternative). Model state is never mutated.
EmbeddingSet extract_scene_embeddings(ModelBundle& model, const Manifest& manifest,
                                      const DatasetStats& stats, int crop_frames,
                                      const std::string& pool = "mean");

/// Frozen timestamp embeddings: fixed segments of segment_ms every hop_ms,
/// timestamps at segment centers. Segment count is
/// floor((duration - segment) / hop) + 1 for clips at least one segment
/// long; shorter clips yield one zero-padded segment.
EmbeddingSet extract_timestamp_embeddings(ModelBundle& model, const ManifestEntry& clip,
                                          const DatasetStats& stats, double segment_ms = 950.0,
                                          double hop_ms = 50.0);

/// Segment count arithmetic shared with the tests.
int timestamp_segment_count(double duration_ms, double segment_ms, double hop_ms);

/// Binary export: base.f32 (little-endian float32, row-major) plus a
/// base.json sidecar {clip_ids, timestamps_ms?, dim, checkpoint_hash}.
void save_embeddings(const EmbeddingSet& set, const std::string& base_path);
EmbeddingSet load_embeddings(const std::string& base_path);
void export_embeddings_csv(const EmbeddingSet& set, const std::string& csv_path);

enum class TaskType { multiclass, multilabel };

struct ProbeConfig {
  std::string id = "h1_lr1e-3_s1";
  int hidden_layers = 1;
  int hidden_width = 128;
  int max_epochs = 500;
  int check_every = 3;   // epochs between validation checks
  int patience = 20;     // checks without improvement before stopping
  double lr = 1e-3;
  int batch_size = 32;
  double init_scale = 1.0;
  TaskType task_type = TaskType::multiclass;

  void validate() const;
};

/// The 8-point model-selection grid: hidden layers {1,2} x lr {1e-3,3e-4}
/// x init scale {1.0, 0.1}, carrying the base config's budget fields.
std::vector<ProbeConfig> default_probe_grid(const ProbeConfig& base);

struct SplitIndices {
  std::vector<int> train, val, test;
};

/// Deterministic shuffled split by fractions (test takes the remainder).
SplitIndices make_split(int n, double train_frac, double val_frac, uint64_t seed);

struct ProbeReport {
  std::string task_name;
  std::string metric_name;  // accuracy | mAP
  double value = 0.0;
  std::string chosen_config_id;
  int n_train = 0, n_val = 0, n_test = 0;
  int stopped_epoch = 0;  // where the chosen config's training halted
};

void save_probe_report(const ProbeReport& r, const std::string& path);

/// Shallow-MLP probe on frozen embeddings: every grid config is trained
/// with Adam and early stopping (checked every check_every epochs, patience
/// in checks, best-validation weights restored); the config with the best
/// validation metric is selected and its test metric reported.
/// X: [n, d]; Y: [n, C] one-/multi-hot.
ProbeReport train_probe(const Tensor& X, const Tensor& Y, const SplitIndices& split,
                        const std::vector<ProbeConfig>& grid, TaskType task_type,
                        uint64_t seed, const std::string& task_name = "probe");

/// accuracy: exact top-1 match fraction. mAP: macro mean over classes of
/// average precision (ranked by score, ties broken by index); classes with
/// zero positives are excluded from the mean.
double compute_metric(const Tensor& scores, const Tensor& labels, TaskType kind);

double accuracy_topk1(const Tensor& scores, const Tensor& labels);
double mean_average_precision(const Tensor& scores, const Tensor& labels);
double average_precision(const std::vector<double>& scores, const std::vector<int>& positives);

/// Builds [n, C] label matrix and the sorted class list from string labels.
std::pair<Tensor, std::vector<std::string>> one_hot_labels(
    const std::vector<std::string>& labels);

}  // namespace abt
