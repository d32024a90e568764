// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abt/eval.hpp"
#include "abt/train.hpp"

namespace abt {

/// Paths section of a run config; any field may be overridden by CLI flags.
struct PathsConfig {
  std::string manifest;
  std::string stats;
  std::string out_dir = "runs/default";
  std::string checkpoint;
  std::string embeddings;
  std::string labels;
};

/// Probe section: the budget/task fields of the probe; grid variations
/// (hidden layers, lr, init scale) are fixed by default_probe_grid.
struct ProbeRunConfig {
  ProbeConfig base;
  double train_frac = 0.6;
  double val_frac = 0.2;
  uint64_t split_seed = 7;
};

/// Full run configuration: strict schema (unknown keys are rejected), CLI
/// flags override file values, and every run echoes the resolved config.
struct RunConfig {
  TrainConfig train;
  ProbeRunConfig probe;
  PathsConfig paths;
};

// Canonical JSON round-trips. Serialization is exhaustive, so a dump of the
// parsed config is the resolved config.
nlohmann::json mel_config_to_json(const MelConfig& c);
MelConfig mel_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& c, const std::string& path);

/// Applies "dotted.key=value" overrides (e.g. "train.batch_size=32").
void apply_override(RunConfig& cfg, const std::string& assignment);

uint64_t config_hash(const RunConfig& cfg);
uint64_t config_hash(const TrainConfig& cfg);

}  // namespace abt
