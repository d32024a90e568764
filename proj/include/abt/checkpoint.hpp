// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "abt/tensor.hpp"

namespace abt {

/// Binary checkpoint container:
///   magic "ABTCKPT1" | u64 header_len | JSON header | raw little-endian
///   f64 tensor blobs | u32 CRC32 trailer (over everything preceding it).
/// The JSON header carries format_version, a config snapshot, counters, the
/// RNG note and a tensor directory (name -> shape/offset). Serialization is
/// canonical, so save -> load -> save reproduces identical bytes.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  nlohmann::json config;  // full resolved config snapshot
  int64_t epoch = 0;
  int64_t step = 0;
  nlohmann::json extra;   // rng seed/counters, running metrics, queue meta
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Throws "corrupt checkpoint" on bad magic/CRC/truncation and a distinct
/// incompatibility error on a format_version mismatch.
Checkpoint load_checkpoint(const std::string& path);

/// CRC32 (IEEE, reflected) used for the checkpoint trailer.
uint32_t crc32_ieee(const void* data, size_t n, uint32_t seed = 0);

/// Fingerprint of a checkpoint file used for embedding provenance.
uint64_t checkpoint_hash(const std::string& path);

}  // namespace abt
