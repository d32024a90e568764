// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#define ABT_VERSION "0.1.0"

namespace abt {

/// Thrown for invalid user input (bad config, missing files, degenerate
/// data). The CLI maps these to exit code 1; everything else is exit code 2.
class UserError : public std::runtime_error {
 public:
  explicit UserError(const std::string& msg) : std::runtime_error(msg) {}
};

/// FNV-1a over raw bytes. Used to fingerprint configs in output artifacts.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace abt
