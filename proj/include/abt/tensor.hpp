// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "abt/rng.hpp"

namespace abt {

/// 64-byte-aligned allocator for tensor storage. Keeping every buffer in
/// one alignment class makes the vectorized GEMM peeling identical across
/// allocations, so results are bit-stable run to run.
template <typename T, std::size_t Alignment = 64>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Alignment>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Alignment)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p, n * sizeof(T), std::align_val_t(Alignment));
  }
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Alignment>;
  };
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
  friend bool operator!=(const AlignedAllocator&, const AlignedAllocator&) { return false; }
};

using DVec = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of doubles. All model math in this project runs in
/// double precision; float32 appears only at the storage boundary
/// (embedding export, optional parameter rounding).
struct Tensor {
  std::vector<int64_t> shape;
  DVec data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(count(shape), 0.0) {}
  Tensor(std::vector<int64_t> s, const std::vector<double>& d)
      : shape(std::move(s)), data(d.begin(), d.end()) {}

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int64_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  double& at(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  double at(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  double& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  double at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  /// Same data, new shape (element count must match).
  Tensor reshaped(std::vector<int64_t> s) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const;
  std::string shape_str() const;
};

// Common initializers (documented conventions: truncated normal for
// transformer weights, fan-in-scaled uniform for conv/FC).
Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0);
Tensor trunc_normal(std::vector<int64_t> shape, Rng& rng, double stddev = 0.02);
Tensor fanin_uniform(std::vector<int64_t> shape, int64_t fan_in, Rng& rng);

}  // namespace abt
