// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <utility>

#include "abt/tensor.hpp"

namespace abt {

struct LossConfig {
  double alpha = 1.0;
  double lambda = 0.005;
  double std_floor = 1e-9;

  void validate() const;
};

/// Per-feature standardization along the batch dimension of Z [B,d]:
/// column j maps to (Z_.j - mean_j) / (std_j + std_floor) with population
/// (biased) std. The additive floor absorbs collapsed features without
/// perturbing healthy statistics above test tolerances.
Tensor batch_normalize(const Tensor& z, double std_floor = 1e-9);

/// C = (1/B) * Zh^T Zh' for batch-normalized inputs. The 1/B factor makes
/// the auto-correlation diagonal exactly 1 when the two views coincide,
/// which is what the invariance target (1 - C_ii)^2 assumes.
Tensor cross_correlation(const Tensor& zh, const Tensor& zh_prime);

struct LossTerms {
  double loss = 0.0;
  double invariance = 0.0;  // sum_i (1 - C_ii)^2
  double redundancy = 0.0;  // sum_{i != j} C_ij^2
};

LossTerms bt_loss_terms(const Tensor& c, const LossConfig& cfg);
double bt_loss(const Tensor& c, const LossConfig& cfg);

/// Exact analytic gradient of bt_loss(cross_correlation(batch_normalize(Z),
/// batch_normalize(Z'))) with respect to the raw Z and Z', including the
/// dependence through the batch statistics. This is the gradient source for
/// training; finite differences check it in the test suite.
std::pair<Tensor, Tensor> bt_loss_grad(const Tensor& z, const Tensor& z_prime,
                                       const LossConfig& cfg);

// Diagnostics used by the trainer's step metrics.
double offdiag_mean_abs(const Tensor& c);
double diag_mean(const Tensor& c);
/// Min over features of the per-feature batch std of raw embeddings
/// (population convention); the collapse indicator.
double feature_std_min(const Tensor& z);

}  // namespace abt
