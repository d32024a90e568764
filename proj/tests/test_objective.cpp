// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "abt/objective.hpp"
#include "oracles.hpp"

using namespace abt;

namespace {

Tensor embedding(std::vector<int64_t> shape, uint64_t seed) {
  Rng rng(seed);
  return randn(std::move(shape), rng);
}

double production_loss(const Tensor& z, const Tensor& zp, const LossConfig& cfg) {
  return bt_loss(cross_correlation(batch_normalize(z, cfg.std_floor),
                                   batch_normalize(zp, cfg.std_floor)),
                 cfg);
}

}  // namespace

TEST_CASE("batch_normalize leaves standardized columns fixed") {
  Tensor z({2, 1}, {1.0, -1.0});
  const Tensor out = batch_normalize(z);
  CHECK(out.at(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(out.at(1, 0) == doctest::Approx(-1.0).epsilon(1e-8));
}

TEST_CASE("batch_normalize flattens constant columns") {
  Tensor z({3, 2}, {4.0, 1.0, 4.0, 2.0, 4.0, 3.0});
  const Tensor out = batch_normalize(z);
  for (int64_t b = 0; b < 3; ++b) CHECK(std::abs(out.at(b, 0)) <= 1e-9);
}

TEST_CASE("batch_normalize output columns have zero mean") {
  const Tensor z = embedding({7, 5}, 11);
  const Tensor out = batch_normalize(z);
  for (int64_t j = 0; j < 5; ++j) {
    double mean = 0.0;
    for (int64_t b = 0; b < 7; ++b) mean += out.at(b, j);
    CHECK(std::abs(mean / 7.0) <= 1e-9);
  }
}

TEST_CASE("batch_normalize rejects singleton batches") {
  Tensor z({1, 3}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(batch_normalize(z), std::invalid_argument);
}

TEST_CASE("cross_correlation of orthogonal standardized columns is identity") {
  Tensor z({4, 2}, {1, 1, -1, 1, 1, -1, -1, -1});
  const Tensor c = cross_correlation(z, z);
  CHECK(c.at(0, 0) == doctest::Approx(1.0));
  CHECK(c.at(1, 1) == doctest::Approx(1.0));
  CHECK(c.at(0, 1) == doctest::Approx(0.0));
  CHECK(c.at(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("cross_correlation of duplicated columns is all ones") {
  // Both columns equal [1,-1,1,-1]: (1/B) Z^T Z' has every entry 1.
  Tensor z({4, 2}, {1, 1, -1, -1, 1, 1, -1, -1});
  const Tensor c = cross_correlation(z, z);
  for (int64_t i = 0; i < 2; ++i) {
    for (int64_t j = 0; j < 2; ++j) CHECK(c.at(i, j) == doctest::Approx(1.0));
  }
}

TEST_CASE("cross_correlation transposes when arguments swap") {
  const Tensor a = batch_normalize(embedding({5, 3}, 21));
  const Tensor b = batch_normalize(embedding({5, 3}, 22));
  const Tensor c1 = cross_correlation(a, b);
  const Tensor c2 = cross_correlation(b, a);
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t j = 0; j < 3; ++j) CHECK(c1.at(i, j) == c2.at(j, i));
  }
}

TEST_CASE("Eq-convention: self cross-correlation diagonal is 1") {
  for (int64_t B : {2, 3, 8, 32}) {
    for (int64_t d : {1, 4, 9}) {
      const Tensor zh = batch_normalize(embedding({B, d}, static_cast<uint64_t>(B * 100 + d)));
      const Tensor c = cross_correlation(zh, zh);
      for (int64_t i = 0; i < d; ++i) CHECK(std::abs(c.at(i, i) - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("bt_loss basics") {
  LossConfig cfg;
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  CHECK(bt_loss(eye, cfg) == doctest::Approx(0.0));

  Tensor ones = Tensor::full({2, 2}, 1.0);
  CHECK(bt_loss(ones, cfg) == doctest::Approx(0.01).epsilon(1e-12));  // 0.005 * 2

  Tensor zeros({4, 4});
  CHECK(bt_loss(zeros, cfg) == doctest::Approx(4.0));  // d * (1-0)^2
}

TEST_CASE("bt_loss matches the brute-force oracle on 100 random instances") {
  LossConfig cfg;
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t B = rng.uniform_int(2, 8);
    const int64_t d = rng.uniform_int(1, 6);
    const Tensor z = embedding({B, d}, static_cast<uint64_t>(1000 + trial));
    const Tensor zp = embedding({B, d}, static_cast<uint64_t>(2000 + trial));
    const double prod = production_loss(z, zp, cfg);
    const double oracle = oracles::bruteforce_bt_loss(z, zp, cfg);
    CHECK(std::abs(prod - oracle) <= 1e-12);
  }
}

TEST_CASE("loss symmetry under argument swap") {
  LossConfig cfg;
  const Tensor z = embedding({6, 4}, 31);
  const Tensor zp = embedding({6, 4}, 32);
  CHECK(production_loss(z, zp, cfg) == production_loss(zp, z, cfg));
}

TEST_CASE("normalized cross-correlation entries are bounded") {
  const Tensor z = embedding({16, 8}, 41);
  const Tensor zp = embedding({16, 8}, 42);
  const Tensor c = cross_correlation(batch_normalize(z), batch_normalize(zp));
  for (double v : c.data) CHECK(std::abs(v) <= 1.0 + 1e-6);
}

TEST_CASE("lambda = 0 reduces to the invariance term; the ablation grid runs") {
  const Tensor z = embedding({8, 5}, 51);
  const Tensor zp = embedding({8, 5}, 52);
  for (double lambda : {0.0, 0.0005, 0.005, 0.05, 0.5}) {
    LossConfig cfg;
    cfg.lambda = lambda;
    const Tensor c = cross_correlation(batch_normalize(z), batch_normalize(zp));
    const LossTerms t = bt_loss_terms(c, cfg);
    CHECK(t.loss == doctest::Approx(cfg.alpha * t.invariance + lambda * t.redundancy));
    if (lambda == 0.0) CHECK(t.loss == doctest::Approx(t.invariance));
  }
}

TEST_CASE("gradient vanishes at the perfect-alignment optimum") {
  // Z == Z' with orthogonal standardized columns: C = I, a minimum.
  Tensor z({4, 2}, {1, 1, -1, 1, 1, -1, -1, -1});
  LossConfig cfg;
  const auto [g1, g2] = bt_loss_grad(z, z, cfg);
  for (double v : g1.data) CHECK(std::abs(v) <= 1e-6);
  for (double v : g2.data) CHECK(std::abs(v) <= 1e-6);
}

TEST_CASE("analytic gradient matches central finite differences") {
  LossConfig cfg;
  const Tensor z0 = embedding({4, 3}, 61);
  const Tensor zp0 = embedding({4, 3}, 62);
  const auto [g1, g2] = bt_loss_grad(z0, zp0, cfg);

  for (double step : {1e-6, 4e-6}) {
    auto f_z = [&](const std::vector<double>& flat) {
      Tensor z({4, 3}, flat);
      return production_loss(z, zp0, cfg);
    };
    auto f_zp = [&](const std::vector<double>& flat) {
      Tensor zp({4, 3}, flat);
      return production_loss(z0, zp, cfg);
    };
    const auto n1 = oracles::finite_diff_grad(
        f_z, std::vector<double>(z0.data.begin(), z0.data.end()), step);
    const auto n2 = oracles::finite_diff_grad(
        f_zp, std::vector<double>(zp0.data.begin(), zp0.data.end()), step);
    for (size_t i = 0; i < n1.size(); ++i) {
      CHECK(std::abs(g1[static_cast<int64_t>(i)] - n1[i]) /
                std::max(1e-3, std::abs(n1[i])) <=
            1e-5);
      CHECK(std::abs(g2[static_cast<int64_t>(i)] - n2[i]) /
                std::max(1e-3, std::abs(n2[i])) <=
            1e-5);
    }
  }
}

TEST_CASE("loss is invariant to per-feature affine rescaling of raw inputs") {
  LossConfig cfg;
  const Tensor z = embedding({6, 4}, 71);
  const Tensor zp = embedding({6, 4}, 72);
  const double base = production_loss(z, zp, cfg);

  Tensor scaled = z;
  for (int64_t b = 0; b < 6; ++b) scaled.at(b, 2) *= 10.0;
  CHECK(std::abs(production_loss(scaled, zp, cfg) - base) <= 1e-9);

  Tensor shifted = zp;
  for (int64_t b = 0; b < 6; ++b) shifted.at(b, 1) += 3.5;
  CHECK(std::abs(production_loss(z, shifted, cfg) - base) <= 1e-9);
}

TEST_CASE("diagnostics: offdiag mean, diag mean, feature std") {
  Tensor c({2, 2}, {1.0, 0.5, -0.25, 0.75});
  CHECK(offdiag_mean_abs(c) == doctest::Approx(0.375));
  CHECK(diag_mean(c) == doctest::Approx(0.875));

  Tensor z({2, 2}, {0.0, 5.0, 2.0, 5.0});
  CHECK(feature_std_min(z) == doctest::Approx(0.0));  // constant second feature
}
