// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "abt/augment.hpp"
#include "abt/common.hpp"

using namespace abt;

namespace {

Spectrogram constant_spec(int f, int t, double v) { return Spectrogram(f, t, 10.0, v); }

Spectrogram random_spec(int f, int t, uint64_t seed) {
  Rng rng(seed);
  Spectrogram s(f, t, 10.0);
  for (auto& v : s.values) v = rng.normal();
  return s;
}

DatasetStats stats_of(double mean, double std) {
  DatasetStats s;
  s.mean = mean;
  s.std = std;
  s.n_cells = 1;
  return s;
}

}  // namespace

TEST_CASE("normalize identities") {
  const Spectrogram s = random_spec(8, 10, 1);
  const Spectrogram id = normalize(s, stats_of(0.0, 1.0));
  CHECK(id.values == s.values);

  const Spectrogram c = constant_spec(4, 4, 2.5);
  const Spectrogram z = normalize(c, stats_of(2.5, 3.0));
  for (double v : z.values) CHECK(v == doctest::Approx(0.0));

  Spectrogram two(1, 2, 10.0);
  two.at(0, 0) = 0.0;
  two.at(0, 1) = 2.0;
  const Spectrogram n = normalize(two, stats_of(1.0, 1.0));
  CHECK(n.at(0, 0) == doctest::Approx(-1.0));
  CHECK(n.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("pre_post_norm standardizes a batch") {
  std::vector<Spectrogram> batch = {random_spec(8, 12, 2), random_spec(8, 12, 3),
                                    random_spec(8, 12, 4)};
  for (auto& s : batch) {
    for (auto& v : s.values) v = 3.0 * v + 7.0;
  }
  const auto out = pre_post_norm(batch);
  MomentAccumulator acc;
  for (const auto& s : out) {
    for (double v : s.values) acc.add(v);
  }
  CHECK(std::abs(acc.mean()) <= 1e-6);
  CHECK(std::abs(std::sqrt(acc.variance()) - 1.0) <= 1e-6);

  // Idempotence within tolerance.
  const auto twice = pre_post_norm(out);
  for (size_t i = 0; i < out.size(); ++i) {
    for (size_t j = 0; j < out[i].values.size(); ++j) {
      CHECK(std::abs(twice[i].values[j] - out[i].values[j]) <= 1e-6);
    }
  }
}

TEST_CASE("pre_post_norm rejects degenerate batches") {
  std::vector<Spectrogram> batch = {constant_spec(4, 4, 1.0)};
  CHECK_THROWS_WITH_AS(pre_post_norm(batch), "degenerate batch", UserError);
}

TEST_CASE("mixup identities and the hand case") {
  const Spectrogram s = constant_spec(4, 6, std::log(4.0));
  const Spectrogram m = constant_spec(4, 6, std::log(1.0));

  const Spectrogram id = mixup_apply(s, m, 0.0);
  CHECK(id.values == s.values);  // exact

  const Spectrogram mixed = mixup_apply(s, m, 0.5);
  for (double v : mixed.values) CHECK(v == doctest::Approx(std::log(2.5)).epsilon(1e-12));
}

TEST_CASE("mixup with an empty queue returns the input and pushes it") {
  MixupQueue q(16);
  Rng rng(5);
  const Spectrogram s = random_spec(4, 6, 6);
  const Spectrogram out = mixup(s, q, 0.4, rng);
  CHECK(out.values == s.values);
  CHECK(q.size() == 1);
}

TEST_CASE("mixup rejects shape mismatches") {
  MixupQueue q(4);
  q.push(random_spec(4, 6, 7));
  CHECK_THROWS_AS(q.push(random_spec(4, 7, 8)), std::invalid_argument);
  CHECK_THROWS_AS(mixup_apply(random_spec(4, 6, 9), random_spec(5, 6, 10), 0.3),
                  std::invalid_argument);
}

TEST_CASE("mixup queue respects capacity and dominance") {
  MixupQueue q(3);
  Rng rng(11);
  for (int i = 0; i < 10; ++i) (void)mixup(random_spec(2, 3, 100 + static_cast<uint64_t>(i)), q, 0.5, rng);
  CHECK(q.size() == 3);

  // Incoming weight (1 - lambda) >= 0.5 whenever alpha <= 0.5.
  AugmentConfig cfg;
  cfg.mixup_alpha = 0.5;
  cfg.validate();
  for (int i = 0; i < 1000; ++i) {
    const double lambda = rng.uniform(0.0, cfg.mixup_alpha);
    CHECK(1.0 - lambda >= 0.5);
  }

  AugmentConfig bad;
  bad.mixup_alpha = 0.6;
  CHECK_THROWS_AS(bad.validate(), UserError);
}

TEST_CASE("rrc identity crop reproduces the input") {
  const Spectrogram s = random_spec(16, 24, 20);
  const RrcCrop crop{16, 24, 0, 0};
  const Spectrogram out = rrc_apply(s, crop, 0.0);
  for (size_t i = 0; i < s.values.size(); ++i) {
    CHECK(std::abs(out.values[i] - s.values[i]) <= 1e-6);
  }

  AugmentConfig cfg;
  cfg.rrc_freq_lo = cfg.rrc_freq_hi = 1.0;
  cfg.rrc_time_lo = cfg.rrc_time_hi = 1.0;
  Rng rng(21);
  const Spectrogram out2 = rrc(s, cfg, rng, 0.0);
  for (size_t i = 0; i < s.values.size(); ++i) {
    CHECK(std::abs(out2.values[i] - s.values[i]) <= 1e-6);
  }
}

TEST_CASE("rrc output shape is always F x T") {
  AugmentConfig cfg;
  for (uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const Spectrogram s = random_spec(64, 96, 1000 + seed);
    const Spectrogram out = rrc(s, cfg, rng, 0.0);
    CHECK(out.n_mels == 64);
    CHECK(out.n_frames == 96);
    bool finite = true;
    for (double v : out.values) finite = finite && std::isfinite(v);
    CHECK(finite);
  }
}

TEST_CASE("rrc lower-half crop moves a ridge from bin k to about 2k") {
  const int F = 64, T = 96;
  Spectrogram s(F, T, 10.0, 0.0);
  const int k = 10;
  for (int t = 0; t < T; ++t) s.at(k, t) = 5.0;

  const RrcCrop crop{F / 2, T, 0, 0};  // lower half of the frequency axis
  const Spectrogram out = rrc_apply(s, crop, 0.0);
  for (int t = 0; t < T; t += 7) {
    int argmax = 0;
    for (int f = 1; f < F; ++f) {
      if (out.at(f, t) > out.at(argmax, t)) argmax = f;
    }
    CHECK(argmax >= 2 * k);
    CHECK(argmax <= 2 * k + 1);
  }
}

TEST_CASE("rlf identities and ramp structure") {
  const Spectrogram s = random_spec(8, 96, 30);
  const Spectrogram id = rlf_apply(s, 0.0);
  CHECK(id.values == s.values);

  const Spectrogram out = rlf_apply(s, 1.0);
  for (int f = 0; f < 8; ++f) {
    CHECK(out.at(f, 0) == s.at(f, 0));
    CHECK(out.at(f, 95) == doctest::Approx(s.at(f, 95) + 1.0).epsilon(1e-12));
  }

  // out - in is a rank-1 ramp constant across frequency.
  const Spectrogram g = rlf_apply(s, -0.7);
  for (int t = 0; t < 96; ++t) {
    const double delta = g.at(0, t) - s.at(0, t);
    for (int f = 1; f < 8; ++f) {
      CHECK(g.at(f, t) - s.at(f, t) == doctest::Approx(delta).epsilon(1e-12));
    }
    CHECK(delta == doctest::Approx(-0.7 * t / 95.0).epsilon(1e-9));
  }
}

TEST_CASE("add_noise identity, variance oracle, determinism") {
  const Spectrogram s = random_spec(64, 96, 40);
  Rng rng(41);
  const Spectrogram id = add_noise(s, 0.0, rng);
  CHECK(id.values == s.values);

  // Forced lambda = 0.04: empirical per-cell variance within 20%.
  Rng rng2(42);
  const Spectrogram noisy = add_noise_lambda(s, 0.04, rng2);
  MomentAccumulator acc;
  for (size_t i = 0; i < s.values.size(); ++i) acc.add(noisy.values[i] - s.values[i]);
  CHECK(acc.n >= 6000);
  CHECK(acc.variance() == doctest::Approx(0.04).epsilon(0.2));

  Rng ra(43), rb(43);
  const Spectrogram n1 = add_noise(s, 0.2, ra);
  const Spectrogram n2 = add_noise(s, 0.2, rb);
  CHECK(n1.values == n2.values);
}

TEST_CASE("make_views with all blocks disabled is the normalized input twice") {
  AugmentConfig cfg;
  cfg.use_mixup = cfg.use_rrc = cfg.use_rlf = cfg.use_noise = false;
  MixupQueue q(8);
  const Spectrogram s = random_spec(8, 12, 50);
  const DatasetStats st = stats_of(0.3, 2.0);
  const ViewPair p = make_views(s, cfg, st, q, 99);
  const Spectrogram expect = normalize(s, st);
  CHECK(p.v1.values == expect.values);
  CHECK(p.v2.values == expect.values);
}

TEST_CASE("make_views is reproducible and shape-preserving") {
  AugmentConfig cfg;
  cfg.use_noise = true;
  MixupQueue q1(32), q2(32);
  const Spectrogram s = random_spec(64, 96, 51);
  const DatasetStats st = stats_of(0.0, 1.0);
  const ViewPair a = make_views(s, cfg, st, q1, 7);
  const ViewPair b = make_views(s, cfg, st, q2, 7);
  CHECK(a.v1.values == b.v1.values);
  CHECK(a.v2.values == b.v2.values);
  CHECK(a.v1.values != a.v2.values);  // independent view randomness
  CHECK(a.v1.n_mels == 64);
  CHECK(a.v1.n_frames == 96);
  CHECK(a.v2.n_mels == 64);
  CHECK(a.v2.n_frames == 96);
}

TEST_CASE("make_view_batch pre_post mode standardizes each view batch") {
  AugmentConfig cfg;
  cfg.norm_mode = NormMode::pre_post;
  MixupQueue q(64);
  std::vector<Spectrogram> raw;
  std::vector<uint64_t> seeds;
  for (uint64_t i = 0; i < 6; ++i) {
    raw.push_back(random_spec(16, 24, 600 + i));
    seeds.push_back(i);
  }
  const auto [v1, v2] = make_view_batch(raw, cfg, stats_of(0.0, 1.0), q, seeds);
  for (const auto* batch : {&v1, &v2}) {
    MomentAccumulator acc;
    for (const auto& s : *batch) {
      for (double v : s.values) acc.add(v);
    }
    CHECK(std::abs(acc.mean()) <= 1e-6);
    CHECK(std::abs(std::sqrt(acc.variance()) - 1.0) <= 1e-6);
  }
}

TEST_CASE("mask_patches arithmetic") {
  Rng rng(60);
  const MaskPlan p1 = mask_patches(48, 0.2, rng);
  CHECK(p1.masked.size() == 10);
  CHECK(p1.kept.size() == 38);

  const MaskPlan p2 = mask_patches(48, 0.0, rng);
  CHECK(p2.masked.empty());
  std::set<int> kept(p2.kept.begin(), p2.kept.end());
  CHECK(kept.size() == 48);
  CHECK(*kept.begin() == 0);
  CHECK(*kept.rbegin() == 47);

  const MaskPlan p3 = mask_patches(48, 0.5, rng);
  CHECK(p3.masked.size() == 24);

  CHECK_THROWS_AS(mask_patches(48, 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(mask_patches(48, -0.1, rng), std::invalid_argument);
  CHECK_THROWS_AS(mask_patches(0, 0.1, rng), std::invalid_argument);
}

TEST_CASE("mask_patches partition property over 1000 random triples") {
  Rng meta(61);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(meta.uniform_int(1, 128));
    const double r = meta.uniform(0.0, 0.999);
    Rng rng(static_cast<uint64_t>(trial));
    const MaskPlan p = mask_patches(n, r, rng);
    CHECK(static_cast<int>(p.masked.size()) == static_cast<int>(std::llround(r * n)));
    std::set<int> all(p.kept.begin(), p.kept.end());
    for (int m : p.masked) {
      const bool inserted = all.insert(m).second;
      CHECK(inserted);  // disjoint
    }
    CHECK(static_cast<int>(all.size()) == n);
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == n - 1);
  }
}

TEST_CASE("masking_ratio_at schedule") {
  CHECK(masking_ratio_at(0, 0.3, 100, 10) == doctest::Approx(0.0));
  CHECK(masking_ratio_at(9, 0.3, 100, 10) == doctest::Approx(0.0));
  CHECK(masking_ratio_at(100, 0.3, 100, 10) == doctest::Approx(0.3));
  CHECK(masking_ratio_at(55, 0.3, 100, 10) ==
        doctest::Approx(0.3 * std::sqrt(2.0) / 2.0).epsilon(1e-12));

  double prev = -1.0;
  for (int e = 0; e <= 100; ++e) {
    const double r = masking_ratio_at(e, 0.3, 100, 10);
    CHECK(r >= prev);
    prev = r;
  }
}

TEST_CASE("augmentations preserve shape and finiteness") {
  AugmentConfig cfg;
  cfg.use_noise = true;
  MixupQueue q(64);
  const DatasetStats st = stats_of(0.0, 1.0);
  for (uint64_t seed = 0; seed < 25; ++seed) {
    const Spectrogram s = random_spec(32, 48, 700 + seed);
    const ViewPair p = make_views(s, cfg, st, q, seed);
    for (const Spectrogram* v : {&p.v1, &p.v2}) {
      CHECK(v->n_mels == 32);
      CHECK(v->n_frames == 48);
      bool finite = true;
      for (double x : v->values) finite = finite && std::isfinite(x);
      CHECK(finite);
    }
  }
}
