// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "abt/common.hpp"
#include "abt/encoder.hpp"
#include "abt/projector.hpp"
#include "oracles.hpp"

using namespace abt;

namespace {

Spectrogram random_spec(int f, int t, uint64_t seed) {
  Rng rng(seed);
  Spectrogram s(f, t, 10.0);
  for (auto& v : s.values) v = rng.normal();
  return s;
}

Tensor random_batch(int b, int f, int t, uint64_t seed) {
  Rng rng(seed);
  return randn({b, f, t}, rng);
}

/// Parameter-space gradcheck: scalar loss = weighted sum of the model
/// output; every parameter tensor is probed at a few coordinates.
double param_gradcheck_max_rel_err(ParamStore& store,
                                   const std::function<Tape::Id(Forward&)>& forward,
                                   int probes_per_param = 3, double step = 1e-5) {
  Rng wrng(777);
  Tensor weights;
  {
    Forward fw(store, /*train=*/true, Rng(1));
    const Tape::Id out = forward(fw);
    weights = randn(fw.tape.val(out).shape, wrng);
  }
  auto loss = [&]() {
    Forward fw(store, /*train=*/true, Rng(1));
    const Tape::Id out = forward(fw);
    const Tensor& v = fw.tape.val(out);
    double s = 0.0;
    for (int64_t i = 0; i < v.numel(); ++i) s += weights[i] * v[i];
    return s;
  };
  // Analytic gradients.
  store.zero_grads();
  {
    Forward fw(store, /*train=*/true, Rng(1));
    const Tape::Id out = forward(fw);
    fw.tape.backward({{out, weights}});
    fw.flush_grads();
  }
  double max_rel = 0.0;
  Rng pick(31337);
  for (int pid = 0; pid < store.n_params(); ++pid) {
    auto& p = store.param(pid);
    for (int probe = 0; probe < probes_per_param; ++probe) {
      const int64_t i = pick.uniform_int(0, p.value.numel() - 1);
      const double orig = p.value[i];
      p.value[i] = orig + step;
      const double fp = loss();
      p.value[i] = orig - step;
      const double fm = loss();
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double rel = std::abs(numeric - p.grad[i]) / std::max(1e-3, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace

TEST_CASE("patchify grids: 16x8 and 64x2 both give N = 48 on 64x96") {
  const Spectrogram s = random_spec(64, 96, 1);
  const Tensor p1 = patchify(s, 16, 8);
  CHECK(p1.dim(0) == 48);  // grid 4 x 12
  CHECK(p1.dim(1) == 128);
  const Tensor p2 = patchify(s, 64, 2);
  CHECK(p2.dim(0) == 48);  // grid 1 x 48
  CHECK(p2.dim(1) == 128);
  CHECK_THROWS_AS(patchify(s, 16, 7), std::invalid_argument);
}

TEST_CASE("patchify partition: reassembly is bit-exact") {
  const Spectrogram s = random_spec(64, 96, 2);
  const int ph = 16, pw = 8;
  const Tensor p = patchify(s, ph, pw);
  const int gt = s.n_frames / pw;
  Spectrogram rebuilt(s.n_mels, s.n_frames, s.frame_hop_ms);
  for (int64_t patch = 0; patch < p.dim(0); ++patch) {
    const int fi = static_cast<int>(patch) / gt;
    const int ti = static_cast<int>(patch) % gt;
    for (int i = 0; i < ph; ++i) {
      for (int j = 0; j < pw; ++j) {
        rebuilt.at(fi * ph + i, ti * pw + j) = p.at(patch, static_cast<int64_t>(i) * pw + j);
      }
    }
  }
  CHECK(rebuilt.values == s.values);
}

TEST_CASE("sinusoidal positional encoding") {
  const Tensor pe = sinusoidal_posenc(32, 16);
  for (int i = 0; i < 16; i += 2) {
    CHECK(pe.at(0, i) == doctest::Approx(0.0));
    CHECK(pe.at(0, i + 1) == doctest::Approx(1.0));
  }
  for (double v : pe.data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(sinusoidal_posenc(4, 3), std::invalid_argument);
}

TEST_CASE("sinusoidal positional encodings are distinct up to 10000 positions") {
  const int n = 10000, dim = 32;
  const Tensor pe = sinusoidal_posenc(n, dim);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  auto row_less = [&](int a, int b) {
    for (int d = 0; d < dim; ++d) {
      if (pe.at(a, d) != pe.at(b, d)) return pe.at(a, d) < pe.at(b, d);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), row_less);
  for (int i = 0; i + 1 < n; ++i) {
    bool equal = true;
    for (int d = 0; d < dim; ++d) {
      if (pe.at(order[static_cast<size_t>(i)], d) != pe.at(order[static_cast<size_t>(i + 1)], d)) {
        equal = false;
        break;
      }
    }
    CHECK(!equal);
  }
}

TEST_CASE("audiontt forward shapes with defaults") {
  ParamStore store;
  Rng rng(3);
  AudioNTTConfig cfg;  // 3 blocks, 64 channels, fc 2048
  AudioNTT enc(store, cfg, rng);
  Forward fw(store, /*train=*/true, Rng(0));
  const Tape::Id out = enc.forward(fw, random_batch(8, 64, 96, 4));
  CHECK(fw.tape.val(out).shape == std::vector<int64_t>{8, 2048});
}

TEST_CASE("audiontt constant batch maps to equal representations") {
  ParamStore store;
  Rng rng(5);
  AudioNTTConfig cfg;
  cfg.conv_channels = 8;
  cfg.fc_width = 32;
  AudioNTT enc(store, cfg, rng);
  Tensor batch = Tensor::full({4, 64, 16}, 0.25);
  Forward fw(store, /*train=*/true, Rng(0));
  const Tensor& y = fw.tape.val(enc.forward(fw, batch));
  for (int64_t b = 1; b < 4; ++b) {
    for (int64_t d = 0; d < 32; ++d) {
      CHECK(y.at(b, d) == doctest::Approx(y.at(0, d)).epsilon(1e-12));
    }
  }
}

TEST_CASE("audiontt absorbs temporal length and rejects bad mel counts") {
  ParamStore store;
  Rng rng(6);
  AudioNTTConfig cfg;
  cfg.conv_channels = 8;
  cfg.fc_width = 32;
  AudioNTT enc(store, cfg, rng);

  Forward fw1(store, true, Rng(0));
  const auto& y1 = fw1.tape.val(enc.forward(fw1, random_batch(2, 64, 96, 7)));
  Forward fw2(store, true, Rng(0));
  const auto& y2 = fw2.tape.val(enc.forward(fw2, random_batch(2, 64, 192, 8)));
  CHECK(y1.shape == y2.shape);

  Forward fw3(store, true, Rng(0));
  CHECK_THROWS_AS(enc.forward(fw3, random_batch(2, 60, 96, 9)), std::invalid_argument);

  AudioNTTConfig bad;
  bad.n_mels = 60;  // not divisible by 2^3
  CHECK_THROWS_AS(AudioNTT(store, bad, rng), abt::UserError);
}

TEST_CASE("vit size table and masked token bookkeeping") {
  const ViTConfig b = ViTConfig::from_size('B');
  CHECK(b.dim == 768);
  CHECK(b.depth == 12);
  CHECK(b.heads == 12);
  const ViTConfig t = ViTConfig::from_size('T');
  CHECK(t.dim == 192);
  CHECK(t.heads == 3);
  CHECK(t.n_patches(64, 96) == 48);

  // r = 0.5 on 48 patches: attention runs over ceil(48/2) + 1 tokens.
  CHECK(ViT::attention_tokens(48, 0.5) == 25);
  CHECK(ViT::attention_tokens(48, 0.2) == 39);  // 48 - 10 + CLS
}

TEST_CASE("vit size-T forward emits a 192-dim CLS representation") {
  ParamStore store;
  Rng rng(10);
  ViTConfig cfg = ViTConfig::from_size('T');
  ViT enc(store, cfg, rng);
  Forward fw(store, /*train=*/false);
  const Tape::Id out = enc.forward(fw, random_batch(1, 64, 96, 11));
  CHECK(fw.tape.val(out).shape == std::vector<int64_t>{1, 192});
}

TEST_CASE("vit: r = 0 mask plan equals no masking") {
  ParamStore store;
  Rng rng(12);
  ViTConfig cfg;
  cfg.dim = 32;
  cfg.depth = 2;
  cfg.heads = 2;
  ViT enc(store, cfg, rng);
  const Tensor batch = random_batch(2, 64, 96, 13);

  Forward fw1(store, false);
  const Tensor y1 = fw1.tape.val(enc.forward(fw1, batch));

  Rng mask_rng(14);
  std::vector<MaskPlan> plans = {mask_patches(48, 0.0, mask_rng), mask_patches(48, 0.0, mask_rng)};
  Forward fw2(store, false);
  const Tensor y2 = fw2.tape.val(enc.forward(fw2, batch, &plans));
  for (int64_t i = 0; i < y1.numel(); ++i) {
    CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
  }
}

TEST_CASE("vit CLS output is equivariant to token order (positions tied)") {
  ParamStore store;
  Rng rng(15);
  ViTConfig cfg;
  cfg.dim = 32;
  cfg.depth = 2;
  cfg.heads = 2;
  ViT enc(store, cfg, rng);
  const Tensor batch = random_batch(1, 64, 96, 16);

  Rng ident(1), perm(2);
  std::vector<MaskPlan> id_plan = {mask_patches(48, 0.0, ident)};   // some shuffle order
  std::vector<MaskPlan> perm_plan = {mask_patches(48, 0.0, perm)};  // another order

  Forward fw1(store, false);
  const Tensor y1 = fw1.tape.val(enc.forward(fw1, batch, &id_plan));
  Forward fw2(store, false);
  const Tensor y2 = fw2.tape.val(enc.forward(fw2, batch, &perm_plan));
  for (int64_t i = 0; i < y1.numel(); ++i) {
    CHECK(std::abs(y1[i] - y2[i]) <= 1e-5);
  }
}

TEST_CASE("vit masking drops tokens before the blocks") {
  ParamStore store;
  Rng rng(17);
  ViTConfig cfg;
  cfg.dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  ViT enc(store, cfg, rng);
  const Tensor batch = random_batch(2, 64, 96, 18);
  Rng mask_rng(19);
  std::vector<MaskPlan> plans = {mask_patches(48, 0.2, mask_rng),
                                 mask_patches(48, 0.2, mask_rng)};
  CHECK(plans[0].masked.size() == 10);
  Forward fw(store, true, Rng(0));
  const Tape::Id out = enc.forward(fw, batch, &plans);
  CHECK(fw.tape.val(out).shape == std::vector<int64_t>{2, 16});

  // Empty kept set is rejected.
  std::vector<MaskPlan> empty_plans = {MaskPlan{{}, plans[0].kept, 1.0}, plans[1]};
  empty_plans[0].masked.insert(empty_plans[0].masked.end(), plans[0].masked.begin(),
                               plans[0].masked.end());
  Forward fw2(store, true, Rng(0));
  CHECK_THROWS_AS(enc.forward(fw2, batch, &empty_plans), std::invalid_argument);
}

TEST_CASE("vit_c stem produces the patch-grid token count") {
  ParamStore store;
  Rng rng(20);
  ViTConfig cfg;
  cfg.variant = "vit_c";
  cfg.dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  ViT enc(store, cfg, rng);
  CHECK(enc.kind() == "vit_c");

  // Mask plans index the same N = 48 grid as 16x8 patchification.
  const Tensor batch = random_batch(2, 64, 96, 21);
  Rng mask_rng(22);
  std::vector<MaskPlan> plans = {mask_patches(48, 0.25, mask_rng),
                                 mask_patches(48, 0.25, mask_rng)};
  Forward fw(store, true, Rng(0));
  const Tape::Id out = enc.forward(fw, batch, &plans);
  CHECK(fw.tape.val(out).shape == std::vector<int64_t>{2, 16});

  ViTConfig bad = cfg;
  bad.patch_h = 64;  // conv stem cannot reach 64x downsampling in 4 layers
  CHECK_THROWS_AS(ViT(store, bad, rng), abt::UserError);
}

TEST_CASE("vit inference is deterministic") {
  ParamStore store;
  Rng rng(23);
  ViTConfig cfg;
  cfg.dim = 32;
  cfg.depth = 2;
  cfg.heads = 2;
  ViT enc(store, cfg, rng);
  const Tensor batch = random_batch(2, 64, 96, 24);
  Forward fw1(store, false);
  Forward fw2(store, false);
  CHECK(fw1.tape.val(enc.forward(fw1, batch)).data ==
        fw2.tape.val(enc.forward(fw2, batch)).data);
}

TEST_CASE("gradient check: tiny vit (dim 16, depth 1)") {
  ParamStore store;
  Rng rng(30);
  ViTConfig cfg;
  cfg.dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  ViT enc(store, cfg, rng);
  const Tensor batch = random_batch(2, 64, 96, 31);
  const double err = param_gradcheck_max_rel_err(
      store, [&](Forward& fw) { return enc.forward(fw, batch); });
  CHECK(err < 1e-3);
}

TEST_CASE("gradient check: tiny vit_c conv stem") {
  ParamStore store;
  Rng rng(32);
  ViTConfig cfg;
  cfg.variant = "vit_c";
  cfg.dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  ViT enc(store, cfg, rng);
  const Tensor batch = random_batch(2, 64, 32, 33);
  const double err = param_gradcheck_max_rel_err(
      store, [&](Forward& fw) { return enc.forward(fw, batch); }, 2);
  CHECK(err < 1e-3);
}

TEST_CASE("gradient check: tiny audiontt") {
  ParamStore store;
  Rng rng(34);
  AudioNTTConfig cfg;
  cfg.conv_channels = 4;
  cfg.fc_width = 16;
  cfg.n_mels = 16;
  AudioNTT enc(store, cfg, rng);
  const Tensor batch = random_batch(2, 16, 16, 35);
  const double err = param_gradcheck_max_rel_err(
      store, [&](Forward& fw) { return enc.forward(fw, batch); });
  CHECK(err < 1e-3);
}
