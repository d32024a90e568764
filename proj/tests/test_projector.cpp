// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "abt/projector.hpp"
#include "oracles.hpp"

using namespace abt;

namespace {

Tensor rand_t(std::vector<int64_t> shape, uint64_t seed) {
  Rng rng(seed);
  return randn(std::move(shape), rng);
}

}  // namespace

TEST_CASE("default layer chain: in -> 8192 -> 1048") {
  ParamStore store;
  Rng rng(1);
  ProjectorConfig cfg;
  cfg.in_dim = 64;
  Projector proj(store, cfg, rng);
  Forward fw(store, /*train=*/true, Rng(0));
  const Tape::Id z = proj.forward(fw, fw.tape.leaf(rand_t({2, 64}, 2)));
  CHECK(fw.tape.val(z).shape == std::vector<int64_t>{2, 1048});

  // The hidden layer is 8192-wide: its bn gamma parameter says so.
  bool found = false;
  for (int i = 0; i < store.n_params(); ++i) {
    if (store.param(i).name == "proj.hidden0.bn.gamma") {
      CHECK(store.param(i).value.numel() == 8192);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("zero hidden layers degenerates to one linear map") {
  ParamStore store;
  Rng rng(3);
  ProjectorConfig cfg;
  cfg.in_dim = 12;
  cfg.out_dim = 5;
  cfg.n_hidden_layers = 0;
  Projector proj(store, cfg, rng);
  CHECK(store.n_params() == 2);  // weight + bias only

  // And a singleton batch is fine without batch norm.
  Forward fw(store, /*train=*/true, Rng(0));
  const Tape::Id z = proj.forward(fw, fw.tape.leaf(rand_t({1, 12}, 4)));
  CHECK(fw.tape.val(z).shape == std::vector<int64_t>{1, 5});
}

TEST_CASE("zero-initialized final layer yields zero embeddings") {
  ParamStore store;
  Rng rng(5);
  ProjectorConfig cfg;
  cfg.in_dim = 8;
  cfg.hidden_dim = 16;
  cfg.out_dim = 4;
  Projector proj(store, cfg, rng);
  for (int i = 0; i < store.n_params(); ++i) {
    auto& p = store.param(i);
    if (p.name == "proj.out.weight" || p.name == "proj.out.bias") {
      std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    }
  }
  Forward fw(store, /*train=*/true, Rng(0));
  const Tensor& z = fw.tape.val(proj.forward(fw, fw.tape.leaf(rand_t({3, 8}, 6))));
  for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("training mode rejects singleton batches when batch norm is present") {
  ParamStore store;
  Rng rng(7);
  ProjectorConfig cfg;
  cfg.in_dim = 8;
  cfg.hidden_dim = 16;
  cfg.out_dim = 4;
  Projector proj(store, cfg, rng);
  Forward fw(store, /*train=*/true, Rng(0));
  CHECK_THROWS_WITH_AS(proj.forward(fw, fw.tape.leaf(rand_t({1, 8}, 8))),
                       "batch norm undefined", std::invalid_argument);

  // Inference mode uses running stats and accepts B = 1.
  Forward fe(store, /*train=*/false);
  CHECK(fe.tape.val(proj.forward(fe, fe.tape.leaf(rand_t({1, 8}, 9)))).shape ==
        std::vector<int64_t>{1, 4});
}

TEST_CASE("output shape contract across the ablation sweep grid") {
  for (int depth : {0, 1, 2, 3, 4}) {
    for (int out_dim : {64, 256, 1048, 16384}) {
      ParamStore store;
      Rng rng(10);
      ProjectorConfig cfg;
      cfg.in_dim = 16;
      cfg.hidden_dim = 24;
      cfg.out_dim = out_dim;
      cfg.n_hidden_layers = depth;
      Projector proj(store, cfg, rng);
      Forward fw(store, /*train=*/true, Rng(0));
      const Tape::Id z = proj.forward(fw, fw.tape.leaf(rand_t({3, 16}, 11)));
      CHECK(fw.tape.val(z).shape == std::vector<int64_t>{3, out_dim});
    }
  }
}

TEST_CASE("projector gradcheck (small dims, double precision)") {
  ParamStore store;
  Rng rng(12);
  ProjectorConfig cfg;
  cfg.in_dim = 6;
  cfg.hidden_dim = 10;
  cfg.out_dim = 4;
  Projector proj(store, cfg, rng);
  const Tensor x = rand_t({4, 6}, 13);

  Rng wrng(14);
  Tensor w;
  {
    Forward fw(store, true, Rng(0));
    w = randn(fw.tape.val(proj.forward(fw, fw.tape.leaf(x))).shape, wrng);
  }
  auto loss = [&]() {
    Forward fw(store, true, Rng(0));
    const Tensor& v = fw.tape.val(proj.forward(fw, fw.tape.leaf(x)));
    double s = 0.0;
    for (int64_t i = 0; i < v.numel(); ++i) s += w[i] * v[i];
    return s;
  };
  store.zero_grads();
  {
    Forward fw(store, true, Rng(0));
    const Tape::Id z = proj.forward(fw, fw.tape.leaf(x));
    fw.tape.backward({{z, w}});
    fw.flush_grads();
  }
  double max_rel = 0.0;
  for (int pid = 0; pid < store.n_params(); ++pid) {
    auto& p = store.param(pid);
    for (int64_t i = 0; i < p.value.numel(); i += std::max<int64_t>(1, p.value.numel() / 5)) {
      const double orig = p.value[i];
      p.value[i] = orig + 1e-6;
      const double fp = loss();
      p.value[i] = orig - 1e-6;
      const double fm = loss();
      p.value[i] = orig;
      const double numeric = (fp - fm) / 2e-6;
      max_rel = std::max(max_rel,
                         std::abs(numeric - p.grad[i]) / std::max(1e-3, std::abs(numeric)));
    }
  }
  CHECK(max_rel < 1e-3);
}
