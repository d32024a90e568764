// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/projector.hpp"

#include <stdexcept>

#include "abt/common.hpp"

namespace abt {

void ProjectorConfig::validate() const {
  if (in_dim <= 0 || hidden_dim <= 0 || out_dim <= 0 || n_hidden_layers < 0) {
    throw UserError("projector config: dims must be positive, depth >= 0");
  }
}

Projector::Projector(ParamStore& store, const ProjectorConfig& cfg, Rng& rng,
                     const std::string& prefix)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  int in = cfg_.in_dim;
  for (int i = 0; i < cfg_.n_hidden_layers; ++i) {
    const std::string p = prefix + ".hidden" + std::to_string(i);
    Hidden h;
    h.w = store.add(p + ".linear.weight", fanin_uniform({in, cfg_.hidden_dim}, in, rng));
    h.b = store.add(p + ".linear.bias", fanin_uniform({cfg_.hidden_dim}, in, rng));
    h.bn_g = store.add(p + ".bn.gamma", Tensor::full({cfg_.hidden_dim}, 1.0));
    h.bn_b = store.add(p + ".bn.beta", Tensor::zeros({cfg_.hidden_dim}));
    h.bn_mean = store.add_buffer(p + ".bn.running_mean", Tensor::zeros({cfg_.hidden_dim}));
    h.bn_var = store.add_buffer(p + ".bn.running_var", Tensor::full({cfg_.hidden_dim}, 1.0));
    hidden_.push_back(h);
    in = cfg_.hidden_dim;
  }
  out_w_ = store.add(prefix + ".out.weight", fanin_uniform({in, cfg_.out_dim}, in, rng));
  out_b_ = store.add(prefix + ".out.bias", fanin_uniform({cfg_.out_dim}, in, rng));
}

Tape::Id Projector::forward(Forward& fw, Tape::Id y) {
  Tape& tp = fw.tape;
  if (tp.val(y).rank() != 2) throw std::invalid_argument("projector: want [B,in_dim]");
  if (fw.training && !hidden_.empty() && tp.val(y).dim(0) < 2) {
    throw std::invalid_argument("batch norm undefined");
  }
  Tape::Id x = y;
  for (const Hidden& h : hidden_) {
    x = tp.linear(x, fw.param(h.w), fw.param(h.b));
    x = tp.batchnorm1d(x, fw.param(h.bn_g), fw.param(h.bn_b), &store_->buffer(h.bn_mean),
                       &store_->buffer(h.bn_var), fw.training);
    x = tp.relu(x);
  }
  return tp.linear(x, fw.param(out_w_), fw.param(out_b_));
}

}  // namespace abt
