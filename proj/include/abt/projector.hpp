// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "abt/autodiff.hpp"

namespace abt {

struct ProjectorConfig {
  int in_dim = 2048;
  int hidden_dim = 8192;
  int out_dim = 1048;
  int n_hidden_layers = 1;

  void validate() const;
};

/// MLP head mapping representations to the embeddings the objective sees:
/// each hidden layer is linear -> batch-norm -> ReLU, the final layer is
/// linear only. n_hidden_layers == 0 degenerates to a single linear map
/// (needed for the projector-depth ablation grid).
class Projector {
 public:
  Projector(ParamStore& store, const ProjectorConfig& cfg, Rng& rng,
            const std::string& prefix = "proj");

  /// y: [B, in_dim] node. Training mode requires B >= 2 whenever a
  /// batch-norm layer is present ("batch norm undefined" otherwise).
  Tape::Id forward(Forward& fw, Tape::Id y);

  const ProjectorConfig& config() const { return cfg_; }

 private:
  struct Hidden {
    int w, b, bn_g, bn_b;
    int bn_mean, bn_var;
  };
  ProjectorConfig cfg_;
  std::vector<Hidden> hidden_;
  int out_w_, out_b_;
  ParamStore* store_;
};

}  // namespace abt
