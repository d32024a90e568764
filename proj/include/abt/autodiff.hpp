// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "abt/rng.hpp"
#include "abt/tensor.hpp"

namespace abt {

/// Reverse-mode autodiff over a linear tape of tensor ops, double precision
/// throughout. Nodes are created in topological order, so the backward pass
/// is a single reverse sweep. GEMM-shaped ops are backed by Eigen.
///
/// The tape owns all activations for one forward/backward cycle; parameters
/// live outside in a ParamStore and enter as leaf nodes (see Forward).
class Tape {
 public:
  using Id = int;

  struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily during backward
    std::function<void(Tape&)> back;
  };

  // -- leaves ---------------------------------------------------------------
  Id leaf(Tensor v);

  // -- elementwise ----------------------------------------------------------
  Id add(Id a, Id b);                      // same shape
  Id mul(Id a, Id b);                      // same shape, elementwise
  Id scale(Id a, double c);
  Id add_constant(Id a, Tensor c);         // same shape, c has no gradient
  Id relu(Id a);
  Id gelu(Id a);                           // exact erf form
  Id dropout(Id a, double p, Rng& rng);    // inverted dropout

  // -- shape ----------------------------------------------------------------
  Id reshape(Id a, std::vector<int64_t> shape);
  /// [B,C,F,T] -> [B,T,C*F]: per-frame feature vectors for recurrent/FC
  /// heads on top of conv stacks.
  Id flatten_freq_channels(Id a);
  /// [B,N,D] + learnable token [D] -> [B,N+1,D], token at position 0.
  Id prepend_token(Id a, Id token);
  /// [B,N,D] -> [B,D], row 0 of every sample.
  Id token0(Id a);
  /// [B,N,D] -> [B,K,D]; kept[b] lists the K source rows for sample b.
  Id gather_tokens(Id a, std::vector<std::vector<int>> kept);
  /// [B,N,D] -> [B*h,N,dh] and back.
  Id heads_split(Id a, int n_heads);
  Id heads_merge(Id a, int n_heads);
  /// [B,C,H,W] -> [B,H*W,C]: one token per spatial position (row-major).
  Id channels_to_tokens(Id a);

  // -- reductions -----------------------------------------------------------
  Id mean_axis1(Id a);  // [B,T,F] -> [B,F]
  Id max_axis1(Id a);   // [B,T,F] -> [B,F]
  Id sum_all(Id a);     // -> [1]
  Id mean_all(Id a);    // -> [1]

  // -- linear algebra -------------------------------------------------------
  Id matmul(Id a, Id b);                     // [M,K]x[K,N]
  Id add_bias(Id a, Id bias);                // [M,N] + [N]
  Id linear(Id x, Id w, Id b);               // matmul + bias
  Id batched_matmul(Id a, Id b, bool trans_a, bool trans_b);  // [G,*,*]
  Id softmax_lastdim(Id a);
  Id layernorm(Id x, Id gamma, Id beta, double eps = 1e-6);

  /// BatchNorm over the batch dimension of [M,F] (per feature) or over
  /// (B,H,W) of [B,C,H,W] (per channel). Training mode uses biased batch
  /// variance and updates running stats (momentum 0.1, unbiased variance,
  /// matching the common framework convention); eval mode normalizes with
  /// the running stats.
  Id batchnorm1d(Id x, Id gamma, Id beta, Tensor* running_mean, Tensor* running_var,
                 bool training, double eps = 1e-5);
  Id batchnorm2d(Id x, Id gamma, Id beta, Tensor* running_mean, Tensor* running_var,
                 bool training, double eps = 1e-5);

  /// conv2d: x [B,C,H,W], w [O,C,kh,kw], bias [O]; zero padding.
  Id conv2d(Id x, Id w, Id bias, int stride_h, int stride_w, int pad_h, int pad_w);
  Id maxpool2d_2x2(Id x);  // floor semantics on odd extents

  // -- access ---------------------------------------------------------------
  const Tensor& val(Id id) const { return nodes_[static_cast<size_t>(id)].val; }
  Tensor& grad(Id id) { return ensure_grad(id); }
  bool has_grad(Id id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }
  size_t size() const { return nodes_.size(); }

  /// Seeds output gradients and runs one reverse sweep. Multiple seeds may
  /// target distinct nodes (e.g. the two twin-view embeddings).
  void backward(const std::vector<std::pair<Id, Tensor>>& seeds);

 private:
  Id push(Tensor val, std::function<void(Tape&)> back);
  Tensor& ensure_grad(Id id);

  template <typename CellFn>
  Id batchnorm_generic(Id x, Id gamma, Id beta, Tensor* running_mean, Tensor* running_var,
                       bool training, double eps, int64_t n_features, int64_t reduce,
                       CellFn cell);

  std::vector<Node> nodes_;
};

/// Named parameter and buffer registry shared by encoder/projector/probe
/// models. Parameters are optimized; buffers (BN running stats) are carried
/// through checkpoints untouched by optimizers.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  int add(const std::string& name, Tensor init);
  int add_buffer(const std::string& name, Tensor init);

  Entry& param(int id) { return params_[static_cast<size_t>(id)]; }
  const Entry& param(int id) const { return params_[static_cast<size_t>(id)]; }
  Tensor& buffer(int id) { return buffers_[static_cast<size_t>(id)].value; }
  const std::string& buffer_name(int id) const { return buffers_[static_cast<size_t>(id)].name; }

  int n_params() const { return static_cast<int>(params_.size()); }
  int n_buffers() const { return static_cast<int>(buffers_.size()); }
  int64_t total_elements() const;

  void zero_grads();
  /// Throws "non-finite gradient" if any gradient cell is NaN/Inf.
  void check_grads_finite() const;

 private:
  struct Buffer {
    std::string name;
    Tensor value;
  };
  std::vector<Entry> params_;
  std::vector<Buffer> buffers_;
};

/// One forward/backward cycle: a tape plus the leaf-node cache that makes
/// both twin arms share literally the same parameter leaves.
struct Forward {
  explicit Forward(ParamStore& s, bool train, Rng dropout_rng = Rng(0))
      : store(&s), training(train), drop_rng(dropout_rng) {}

  Tape tape;
  ParamStore* store;
  bool training;
  Rng drop_rng;
  std::unordered_map<int, Tape::Id> leaf_cache;

  /// Leaf for a parameter; cached so repeated use shares one node.
  Tape::Id param(int pid);
  /// Accumulates tape leaf gradients back into the store.
  void flush_grads();
};

}  // namespace abt
