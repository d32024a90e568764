// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "abt/augment.hpp"
#include "abt/autodiff.hpp"
#include "abt/dsp.hpp"
#include "abt/tensor.hpp"

namespace abt {

/// Splits an F x T spectrogram into non-overlapping patch_h x patch_w
/// patches, frequency-major grid order, each flattened row-major. Returns
/// [N, patch_h * patch_w] with N = (F / patch_h) * (T / patch_w).
Tensor patchify(const Spectrogram& s, int patch_h, int patch_w);

/// Standard interleaved sin/cos encoding over a geometric frequency ladder
/// (base 10000); values in [-1, 1], position 0 is (0, 1, 0, 1, ...).
Tensor sinusoidal_posenc(int n_positions, int dim);

/// Converts a batch of equally-shaped spectrograms to a [B,F,T] tensor.
Tensor batch_to_tensor(const std::vector<Spectrogram>& batch);

/// Common interface of the two encoder families. forward() returns the
/// [B, rep_dim] representation node; masks (ViT paths only) drop patches of
/// the input before the transformer blocks.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Tape::Id forward(Forward& fw, const Tensor& batch,
                           const std::vector<MaskPlan>* masks = nullptr) = 0;
  virtual int rep_dim() const = 0;
  virtual const std::string& kind() const = 0;
};

struct AudioNTTConfig {
  int n_conv_blocks = 3;
  int conv_channels = 64;
  int fc_width = 2048;
  double dropout = 0.0;
  int n_mels = 64;

  int rep_dim() const { return fc_width; }
  void validate() const;
};

/// Convolutional encoder: three [3x3 conv -> BN -> ReLU -> 2x2 maxpool]
/// blocks, per-frame flattening of channel/frequency axes, two FC layers
/// (ReLU + dropout between), and elementwise (mean + max) temporal pooling.
/// The pooling absorbs the time extent, so any T >= 2^n_conv_blocks works.
class AudioNTT : public Encoder {
 public:
  AudioNTT(ParamStore& store, const AudioNTTConfig& cfg, Rng& rng,
           const std::string& prefix = "audiontt");

  Tape::Id forward(Forward& fw, const Tensor& batch,
                   const std::vector<MaskPlan>* masks = nullptr) override;
  int rep_dim() const override { return cfg_.fc_width; }
  const std::string& kind() const override { return kind_; }

 private:
  struct Block {
    int conv_w, conv_b, bn_g, bn_b;
    int bn_mean, bn_var;  // buffer ids
  };
  AudioNTTConfig cfg_;
  std::string kind_ = "audiontt";
  std::vector<Block> blocks_;
  int fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  ParamStore* store_;
};

struct ViTConfig {
  std::string variant = "vit";  // "vit" | "vit_c"
  int dim = 192;
  int depth = 12;
  int heads = 3;
  int patch_h = 16;
  int patch_w = 8;
  int mlp_ratio = 4;
  bool use_cls = true;

  /// Size presets: B (768, 12, 12), S (384, 12, 6), T (192, 12, 3).
  static ViTConfig from_size(char size, const std::string& variant = "vit");
  void validate() const;
  int n_patches(int F, int T) const;
};

/// Transformer encoder with a learnable CLS token (no positional encoding
/// on CLS), fixed sinusoidal positional encodings on patches, and pre-norm
/// blocks. The "vit_c" variant replaces linear patch embedding with a
/// four-layer 3x3 conv stem whose token grid matches patch_h x patch_w
/// patchification, followed by a 1x1 projection to the model dim.
///
/// Masked patches are dropped before the first transformer block: the
/// vanilla path never embeds them, the conv-stem path drops their tokens
/// after the stem. Positional encodings stay tied to original positions.
class ViT : public Encoder {
 public:
  ViT(ParamStore& store, const ViTConfig& cfg, Rng& rng, const std::string& prefix = "vit");

  Tape::Id forward(Forward& fw, const Tensor& batch,
                   const std::vector<MaskPlan>* masks = nullptr) override;
  int rep_dim() const override { return cfg_.dim; }
  const std::string& kind() const override { return kind_; }
  const ViTConfig& config() const { return cfg_; }

  /// Token count entering the attention blocks for N patches at ratio r
  /// (CLS included): N - round(r*N) + 1.
  static int attention_tokens(int n_patches, double r);

 private:
  struct Attn {
    int ln1_g, ln1_b;
    int wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b;
    int mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };
  struct StemLayer {
    int w, b, bn_g, bn_b;
    int bn_mean, bn_var;
    int stride_h, stride_w;
  };

  Tape::Id embed_tokens(Forward& fw, const Tensor& batch,
                        const std::vector<std::vector<int>>& kept);

  ViTConfig cfg_;
  std::string kind_;
  int patch_embed_w_ = -1, patch_embed_b_ = -1;
  std::vector<StemLayer> stem_;
  int stem_proj_w_ = -1, stem_proj_b_ = -1;
  int cls_;
  std::vector<Attn> blocks_;
  int ln_f_g_, ln_f_b_;
  ParamStore* store_;
};

std::unique_ptr<Encoder> make_audiontt(ParamStore& store, const AudioNTTConfig& cfg, Rng& rng);
std::unique_ptr<Encoder> make_vit(ParamStore& store, const ViTConfig& cfg, Rng& rng);

}  // namespace abt
