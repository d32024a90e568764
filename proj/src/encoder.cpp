// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "abt/common.hpp"

namespace abt {

Tensor patchify(const Spectrogram& s, int patch_h, int patch_w) {
  if (patch_h <= 0 || patch_w <= 0 || s.n_mels % patch_h != 0 || s.n_frames % patch_w != 0) {
    throw std::invalid_argument("patchify: spectrogram shape not divisible by patch size");
  }
  const int gf = s.n_mels / patch_h;
  const int gt = s.n_frames / patch_w;
  const int n = gf * gt;
  const int p = patch_h * patch_w;
  Tensor out({n, p});
  for (int fi = 0; fi < gf; ++fi) {
    for (int ti = 0; ti < gt; ++ti) {
      const int patch = fi * gt + ti;
      for (int i = 0; i < patch_h; ++i) {
        for (int j = 0; j < patch_w; ++j) {
          out.at(patch, i * patch_w + j) = s.at(fi * patch_h + i, ti * patch_w + j);
        }
      }
    }
  }
  return out;
}

Tensor sinusoidal_posenc(int n_positions, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_posenc: dim must be even");
  Tensor pe({n_positions, dim});
  for (int pos = 0; pos < n_positions; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(dim));
      pe.at(pos, 2 * i) = std::sin(pos * freq);
      pe.at(pos, 2 * i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

Tensor batch_to_tensor(const std::vector<Spectrogram>& batch) {
  if (batch.empty()) throw std::invalid_argument("batch_to_tensor: empty batch");
  const int F = batch.front().n_mels;
  const int T = batch.front().n_frames;
  Tensor out({static_cast<int64_t>(batch.size()), F, T});
  for (size_t b = 0; b < batch.size(); ++b) {
    if (!batch[b].same_shape(batch.front())) {
      throw std::invalid_argument("batch_to_tensor: ragged batch");
    }
    std::copy(batch[b].values.begin(), batch[b].values.end(),
              out.data.begin() + static_cast<int64_t>(b) * F * T);
  }
  return out;
}

// --------------------------------------------------------------------------
// AudioNTT
// --------------------------------------------------------------------------

void AudioNTTConfig::validate() const {
  if (n_conv_blocks <= 0 || conv_channels <= 0 || fc_width <= 0 || n_mels <= 0) {
    throw UserError("audiontt config: dims must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw UserError("audiontt config: dropout in [0,1)");
  if (n_mels % (1 << n_conv_blocks) != 0) {
    throw UserError("audiontt config: n_mels must be divisible by 2^n_conv_blocks");
  }
}

AudioNTT::AudioNTT(ParamStore& store, const AudioNTTConfig& cfg, Rng& rng,
                   const std::string& prefix)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  int in_ch = 1;
  for (int i = 0; i < cfg_.n_conv_blocks; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    Block b;
    const int64_t fan_in = static_cast<int64_t>(in_ch) * 9;
    b.conv_w = store.add(p + ".conv.weight",
                         fanin_uniform({cfg_.conv_channels, in_ch, 3, 3}, fan_in, rng));
    b.conv_b = store.add(p + ".conv.bias", fanin_uniform({cfg_.conv_channels}, fan_in, rng));
    b.bn_g = store.add(p + ".bn.gamma", Tensor::full({cfg_.conv_channels}, 1.0));
    b.bn_b = store.add(p + ".bn.beta", Tensor::zeros({cfg_.conv_channels}));
    b.bn_mean = store.add_buffer(p + ".bn.running_mean", Tensor::zeros({cfg_.conv_channels}));
    b.bn_var = store.add_buffer(p + ".bn.running_var", Tensor::full({cfg_.conv_channels}, 1.0));
    blocks_.push_back(b);
    in_ch = cfg_.conv_channels;
  }
  const int64_t feat = static_cast<int64_t>(cfg_.conv_channels) *
                       (cfg_.n_mels >> cfg_.n_conv_blocks);
  fc1_w_ = store.add(prefix + ".fc1.weight", fanin_uniform({feat, cfg_.fc_width}, feat, rng));
  fc1_b_ = store.add(prefix + ".fc1.bias", fanin_uniform({cfg_.fc_width}, feat, rng));
  fc2_w_ = store.add(prefix + ".fc2.weight",
                     fanin_uniform({cfg_.fc_width, cfg_.fc_width}, cfg_.fc_width, rng));
  fc2_b_ = store.add(prefix + ".fc2.bias", fanin_uniform({cfg_.fc_width}, cfg_.fc_width, rng));
}

Tape::Id AudioNTT::forward(Forward& fw, const Tensor& batch, const std::vector<MaskPlan>* masks) {
  if (masks != nullptr && !masks->empty()) {
    throw std::invalid_argument("audiontt: patch masking applies to ViT paths only");
  }
  if (batch.rank() != 3) throw std::invalid_argument("audiontt: want [B,F,T]");
  const int64_t B = batch.dim(0), F = batch.dim(1), T = batch.dim(2);
  if (F != cfg_.n_mels) throw std::invalid_argument("audiontt: unexpected mel count");
  if (F % (1 << cfg_.n_conv_blocks) != 0) {
    throw std::invalid_argument("audiontt: F must be divisible by 2^n_conv_blocks");
  }
  if (T < (1 << cfg_.n_conv_blocks)) throw std::invalid_argument("audiontt: clip too short");

  Tape& tp = fw.tape;
  Tape::Id x = tp.reshape(tp.leaf(batch), {B, 1, F, T});
  for (const Block& b : blocks_) {
    x = tp.conv2d(x, fw.param(b.conv_w), fw.param(b.conv_b), 1, 1, 1, 1);
    x = tp.batchnorm2d(x, fw.param(b.bn_g), fw.param(b.bn_b), &store_->buffer(b.bn_mean),
                       &store_->buffer(b.bn_var), fw.training);
    x = tp.relu(x);
    x = tp.maxpool2d_2x2(x);
  }
  x = tp.flatten_freq_channels(x);  // [B, T', C*F']
  x = tp.relu(tp.linear(x, fw.param(fc1_w_), fw.param(fc1_b_)));
  if (fw.training && cfg_.dropout > 0.0) x = tp.dropout(x, cfg_.dropout, fw.drop_rng);
  x = tp.linear(x, fw.param(fc2_w_), fw.param(fc2_b_));
  return tp.add(tp.mean_axis1(x), tp.max_axis1(x));
}

// --------------------------------------------------------------------------
// ViT / ViT_C
// --------------------------------------------------------------------------

ViTConfig ViTConfig::from_size(char size, const std::string& variant) {
  ViTConfig cfg;
  cfg.variant = variant;
  switch (size) {
    case 'B': cfg.dim = 768; cfg.depth = 12; cfg.heads = 12; break;
    case 'S': cfg.dim = 384; cfg.depth = 12; cfg.heads = 6; break;
    case 'T': cfg.dim = 192; cfg.depth = 12; cfg.heads = 3; break;
    default: throw UserError("vit config: unknown size (want B, S or T)");
  }
  return cfg;
}

void ViTConfig::validate() const {
  if (variant != "vit" && variant != "vit_c") throw UserError("vit config: unknown variant");
  if (dim <= 0 || depth <= 0 || heads <= 0 || patch_h <= 0 || patch_w <= 0 || mlp_ratio <= 0) {
    throw UserError("vit config: dims must be positive");
  }
  if (dim % heads != 0) throw UserError("vit config: dim must be divisible by heads");
  if (dim % 2 != 0) throw UserError("vit config: dim must be even for sinusoidal encodings");
  if (!use_cls) throw UserError("vit config: the CLS readout is the representation contract");
  if (variant == "vit_c") {
    auto pow2_upto16 = [](int v) { return v == 1 || v == 2 || v == 4 || v == 8 || v == 16; };
    if (!pow2_upto16(patch_h) || !pow2_upto16(patch_w)) {
      throw UserError("vit config: the conv stem needs patch sides in {1,2,4,8,16}");
    }
    if (dim % 8 != 0) throw UserError("vit config: vit_c needs dim divisible by 8");
  }
}

int ViTConfig::n_patches(int F, int T) const {
  if (F % patch_h != 0 || T % patch_w != 0) {
    throw std::invalid_argument("vit: input not divisible by patch size");
  }
  return (F / patch_h) * (T / patch_w);
}

int ViT::attention_tokens(int n_patches, double r) {
  const int masked = static_cast<int>(std::llround(r * n_patches));
  return n_patches - masked + 1;
}

ViT::ViT(ParamStore& store, const ViTConfig& cfg, Rng& rng, const std::string& prefix)
    : cfg_(cfg), kind_(cfg.variant), store_(&store) {
  cfg_.validate();
  const int D = cfg_.dim;

  if (cfg_.variant == "vit") {
    const int64_t P = static_cast<int64_t>(cfg_.patch_h) * cfg_.patch_w;
    patch_embed_w_ = store.add(prefix + ".patch_embed.weight", trunc_normal({P, D}, rng));
    patch_embed_b_ = store.add(prefix + ".patch_embed.bias", Tensor::zeros({D}));
  } else {
    // Four 3x3 convs with stride pattern reproducing the patch grid, channel
    // ladder doubling up to D, then a 1x1 projection.
    auto strides_for = [](int total) {
      std::vector<int> s(4, 1);
      int rem = total;
      for (int i = 3; i >= 0 && rem > 1; --i) {
        s[static_cast<size_t>(i)] = 2;
        rem /= 2;
      }
      return s;  // e.g. 16 -> {2,2,2,2}, 8 -> {1,2,2,2}
    };
    const auto sh = strides_for(cfg_.patch_h);
    const auto sw = strides_for(cfg_.patch_w);
    const int ladder[4] = {D / 8, D / 4, D / 2, D};
    int in_ch = 1;
    for (int i = 0; i < 4; ++i) {
      const std::string p = prefix + ".stem" + std::to_string(i);
      StemLayer l;
      const int64_t fan_in = static_cast<int64_t>(in_ch) * 9;
      l.w = store.add(p + ".conv.weight", fanin_uniform({ladder[i], in_ch, 3, 3}, fan_in, rng));
      l.b = store.add(p + ".conv.bias", fanin_uniform({ladder[i]}, fan_in, rng));
      l.bn_g = store.add(p + ".bn.gamma", Tensor::full({ladder[i]}, 1.0));
      l.bn_b = store.add(p + ".bn.beta", Tensor::zeros({ladder[i]}));
      l.bn_mean = store.add_buffer(p + ".bn.running_mean", Tensor::zeros({ladder[i]}));
      l.bn_var = store.add_buffer(p + ".bn.running_var", Tensor::full({ladder[i]}, 1.0));
      l.stride_h = sh[static_cast<size_t>(i)];
      l.stride_w = sw[static_cast<size_t>(i)];
      stem_.push_back(l);
      in_ch = ladder[i];
    }
    stem_proj_w_ = store.add(prefix + ".stem_proj.weight",
                             fanin_uniform({D, D, 1, 1}, D, rng));
    stem_proj_b_ = store.add(prefix + ".stem_proj.bias", fanin_uniform({D}, D, rng));
  }

  cls_ = store.add(prefix + ".cls", trunc_normal({D}, rng));

  for (int i = 0; i < cfg_.depth; ++i) {
    const std::string p = prefix + ".blocks." + std::to_string(i);
    Attn a;
    a.ln1_g = store.add(p + ".ln1.gamma", Tensor::full({D}, 1.0));
    a.ln1_b = store.add(p + ".ln1.beta", Tensor::zeros({D}));
    a.wq = store.add(p + ".attn.q.weight", trunc_normal({D, D}, rng));
    a.bq = store.add(p + ".attn.q.bias", Tensor::zeros({D}));
    a.wk = store.add(p + ".attn.k.weight", trunc_normal({D, D}, rng));
    a.bk = store.add(p + ".attn.k.bias", Tensor::zeros({D}));
    a.wv = store.add(p + ".attn.v.weight", trunc_normal({D, D}, rng));
    a.bv = store.add(p + ".attn.v.bias", Tensor::zeros({D}));
    a.wo = store.add(p + ".attn.out.weight", trunc_normal({D, D}, rng));
    a.bo = store.add(p + ".attn.out.bias", Tensor::zeros({D}));
    a.ln2_g = store.add(p + ".ln2.gamma", Tensor::full({D}, 1.0));
    a.ln2_b = store.add(p + ".ln2.beta", Tensor::zeros({D}));
    const int64_t H = static_cast<int64_t>(D) * cfg_.mlp_ratio;
    a.mlp_w1 = store.add(p + ".mlp.fc1.weight", trunc_normal({D, H}, rng));
    a.mlp_b1 = store.add(p + ".mlp.fc1.bias", Tensor::zeros({H}));
    a.mlp_w2 = store.add(p + ".mlp.fc2.weight", trunc_normal({H, D}, rng));
    a.mlp_b2 = store.add(p + ".mlp.fc2.bias", Tensor::zeros({D}));
    blocks_.push_back(a);
  }
  ln_f_g_ = store.add(prefix + ".ln_f.gamma", Tensor::full({D}, 1.0));
  ln_f_b_ = store.add(prefix + ".ln_f.beta", Tensor::zeros({D}));
}

Tape::Id ViT::embed_tokens(Forward& fw, const Tensor& batch,
                           const std::vector<std::vector<int>>& kept) {
  Tape& tp = fw.tape;
  const int64_t B = batch.dim(0);
  const int F = static_cast<int>(batch.dim(1));
  const int T = static_cast<int>(batch.dim(2));
  const int64_t K = static_cast<int64_t>(kept.front().size());

  if (cfg_.variant == "vit") {
    // Masked patches are never embedded: gather raw patches first.
    const int64_t P = static_cast<int64_t>(cfg_.patch_h) * cfg_.patch_w;
    const int gt = T / cfg_.patch_w;
    Tensor patches({B, K, P});
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t k = 0; k < K; ++k) {
        const int patch = kept[static_cast<size_t>(b)][static_cast<size_t>(k)];
        const int fi = patch / gt;
        const int ti = patch % gt;
        for (int i = 0; i < cfg_.patch_h; ++i) {
          for (int j = 0; j < cfg_.patch_w; ++j) {
            patches.at(b, k, static_cast<int64_t>(i) * cfg_.patch_w + j) =
                batch.at(b, fi * cfg_.patch_h + i, ti * cfg_.patch_w + j);
          }
        }
      }
    }
    return tp.linear(tp.leaf(std::move(patches)), fw.param(patch_embed_w_),
                     fw.param(patch_embed_b_));
  }

  // vit_c: conv stem over the full spectrogram, tokens dropped afterwards.
  Tape::Id x = tp.reshape(tp.leaf(batch), {B, 1, F, T});
  for (const StemLayer& l : stem_) {
    x = tp.conv2d(x, fw.param(l.w), fw.param(l.b), l.stride_h, l.stride_w, 1, 1);
    x = tp.batchnorm2d(x, fw.param(l.bn_g), fw.param(l.bn_b), &store_->buffer(l.bn_mean),
                       &store_->buffer(l.bn_var), fw.training);
    x = tp.relu(x);
  }
  x = tp.conv2d(x, fw.param(stem_proj_w_), fw.param(stem_proj_b_), 1, 1, 0, 0);
  x = tp.channels_to_tokens(x);  // [B, N, D], frequency-major like patchify
  return tp.gather_tokens(x, kept);
}

Tape::Id ViT::forward(Forward& fw, const Tensor& batch, const std::vector<MaskPlan>* masks) {
  if (batch.rank() != 3) throw std::invalid_argument("vit: want [B,F,T]");
  Tape& tp = fw.tape;
  const int64_t B = batch.dim(0);
  const int n = cfg_.n_patches(static_cast<int>(batch.dim(1)), static_cast<int>(batch.dim(2)));

  std::vector<std::vector<int>> kept(static_cast<size_t>(B));
  if (masks != nullptr && !masks->empty()) {
    if (static_cast<int64_t>(masks->size()) != B) {
      throw std::invalid_argument("vit: need one mask plan per sample");
    }
    for (int64_t b = 0; b < B; ++b) {
      const MaskPlan& plan = (*masks)[static_cast<size_t>(b)];
      if (static_cast<int>(plan.kept.size() + plan.masked.size()) != n) {
        throw std::invalid_argument("vit: mask plan patch count mismatch");
      }
      if (plan.kept.empty()) throw std::invalid_argument("vit: empty kept set");
      kept[static_cast<size_t>(b)] = plan.kept;
    }
  } else {
    for (int64_t b = 0; b < B; ++b) {
      kept[static_cast<size_t>(b)].resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) kept[static_cast<size_t>(b)][static_cast<size_t>(i)] = i;
    }
  }
  const int64_t K = static_cast<int64_t>(kept.front().size());

  Tape::Id x = embed_tokens(fw, batch, kept);

  // Positional encodings stay tied to original patch positions; CLS gets none.
  const Tensor pe = sinusoidal_posenc(n, cfg_.dim);
  Tensor pe_batch({B, K, cfg_.dim});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t k = 0; k < K; ++k) {
      const int pos = kept[static_cast<size_t>(b)][static_cast<size_t>(k)];
      for (int d = 0; d < cfg_.dim; ++d) pe_batch.at(b, k, d) = pe.at(pos, d);
    }
  }
  x = tp.add_constant(x, std::move(pe_batch));
  x = tp.prepend_token(x, fw.param(cls_));

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.dim / cfg_.heads));
  for (const Attn& a : blocks_) {
    Tape::Id h = tp.layernorm(x, fw.param(a.ln1_g), fw.param(a.ln1_b));
    Tape::Id q = tp.heads_split(tp.linear(h, fw.param(a.wq), fw.param(a.bq)), cfg_.heads);
    Tape::Id k = tp.heads_split(tp.linear(h, fw.param(a.wk), fw.param(a.bk)), cfg_.heads);
    Tape::Id v = tp.heads_split(tp.linear(h, fw.param(a.wv), fw.param(a.bv)), cfg_.heads);
    Tape::Id scores = tp.scale(tp.batched_matmul(q, k, false, true), attn_scale);
    Tape::Id ctx = tp.batched_matmul(tp.softmax_lastdim(scores), v, false, false);
    Tape::Id attn_out =
        tp.linear(tp.heads_merge(ctx, cfg_.heads), fw.param(a.wo), fw.param(a.bo));
    x = tp.add(x, attn_out);

    Tape::Id m = tp.layernorm(x, fw.param(a.ln2_g), fw.param(a.ln2_b));
    m = tp.relu(tp.linear(m, fw.param(a.mlp_w1), fw.param(a.mlp_b1)));
    m = tp.linear(m, fw.param(a.mlp_w2), fw.param(a.mlp_b2));
    x = tp.add(x, m);
  }
  x = tp.layernorm(x, fw.param(ln_f_g_), fw.param(ln_f_b_));
  return tp.token0(x);
}

std::unique_ptr<Encoder> make_audiontt(ParamStore& store, const AudioNTTConfig& cfg, Rng& rng) {
  return std::make_unique<AudioNTT>(store, cfg, rng);
}

std::unique_ptr<Encoder> make_vit(ParamStore& store, const ViTConfig& cfg, Rng& rng) {
  return std::make_unique<ViT>(store, cfg, rng);
}

}  // namespace abt
