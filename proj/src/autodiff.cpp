// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abt {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

MatMap mat(Tensor& t, int64_t rows, int64_t cols) { return MatMap(t.data.data(), rows, cols); }
CMatMap cmat(const Tensor& t, int64_t rows, int64_t cols) {
  return CMatMap(t.data.data(), rows, cols);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

int64_t last_dim(const Tensor& t) { return t.shape.back(); }

}  // namespace

Tape::Id Tape::push(Tensor val, std::function<void(Tape&)> back) {
  nodes_.push_back(Node{std::move(val), Tensor{}, std::move(back)});
  return static_cast<Id>(nodes_.size() - 1);
}

Tensor& Tape::ensure_grad(Id id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.val.shape);
  return n.grad;
}

Tape::Id Tape::leaf(Tensor v) { return push(std::move(v), nullptr); }

void Tape::backward(const std::vector<std::pair<Id, Tensor>>& seeds) {
  for (const auto& [id, seed] : seeds) {
    require(seed.same_shape(nodes_[static_cast<size_t>(id)].val),
            "backward: seed shape mismatch");
    Tensor& g = ensure_grad(id);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
  }
  for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.back && !n.grad.empty()) n.back(*this);
  }
}

// --------------------------------------------------------------------------
// elementwise
// --------------------------------------------------------------------------

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  require(va.same_shape(vb), "add: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  Tensor out = va;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    Tensor& gb = t.ensure_grad(b);
    for (int64_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  };
  return id;
}

Tape::Id Tape::mul(Id a, Id b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  require(va.same_shape(vb), "mul: shape mismatch");
  Tensor out = va;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    Tensor& ga = t.ensure_grad(a);
    Tensor& gb = t.ensure_grad(b);
    for (int64_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i] * vb[i];
      gb[i] += g[i] * va[i];
    }
  };
  return id;
}

Tape::Id Tape::scale(Id a, double c) {
  Tensor out = val(a);
  for (auto& v : out.data) v *= c;
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, c](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
  };
  return id;
}

Tape::Id Tape::add_constant(Id a, Tensor c) {
  const Tensor& va = val(a);
  require(va.same_shape(c), "add_constant: shape mismatch");
  Tensor out = va;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c[i];
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  };
  return id;
}

Tape::Id Tape::relu(Id a) {
  Tensor out = val(a);
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& va = t.val(a);
    Tensor& ga = t.ensure_grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (va[i] > 0.0) ga[i] += g[i];
    }
  };
  return id;
}

Tape::Id Tape::gelu(Id a) {
  const Tensor& va = val(a);
  Tensor out = va;
  for (auto& v : out.data) v *= 0.5 * (1.0 + std::erf(v / M_SQRT2));
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& va = t.val(a);
    Tensor& ga = t.ensure_grad(a);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double x = va[i];
      const double cdf = 0.5 * (1.0 + std::erf(x / M_SQRT2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  };
  return id;
}

Tape::Id Tape::dropout(Id a, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  if (p == 0.0) return a;
  const Tensor& va = val(a);
  std::vector<char> mask(static_cast<size_t>(va.numel()));
  const double inv_keep = 1.0 / (1.0 - p);
  Tensor out = va;
  for (int64_t i = 0; i < va.numel(); ++i) {
    mask[static_cast<size_t>(i)] = rng.uniform() >= p ? 1 : 0;
    out[i] = mask[static_cast<size_t>(i)] ? va[i] * inv_keep : 0.0;
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, mask = std::move(mask), inv_keep](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (mask[static_cast<size_t>(i)]) ga[i] += g[i] * inv_keep;
    }
  };
  return id;
}

// --------------------------------------------------------------------------
// shape
// --------------------------------------------------------------------------

Tape::Id Tape::reshape(Id a, std::vector<int64_t> shape) {
  Tensor out = val(a).reshaped(std::move(shape));
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  };
  return id;
}

Tape::Id Tape::flatten_freq_channels(Id a) {
  const Tensor& x = val(a);
  require(x.rank() == 4, "flatten_freq_channels: want [B,C,F,T]");
  const int64_t B = x.dim(0), C = x.dim(1), F = x.dim(2), T = x.dim(3);
  Tensor out({B, T, C * F});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t f = 0; f < F; ++f) {
        for (int64_t t = 0; t < T; ++t) {
          out.at(b, t, c * F + f) = x.at(b, c, f, t);
        }
      }
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, B, C, F, T](Tape& tp) {
    const Tensor& g = tp.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = tp.ensure_grad(a);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t c = 0; c < C; ++c) {
        for (int64_t f = 0; f < F; ++f) {
          for (int64_t t = 0; t < T; ++t) {
            ga.at(b, c, f, t) += g.at(b, t, c * F + f);
          }
        }
      }
    }
  };
  return id;
}

Tape::Id Tape::prepend_token(Id a, Id token) {
  const Tensor& x = val(a);
  const Tensor& tok = val(token);
  require(x.rank() == 3, "prepend_token: want [B,N,D]");
  require(tok.rank() == 1 && tok.dim(0) == x.dim(2), "prepend_token: token dim mismatch");
  const int64_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
  Tensor out({B, N + 1, D});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t d = 0; d < D; ++d) out.at(b, 0, d) = tok[d];
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t d = 0; d < D; ++d) out.at(b, n + 1, d) = x.at(b, n, d);
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, token, B, N, D](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    Tensor& gt = t.ensure_grad(token);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t d = 0; d < D; ++d) gt[d] += g.at(b, 0, d);
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t d = 0; d < D; ++d) ga.at(b, n, d) += g.at(b, n + 1, d);
      }
    }
  };
  return id;
}

Tape::Id Tape::token0(Id a) {
  const Tensor& x = val(a);
  require(x.rank() == 3, "token0: want [B,N,D]");
  const int64_t B = x.dim(0), D = x.dim(2);
  Tensor out({B, D});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t d = 0; d < D; ++d) out.at(b, d) = x.at(b, 0, d);
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, B, D](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t d = 0; d < D; ++d) ga.at(b, 0, d) += g.at(b, d);
    }
  };
  return id;
}

Tape::Id Tape::gather_tokens(Id a, std::vector<std::vector<int>> kept) {
  const Tensor& x = val(a);
  require(x.rank() == 3, "gather_tokens: want [B,N,D]");
  const int64_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
  require(static_cast<int64_t>(kept.size()) == B, "gather_tokens: need one index list per sample");
  const int64_t K = static_cast<int64_t>(kept.front().size());
  for (const auto& k : kept) {
    require(static_cast<int64_t>(k.size()) == K, "gather_tokens: ragged kept lists");
    for (int idx : k) require(idx >= 0 && idx < N, "gather_tokens: index out of range");
  }
  Tensor out({B, K, D});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t k = 0; k < K; ++k) {
      const int64_t src = kept[static_cast<size_t>(b)][static_cast<size_t>(k)];
      for (int64_t d = 0; d < D; ++d) out.at(b, k, d) = x.at(b, src, d);
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, kept = std::move(kept), B, K, D](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t k = 0; k < K; ++k) {
        const int64_t src = kept[static_cast<size_t>(b)][static_cast<size_t>(k)];
        for (int64_t d = 0; d < D; ++d) ga.at(b, src, d) += g.at(b, k, d);
      }
    }
  };
  return id;
}

Tape::Id Tape::heads_split(Id a, int n_heads) {
  const Tensor& x = val(a);
  require(x.rank() == 3, "heads_split: want [B,N,D]");
  const int64_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
  require(D % n_heads == 0, "heads_split: D must be divisible by n_heads");
  const int64_t dh = D / n_heads;
  Tensor out({B * n_heads, N, dh});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t h = 0; h < n_heads; ++h) {
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t d = 0; d < dh; ++d) {
          out.at(b * n_heads + h, n, d) = x.at(b, n, h * dh + d);
        }
      }
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, B, N, dh, n_heads](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t h = 0; h < n_heads; ++h) {
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t d = 0; d < dh; ++d) {
            ga.at(b, n, h * dh + d) += g.at(b * n_heads + h, n, d);
          }
        }
      }
    }
  };
  return id;
}

Tape::Id Tape::heads_merge(Id a, int n_heads) {
  const Tensor& x = val(a);
  require(x.rank() == 3, "heads_merge: want [B*h,N,dh]");
  const int64_t G = x.dim(0), N = x.dim(1), dh = x.dim(2);
  require(G % n_heads == 0, "heads_merge: leading dim not divisible by n_heads");
  const int64_t B = G / n_heads;
  Tensor out({B, N, dh * n_heads});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t h = 0; h < n_heads; ++h) {
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t d = 0; d < dh; ++d) {
          out.at(b, n, h * dh + d) = x.at(b * n_heads + h, n, d);
        }
      }
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, B, N, dh, n_heads](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t h = 0; h < n_heads; ++h) {
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t d = 0; d < dh; ++d) {
            ga.at(b * n_heads + h, n, d) += g.at(b, n, h * dh + d);
          }
        }
      }
    }
  };
  return id;
}

Tape::Id Tape::channels_to_tokens(Id a) {
  const Tensor& x = val(a);
  require(x.rank() == 4, "channels_to_tokens: want [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({B, H * W, C});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t h = 0; h < H; ++h) {
        for (int64_t w = 0; w < W; ++w) {
          out.at(b, h * W + w, c) = x.at(b, c, h, w);
        }
      }
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, B, C, H, W](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t c = 0; c < C; ++c) {
        for (int64_t h = 0; h < H; ++h) {
          for (int64_t w = 0; w < W; ++w) {
            ga.at(b, c, h, w) += g.at(b, h * W + w, c);
          }
        }
      }
    }
  };
  return id;
}

// --------------------------------------------------------------------------
// reductions
// --------------------------------------------------------------------------

Tape::Id Tape::mean_axis1(Id a) {
  const Tensor& x = val(a);
  require(x.rank() == 3, "mean_axis1: want [B,T,F]");
  const int64_t B = x.dim(0), T = x.dim(1), F = x.dim(2);
  Tensor out({B, F});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t f = 0; f < F; ++f) out.at(b, f) += x.at(b, t, f);
    }
  }
  for (auto& v : out.data) v /= static_cast<double>(T);
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, B, T, F](Tape& tp) {
    const Tensor& g = tp.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = tp.ensure_grad(a);
    const double inv = 1.0 / static_cast<double>(T);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t t = 0; t < T; ++t) {
        for (int64_t f = 0; f < F; ++f) ga.at(b, t, f) += g.at(b, f) * inv;
      }
    }
  };
  return id;
}

Tape::Id Tape::max_axis1(Id a) {
  const Tensor& x = val(a);
  require(x.rank() == 3, "max_axis1: want [B,T,F]");
  const int64_t B = x.dim(0), T = x.dim(1), F = x.dim(2);
  Tensor out({B, F});
  std::vector<int64_t> argmax(static_cast<size_t>(B * F), 0);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t f = 0; f < F; ++f) {
      double best = x.at(b, 0, f);
      int64_t best_t = 0;
      for (int64_t t = 1; t < T; ++t) {
        if (x.at(b, t, f) > best) {
          best = x.at(b, t, f);
          best_t = t;
        }
      }
      out.at(b, f) = best;
      argmax[static_cast<size_t>(b * F + f)] = best_t;
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, argmax = std::move(argmax), B, F](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t f = 0; f < F; ++f) {
        ga.at(b, argmax[static_cast<size_t>(b * F + f)], f) += g.at(b, f);
      }
    }
  };
  return id;
}

Tape::Id Tape::sum_all(Id a) {
  const Tensor& x = val(a);
  double s = 0.0;
  for (double v : x.data) s += v;
  Id id = push(Tensor::scalar(s), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a](Tape& t) {
    const double g = t.nodes_[static_cast<size_t>(id)].grad[0];
    Tensor& ga = t.ensure_grad(a);
    for (auto& v : ga.data) v += g;
  };
  return id;
}

Tape::Id Tape::mean_all(Id a) {
  const Tensor& x = val(a);
  const double inv = 1.0 / static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data) s += v;
  Id id = push(Tensor::scalar(s * inv), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, inv](Tape& t) {
    const double g = t.nodes_[static_cast<size_t>(id)].grad[0] * inv;
    Tensor& ga = t.ensure_grad(a);
    for (auto& v : ga.data) v += g;
  };
  return id;
}

// --------------------------------------------------------------------------
// linear algebra
// --------------------------------------------------------------------------

Tape::Id Tape::matmul(Id a, Id b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0),
          "matmul: shape mismatch " + va.shape_str() + " x " + vb.shape_str());
  const int64_t M = va.dim(0), K = va.dim(1), N = vb.dim(1);
  Tensor out({M, N});
  mat(out, M, N).noalias() = cmat(va, M, K) * cmat(vb, K, N);
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b, M, K, N](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    Tensor& gb = t.ensure_grad(b);
    mat(ga, M, K).noalias() += cmat(g, M, N) * cmat(t.val(b), K, N).transpose();
    mat(gb, K, N).noalias() += cmat(t.val(a), M, K).transpose() * cmat(g, M, N);
  };
  return id;
}

Tape::Id Tape::add_bias(Id a, Id bias) {
  const Tensor& x = val(a);
  const Tensor& b = val(bias);
  require(b.rank() == 1 && last_dim(x) == b.dim(0), "add_bias: bias dim mismatch");
  const int64_t N = b.dim(0);
  const int64_t rows = x.numel() / N;
  Tensor out = x;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < N; ++j) out[r * N + j] += b[j];
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, bias, rows, N](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.ensure_grad(a);
    Tensor& gb = t.ensure_grad(bias);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < N; ++j) gb[j] += g[r * N + j];
    }
  };
  return id;
}

Tape::Id Tape::linear(Id x, Id w, Id b) {
  // Copy shape metadata up front: push() may reallocate the node vector.
  const std::vector<int64_t> x_shape = val(x).shape;
  const int64_t out_features = val(w).dim(1);
  Id x2 = x;
  if (x_shape.size() != 2) {
    const int64_t cols = x_shape.back();
    x2 = reshape(x, {Tensor::count(x_shape) / cols, cols});
  }
  Id y = add_bias(matmul(x2, w), b);
  if (x_shape.size() != 2) {
    std::vector<int64_t> out_shape(x_shape.begin(), x_shape.end() - 1);
    out_shape.push_back(out_features);
    y = reshape(y, std::move(out_shape));
  }
  return y;
}

Tape::Id Tape::batched_matmul(Id a, Id b, bool trans_a, bool trans_b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  require(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0),
          "batched_matmul: want [G,*,*] with equal G");
  const int64_t G = va.dim(0);
  const int64_t M = trans_a ? va.dim(2) : va.dim(1);
  const int64_t Ka = trans_a ? va.dim(1) : va.dim(2);
  const int64_t Kb = trans_b ? vb.dim(2) : vb.dim(1);
  const int64_t N = trans_b ? vb.dim(1) : vb.dim(2);
  require(Ka == Kb, "batched_matmul: inner dim mismatch");
  const int64_t K = Ka;

  Tensor out({G, M, N});
  const int64_t sa = va.dim(1) * va.dim(2);
  const int64_t sb = vb.dim(1) * vb.dim(2);
  for (int64_t g = 0; g < G; ++g) {
    CMatMap A(va.data.data() + g * sa, va.dim(1), va.dim(2));
    CMatMap B(vb.data.data() + g * sb, vb.dim(1), vb.dim(2));
    MatMap C(out.data.data() + g * M * N, M, N);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, b, trans_a, trans_b, G, M, N, K, sa,
                                          sb](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    Tensor& ga = t.ensure_grad(a);
    Tensor& gb = t.ensure_grad(b);
    for (int64_t k = 0; k < G; ++k) {
      CMatMap A(va.data.data() + k * sa, va.dim(1), va.dim(2));
      CMatMap B(vb.data.data() + k * sb, vb.dim(1), vb.dim(2));
      CMatMap dC(g.data.data() + k * M * N, M, N);
      MatMap dA(ga.data.data() + k * sa, va.dim(1), va.dim(2));
      MatMap dB(gb.data.data() + k * sb, vb.dim(1), vb.dim(2));
      if (!trans_a && !trans_b) {
        dA.noalias() += dC * B.transpose();
        dB.noalias() += A.transpose() * dC;
      } else if (!trans_a && trans_b) {
        dA.noalias() += dC * B;
        dB.noalias() += dC.transpose() * A;
      } else if (trans_a && !trans_b) {
        dA.noalias() += B * dC.transpose();
        dB.noalias() += A * dC;
      } else {
        dA.noalias() += B.transpose() * dC.transpose();
        dB.noalias() += dC.transpose() * A.transpose();
      }
    }
  };
  return id;
}

Tape::Id Tape::softmax_lastdim(Id a) {
  const Tensor& x = val(a);
  const int64_t N = last_dim(x);
  const int64_t rows = x.numel() / N;
  Tensor out = x;
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data.data() + r * N;
    double mx = row[0];
    for (int64_t j = 1; j < N; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < N; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int64_t j = 0; j < N; ++j) row[j] /= sum;
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, a, rows, N](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& y = t.val(id);
    Tensor& ga = t.ensure_grad(a);
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = y.data.data() + r * N;
      const double* gr = g.data.data() + r * N;
      double dot = 0.0;
      for (int64_t j = 0; j < N; ++j) dot += yr[j] * gr[j];
      double* gar = ga.data.data() + r * N;
      for (int64_t j = 0; j < N; ++j) gar[j] += yr[j] * (gr[j] - dot);
    }
  };
  return id;
}

Tape::Id Tape::layernorm(Id x, Id gamma, Id beta, double eps) {
  const Tensor& vx = val(x);
  const Tensor& vg = val(gamma);
  const Tensor& vb = val(beta);
  const int64_t D = last_dim(vx);
  require(vg.rank() == 1 && vg.dim(0) == D && vb.rank() == 1 && vb.dim(0) == D,
          "layernorm: gamma/beta dim mismatch");
  const int64_t rows = vx.numel() / D;

  Tensor out(vx.shape);
  Tensor xhat(vx.shape);
  std::vector<double> inv_sigma(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = vx.data.data() + r * D;
    double mu = 0.0;
    for (int64_t j = 0; j < D; ++j) mu += xr[j];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (int64_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < D; ++j) {
      const double xh = (xr[j] - mu) * is;
      xhat[r * D + j] = xh;
      out[r * D + j] = vg[j] * xh + vb[j];
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, x, gamma, beta, xhat = std::move(xhat),
                                          inv_sigma = std::move(inv_sigma), rows, D](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& vg = t.val(gamma);
    Tensor& gx = t.ensure_grad(x);
    Tensor& gg = t.ensure_grad(gamma);
    Tensor& gb = t.ensure_grad(beta);
    for (int64_t r = 0; r < rows; ++r) {
      const double* gr = g.data.data() + r * D;
      const double* xh = xhat.data.data() + r * D;
      double m1 = 0.0, m2 = 0.0;
      for (int64_t j = 0; j < D; ++j) {
        const double dxh = gr[j] * vg[j];
        m1 += dxh;
        m2 += dxh * xh[j];
        gg[j] += gr[j] * xh[j];
        gb[j] += gr[j];
      }
      m1 /= static_cast<double>(D);
      m2 /= static_cast<double>(D);
      const double is = inv_sigma[static_cast<size_t>(r)];
      double* gxr = gx.data.data() + r * D;
      for (int64_t j = 0; j < D; ++j) {
        gxr[j] += is * (gr[j] * vg[j] - m1 - xh[j] * m2);
      }
    }
  };
  return id;
}

template <typename CellFn>
Tape::Id Tape::batchnorm_generic(Id x, Id gamma, Id beta, Tensor* running_mean,
                                 Tensor* running_var, bool training, double eps,
                                 int64_t n_features, int64_t reduce, CellFn cell) {
  const Tensor& vx = val(x);
  const Tensor& vg = val(gamma);
  const Tensor& vbeta = val(beta);
  const int64_t F = n_features;
  const int64_t R = reduce;
  require(vg.numel() == F && vbeta.numel() == F, "batchnorm: gamma/beta dim mismatch");

  std::vector<double> mean(static_cast<size_t>(F)), inv_sigma(static_cast<size_t>(F));
  if (training) {
    constexpr double momentum = 0.1;
    for (int64_t f = 0; f < F; ++f) {
      double mu = 0.0;
      for (int64_t k = 0; k < R; ++k) mu += vx[cell(f, k)];
      mu /= static_cast<double>(R);
      double var = 0.0;
      for (int64_t k = 0; k < R; ++k) {
        const double d = vx[cell(f, k)] - mu;
        var += d * d;
      }
      var /= static_cast<double>(R);
      mean[static_cast<size_t>(f)] = mu;
      inv_sigma[static_cast<size_t>(f)] = 1.0 / std::sqrt(var + eps);
      if (running_mean && running_var) {
        const double unbiased = R > 1 ? var * static_cast<double>(R) / (R - 1) : var;
        (*running_mean)[f] = (1.0 - momentum) * (*running_mean)[f] + momentum * mu;
        (*running_var)[f] = (1.0 - momentum) * (*running_var)[f] + momentum * unbiased;
      }
    }
  } else {
    require(running_mean != nullptr && running_var != nullptr,
            "batchnorm: eval mode needs running stats");
    for (int64_t f = 0; f < F; ++f) {
      mean[static_cast<size_t>(f)] = (*running_mean)[f];
      inv_sigma[static_cast<size_t>(f)] = 1.0 / std::sqrt((*running_var)[f] + eps);
    }
  }

  Tensor out(vx.shape);
  Tensor xhat(vx.shape);
  for (int64_t f = 0; f < F; ++f) {
    const double mu = mean[static_cast<size_t>(f)];
    const double is = inv_sigma[static_cast<size_t>(f)];
    for (int64_t k = 0; k < R; ++k) {
      const int64_t c = cell(f, k);
      const double xh = (vx[c] - mu) * is;
      xhat[c] = xh;
      out[c] = vg[f] * xh + vbeta[f];
    }
  }

  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, x, gamma, beta, xhat = std::move(xhat),
                                          inv_sigma = std::move(inv_sigma), F, R, cell,
                                          training](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& vg = t.val(gamma);
    Tensor& gx = t.ensure_grad(x);
    Tensor& gg = t.ensure_grad(gamma);
    Tensor& gb = t.ensure_grad(beta);
    for (int64_t f = 0; f < F; ++f) {
      const double is = inv_sigma[static_cast<size_t>(f)];
      if (training) {
        double m1 = 0.0, m2 = 0.0;
        for (int64_t k = 0; k < R; ++k) {
          const int64_t c = cell(f, k);
          const double dxh = g[c] * vg[f];
          m1 += dxh;
          m2 += dxh * xhat[c];
          gg[f] += g[c] * xhat[c];
          gb[f] += g[c];
        }
        m1 /= static_cast<double>(R);
        m2 /= static_cast<double>(R);
        for (int64_t k = 0; k < R; ++k) {
          const int64_t c = cell(f, k);
          gx[c] += is * (g[c] * vg[f] - m1 - xhat[c] * m2);
        }
      } else {
        for (int64_t k = 0; k < R; ++k) {
          const int64_t c = cell(f, k);
          gx[c] += g[c] * vg[f] * is;
          gg[f] += g[c] * xhat[c];
          gb[f] += g[c];
        }
      }
    }
  };
  return id;
}

Tape::Id Tape::batchnorm1d(Id x, Id gamma, Id beta, Tensor* running_mean, Tensor* running_var,
                           bool training, double eps) {
  const Tensor& vx = val(x);
  require(vx.rank() == 2, "batchnorm1d: want [M,F]");
  const int64_t M = vx.dim(0), F = vx.dim(1);
  if (training && M < 2) throw std::invalid_argument("batch norm undefined");
  return batchnorm_generic(
      x, gamma, beta, running_mean, running_var, training, eps, F, M,
      [F](int64_t f, int64_t k) { return k * F + f; });
}

Tape::Id Tape::batchnorm2d(Id x, Id gamma, Id beta, Tensor* running_mean, Tensor* running_var,
                           bool training, double eps) {
  const Tensor& vx = val(x);
  require(vx.rank() == 4, "batchnorm2d: want [B,C,H,W]");
  const int64_t C = vx.dim(1), HW = vx.dim(2) * vx.dim(3);
  const int64_t R = vx.dim(0) * HW;
  if (training && R < 2) throw std::invalid_argument("batch norm undefined");
  return batchnorm_generic(
      x, gamma, beta, running_mean, running_var, training, eps, C, R,
      [C, HW](int64_t c, int64_t k) {
        const int64_t b = k / HW;
        const int64_t s = k % HW;
        return (b * C + c) * HW + s;
      });
}

// --------------------------------------------------------------------------
// conv / pooling
// --------------------------------------------------------------------------

namespace {

void im2col(const double* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t OH, int64_t OW,
            double* col) {
  // col layout: [C*kh*kw, OH*OW]
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        double* dst = col + ((c * kh + i) * kw + j) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t h = oh * sh - ph + i;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t w = ow * sw - pw + j;
            dst[oh * OW + ow] = (h >= 0 && h < H && w >= 0 && w < W)
                                    ? x[(c * H + h) * W + w]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const double* col, int64_t C, int64_t H, int64_t W, int64_t kh,
                       int64_t kw, int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t OH,
                       int64_t OW, double* dx) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        const double* src = col + ((c * kh + i) * kw + j) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t h = oh * sh - ph + i;
          if (h < 0 || h >= H) continue;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t w = ow * sw - pw + j;
            if (w < 0 || w >= W) continue;
            dx[(c * H + h) * W + w] += src[oh * OW + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tape::Id Tape::conv2d(Id x, Id w, Id bias, int stride_h, int stride_w, int pad_h, int pad_w) {
  const Tensor& vx = val(x);
  const Tensor& vw = val(w);
  const Tensor& vb = val(bias);
  require(vx.rank() == 4 && vw.rank() == 4, "conv2d: want x[B,C,H,W], w[O,C,kh,kw]");
  require(vx.dim(1) == vw.dim(1), "conv2d: channel mismatch");
  const int64_t B = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int64_t O = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  require(vb.rank() == 1 && vb.dim(0) == O, "conv2d: bias dim mismatch");
  const int64_t OH = (H + 2 * pad_h - kh) / stride_h + 1;
  const int64_t OW = (W + 2 * pad_w - kw) / stride_w + 1;
  require(OH > 0 && OW > 0, "conv2d: output would be empty");

  const int64_t ck = C * kh * kw;
  Tensor out({B, O, OH, OW});
  {
    DVec col(static_cast<size_t>(ck * OH * OW));
    for (int64_t b = 0; b < B; ++b) {
      im2col(vx.data.data() + b * C * H * W, C, H, W, kh, kw, stride_h, stride_w, pad_h,
             pad_w, OH, OW, col.data());
      CMatMap Wm(vw.data.data(), O, ck);
      CMatMap Cm(col.data(), ck, OH * OW);
      MatMap Ym(out.data.data() + b * O * OH * OW, O, OH * OW);
      Ym.noalias() = Wm * Cm;
      for (int64_t o = 0; o < O; ++o) Ym.row(o).array() += vb[o];
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, x, w, bias, B, C, H, W, O, kh, kw, stride_h,
                                          stride_w, pad_h, pad_w, OH, OW, ck](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& vx = t.val(x);
    const Tensor& vw = t.val(w);
    Tensor& gx = t.ensure_grad(x);
    Tensor& gw = t.ensure_grad(w);
    Tensor& gb = t.ensure_grad(bias);
    DVec col(static_cast<size_t>(ck * OH * OW));
    DVec dcol(static_cast<size_t>(ck * OH * OW));
    for (int64_t b = 0; b < B; ++b) {
      im2col(vx.data.data() + b * C * H * W, C, H, W, kh, kw, stride_h, stride_w, pad_h,
             pad_w, OH, OW, col.data());
      CMatMap dY(g.data.data() + b * O * OH * OW, O, OH * OW);
      CMatMap Cm(col.data(), ck, OH * OW);
      MatMap dW(gw.data.data(), O, ck);
      dW.noalias() += dY * Cm.transpose();
      for (int64_t o = 0; o < O; ++o) gb[o] += dY.row(o).sum();
      CMatMap Wm(vw.data.data(), O, ck);
      MatMap dCm(dcol.data(), ck, OH * OW);
      dCm.noalias() = Wm.transpose() * dY;
      col2im_accumulate(dcol.data(), C, H, W, kh, kw, stride_h, stride_w, pad_h, pad_w, OH,
                        OW, gx.data.data() + b * C * H * W);
    }
  };
  return id;
}

Tape::Id Tape::maxpool2d_2x2(Id x) {
  const Tensor& vx = val(x);
  require(vx.rank() == 4, "maxpool2d: want [B,C,H,W]");
  const int64_t B = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int64_t OH = H / 2, OW = W / 2;
  require(OH > 0 && OW > 0, "maxpool2d: input too small");
  Tensor out({B, C, OH, OW});
  std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t oh = 0; oh < OH; ++oh) {
        for (int64_t ow = 0; ow < OW; ++ow) {
          double best = -HUGE_VAL;
          int64_t best_idx = 0;
          for (int64_t i = 0; i < 2; ++i) {
            for (int64_t j = 0; j < 2; ++j) {
              const int64_t h = oh * 2 + i, w2 = ow * 2 + j;
              const int64_t idx = ((b * C + c) * H + h) * W + w2;
              if (vx[idx] > best) {
                best = vx[idx];
                best_idx = idx;
              }
            }
          }
          const int64_t oidx = ((b * C + c) * OH + oh) * OW + ow;
          out[oidx] = best;
          argmax[static_cast<size_t>(oidx)] = best_idx;
        }
      }
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[static_cast<size_t>(id)].back = [id, x, argmax = std::move(argmax)](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.ensure_grad(x);
    for (int64_t i = 0; i < g.numel(); ++i) gx[argmax[static_cast<size_t>(i)]] += g[i];
  };
  return id;
}

// --------------------------------------------------------------------------
// ParamStore / Forward
// --------------------------------------------------------------------------

int ParamStore::add(const std::string& name, Tensor init) {
  params_.push_back(Entry{name, std::move(init), Tensor{}});
  params_.back().grad = Tensor::zeros(params_.back().value.shape);
  return static_cast<int>(params_.size() - 1);
}

int ParamStore::add_buffer(const std::string& name, Tensor init) {
  buffers_.push_back(Buffer{name, std::move(init)});
  return static_cast<int>(buffers_.size() - 1);
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

void ParamStore::check_grads_finite() const {
  for (const auto& p : params_) {
    if (!p.grad.all_finite()) throw std::runtime_error("non-finite gradient: " + p.name);
  }
}

Tape::Id Forward::param(int pid) {
  auto it = leaf_cache.find(pid);
  if (it != leaf_cache.end()) return it->second;
  const Tape::Id id = tape.leaf(store->param(pid).value);
  leaf_cache.emplace(pid, id);
  return id;
}

void Forward::flush_grads() {
  for (const auto& [pid, leaf] : leaf_cache) {
    if (!tape.has_grad(leaf)) continue;
    const Tensor& g = tape.grad(leaf);
    Tensor& dst = store->param(pid).grad;
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  }
}

}  // namespace abt
