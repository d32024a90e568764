// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/objective.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "abt/common.hpp"

namespace abt {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const Mat>;
using Map = Eigen::Map<Mat>;

void check_embedding(const Tensor& z) {
  if (z.rank() != 2) throw std::invalid_argument("embedding batch must be [B,d]");
  if (z.dim(0) < 2) throw std::invalid_argument("embedding batch needs B >= 2");
  if (!z.all_finite()) throw std::invalid_argument("embedding batch has non-finite values");
}

struct NormCache {
  Tensor zh;                    // normalized embeddings
  std::vector<double> sigma;    // per-feature population std (no floor)
};

NormCache batch_normalize_cached(const Tensor& z, double std_floor) {
  const int64_t B = z.dim(0), d = z.dim(1);
  NormCache out;
  out.zh = Tensor({B, d});
  out.sigma.resize(static_cast<size_t>(d));
  for (int64_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (int64_t b = 0; b < B; ++b) mu += z.at(b, j);
    mu /= static_cast<double>(B);
    double var = 0.0;
    for (int64_t b = 0; b < B; ++b) {
      const double dv = z.at(b, j) - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(B);
    const double sigma = std::sqrt(var);
    out.sigma[static_cast<size_t>(j)] = sigma;
    const double denom = sigma + std_floor;
    for (int64_t b = 0; b < B; ++b) out.zh.at(b, j) = (z.at(b, j) - mu) / denom;
  }
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (alpha <= 0.0) throw UserError("loss config: alpha must be positive");
  if (lambda < 0.0) throw UserError("loss config: lambda must be >= 0");
  if (std_floor <= 0.0) throw UserError("loss config: std_floor must be positive");
}

Tensor batch_normalize(const Tensor& z, double std_floor) {
  check_embedding(z);
  return batch_normalize_cached(z, std_floor).zh;
}

Tensor cross_correlation(const Tensor& zh, const Tensor& zh_prime) {
  if (!zh.same_shape(zh_prime)) throw std::invalid_argument("cross_correlation: shape mismatch");
  const int64_t B = zh.dim(0), d = zh.dim(1);
  Tensor c({d, d});
  Map(c.data.data(), d, d).noalias() =
      CMap(zh.data.data(), B, d).transpose() * CMap(zh_prime.data.data(), B, d) /
      static_cast<double>(B);
  return c;
}

LossTerms bt_loss_terms(const Tensor& c, const LossConfig& cfg) {
  if (c.rank() != 2 || c.dim(0) != c.dim(1)) {
    throw std::invalid_argument("bt_loss: C must be square");
  }
  const int64_t d = c.dim(0);
  LossTerms t;
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      if (i == j) {
        const double e = 1.0 - c.at(i, i);
        t.invariance += e * e;
      } else {
        t.redundancy += c.at(i, j) * c.at(i, j);
      }
    }
  }
  t.loss = cfg.alpha * t.invariance + cfg.lambda * t.redundancy;
  return t;
}

double bt_loss(const Tensor& c, const LossConfig& cfg) { return bt_loss_terms(c, cfg).loss; }

std::pair<Tensor, Tensor> bt_loss_grad(const Tensor& z, const Tensor& z_prime,
                                       const LossConfig& cfg) {
  check_embedding(z);
  check_embedding(z_prime);
  if (!z.same_shape(z_prime)) throw std::invalid_argument("bt_loss_grad: shape mismatch");
  const int64_t B = z.dim(0), d = z.dim(1);

  const NormCache a = batch_normalize_cached(z, cfg.std_floor);
  const NormCache b = batch_normalize_cached(z_prime, cfg.std_floor);
  const Tensor c = cross_correlation(a.zh, b.zh);

  // dL/dC: diagonal -2*alpha*(1 - C_ii), off-diagonal 2*lambda*C_ij.
  Tensor dc({d, d});
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      dc.at(i, j) = i == j ? -2.0 * cfg.alpha * (1.0 - c.at(i, j))
                           : 2.0 * cfg.lambda * c.at(i, j);
    }
  }

  // Through C = (1/B) Zh^T Zh': dZh = (1/B) Zh' dC^T, dZh' = (1/B) Zh dC.
  Tensor dzh({B, d}), dzh_p({B, d});
  {
    CMap Zh(a.zh.data.data(), B, d), Zhp(b.zh.data.data(), B, d), dC(dc.data.data(), d, d);
    Map(dzh.data.data(), B, d).noalias() = Zhp * dC.transpose() / static_cast<double>(B);
    Map(dzh_p.data.data(), B, d).noalias() = Zh * dC / static_cast<double>(B);
  }

  // Through the per-feature standardization. With y = (x - mu) / (sigma + f)
  // and g = dL/dy:  dL/dx = (g - mean(g)) / (sigma + f) - y * mean(g*y) / sigma.
  // The second term vanishes identically for a constant feature (y == 0).
  auto through_norm = [&](const NormCache& nc, const Tensor& g) {
    Tensor dx({B, d});
    for (int64_t j = 0; j < d; ++j) {
      const double sigma = nc.sigma[static_cast<size_t>(j)];
      const double denom = sigma + cfg.std_floor;
      double gbar = 0.0, gy = 0.0;
      for (int64_t bi = 0; bi < B; ++bi) {
        gbar += g.at(bi, j);
        gy += g.at(bi, j) * nc.zh.at(bi, j);
      }
      gbar /= static_cast<double>(B);
      gy /= static_cast<double>(B);
      for (int64_t bi = 0; bi < B; ++bi) {
        double v = (g.at(bi, j) - gbar) / denom;
        if (sigma > 0.0) v -= nc.zh.at(bi, j) * gy / sigma;
        dx.at(bi, j) = v;
      }
    }
    return dx;
  };

  return {through_norm(a, dzh), through_norm(b, dzh_p)};
}

double offdiag_mean_abs(const Tensor& c) {
  const int64_t d = c.dim(0);
  if (d < 2) return 0.0;
  double acc = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      if (i != j) acc += std::abs(c.at(i, j));
    }
  }
  return acc / static_cast<double>(d * (d - 1));
}

double diag_mean(const Tensor& c) {
  const int64_t d = c.dim(0);
  double acc = 0.0;
  for (int64_t i = 0; i < d; ++i) acc += c.at(i, i);
  return acc / static_cast<double>(d);
}

double feature_std_min(const Tensor& z) {
  const int64_t B = z.dim(0), d = z.dim(1);
  double best = HUGE_VAL;
  for (int64_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (int64_t b = 0; b < B; ++b) mu += z.at(b, j);
    mu /= static_cast<double>(B);
    double var = 0.0;
    for (int64_t b = 0; b < B; ++b) {
      const double dv = z.at(b, j) - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(B);
    best = std::min(best, std::sqrt(var));
  }
  return best;
}

}  // namespace abt
