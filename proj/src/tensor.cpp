// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace abt {

Tensor Tensor::reshaped(std::vector<int64_t> s) const {
  if (count(s) != numel()) {
    throw std::invalid_argument("reshape: element count mismatch (" + shape_str() + ")");
  }
  Tensor out;
  out.shape = std::move(s);
  out.data = data;
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.normal() * stddev;
  return t;
}

Tensor trunc_normal(std::vector<int64_t> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();  // resample outside 2 sigma
    v = z * stddev;
  }
  return t;
}

Tensor fanin_uniform(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace abt
