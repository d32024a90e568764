// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "abt/common.hpp"

namespace abt {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double l2_norm(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data) acc += v * v;
  return std::sqrt(acc);
}

void check_finite(const ParamStore& store) { store.check_grads_finite(); }

}  // namespace

GroupKind classify_param(const std::string& name) {
  if (ends_with(name, ".bias") || ends_with(name, ".gamma") || ends_with(name, ".beta")) {
    return GroupKind::biases_and_norms;
  }
  return GroupKind::weights;
}

GroupAssignment assign_groups(const ParamStore& store) {
  GroupAssignment g;
  for (int i = 0; i < store.n_params(); ++i) {
    if (classify_param(store.param(i).name) == GroupKind::weights) {
      g.weights.push_back(i);
    } else {
      g.excluded.push_back(i);
    }
  }
  return g;
}

void LarsConfig::validate() const {
  if (lr_weights <= 0 || lr_biases <= 0 || weight_decay < 0 || momentum < 0 || eta <= 0) {
    throw UserError("lars config: rates must be positive, decay/momentum non-negative");
  }
}

void AdamWConfig::validate() const {
  if (lr <= 0 || weight_decay < 0 || epsilon <= 0) throw UserError("adamw config: bad values");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    throw UserError("adamw config: betas must be in [0, 1)");
  }
}

void SgdConfig::validate() const {
  if (lr <= 0 || momentum < 0 || weight_decay < 0) throw UserError("sgd config: bad values");
}

double scale_lr(double lr_ref, int batch_ref, int batch) {
  if (batch_ref <= 0) throw std::invalid_argument("scale_lr: batch_ref must be positive");
  return lr_ref * static_cast<double>(batch) / static_cast<double>(batch_ref);
}

// --------------------------------------------------------------------------
// LARS
// --------------------------------------------------------------------------

Lars::Lars(const ParamStore& store, const LarsConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  groups_ = assign_groups(store);
  momentum_.reserve(static_cast<size_t>(store.n_params()));
  for (int i = 0; i < store.n_params(); ++i) {
    momentum_.push_back(Tensor::zeros(store.param(i).value.shape));
  }
}

void Lars::step(ParamStore& store) {
  check_finite(store);
  for (int pid : groups_.weights) {
    auto& p = store.param(pid);
    Tensor& m = momentum_[static_cast<size_t>(pid)];
    Tensor gprime = p.grad;
    for (int64_t i = 0; i < gprime.numel(); ++i) gprime[i] += cfg_.weight_decay * p.value[i];
    const double wn = l2_norm(p.value);
    const double gn = l2_norm(gprime);
    const double tau = (wn == 0.0 || gn == 0.0) ? 1.0 : cfg_.eta * wn / gn;
    for (int64_t i = 0; i < gprime.numel(); ++i) {
      m[i] = cfg_.momentum * m[i] + tau * gprime[i];
      p.value[i] -= cfg_.lr_weights * m[i];
    }
  }
  for (int pid : groups_.excluded) {
    auto& p = store.param(pid);
    Tensor& m = momentum_[static_cast<size_t>(pid)];
    for (int64_t i = 0; i < p.grad.numel(); ++i) {
      m[i] = cfg_.momentum * m[i] + p.grad[i];
      p.value[i] -= cfg_.lr_biases * m[i];
    }
  }
  ++t_;
}

std::map<std::string, Tensor> Lars::state_tensors(const ParamStore& store) const {
  std::map<std::string, Tensor> out;
  for (int i = 0; i < store.n_params(); ++i) {
    out["momentum/" + store.param(i).name] = momentum_[static_cast<size_t>(i)];
  }
  return out;
}

void Lars::load_state_tensors(const ParamStore& store,
                              const std::map<std::string, Tensor>& state) {
  for (int i = 0; i < store.n_params(); ++i) {
    momentum_[static_cast<size_t>(i)] = state.at("momentum/" + store.param(i).name);
  }
}

// --------------------------------------------------------------------------
// AdamW
// --------------------------------------------------------------------------

AdamW::AdamW(const ParamStore& store, const AdamWConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  groups_ = assign_groups(store);
  for (int i = 0; i < store.n_params(); ++i) {
    m_.push_back(Tensor::zeros(store.param(i).value.shape));
    v_.push_back(Tensor::zeros(store.param(i).value.shape));
  }
}

void AdamW::step(ParamStore& store) {
  check_finite(store);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (int pid = 0; pid < store.n_params(); ++pid) {
    auto& p = store.param(pid);
    const bool decay = classify_param(p.name) == GroupKind::weights;
    Tensor& m = m_[static_cast<size_t>(pid)];
    Tensor& v = v_[static_cast<size_t>(pid)];
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      if (decay) p.value[i] -= cfg_.lr * cfg_.weight_decay * p.value[i];
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

std::map<std::string, Tensor> AdamW::state_tensors(const ParamStore& store) const {
  std::map<std::string, Tensor> out;
  for (int i = 0; i < store.n_params(); ++i) {
    out["adam_m/" + store.param(i).name] = m_[static_cast<size_t>(i)];
    out["adam_v/" + store.param(i).name] = v_[static_cast<size_t>(i)];
  }
  return out;
}

void AdamW::load_state_tensors(const ParamStore& store,
                               const std::map<std::string, Tensor>& state) {
  for (int i = 0; i < store.n_params(); ++i) {
    m_[static_cast<size_t>(i)] = state.at("adam_m/" + store.param(i).name);
    v_[static_cast<size_t>(i)] = state.at("adam_v/" + store.param(i).name);
  }
}

// --------------------------------------------------------------------------
// SGD
// --------------------------------------------------------------------------

Sgd::Sgd(const ParamStore& store, const SgdConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  groups_ = assign_groups(store);
  for (int i = 0; i < store.n_params(); ++i) {
    momentum_.push_back(Tensor::zeros(store.param(i).value.shape));
  }
}

void Sgd::step(ParamStore& store) {
  check_finite(store);
  for (int pid = 0; pid < store.n_params(); ++pid) {
    auto& p = store.param(pid);
    const double wd = classify_param(p.name) == GroupKind::weights ? cfg_.weight_decay : 0.0;
    Tensor& m = momentum_[static_cast<size_t>(pid)];
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i] + wd * p.value[i];
      m[i] = cfg_.momentum * m[i] + g;
      p.value[i] -= cfg_.lr * m[i];
    }
  }
  ++t_;
}

std::map<std::string, Tensor> Sgd::state_tensors(const ParamStore& store) const {
  std::map<std::string, Tensor> out;
  for (int i = 0; i < store.n_params(); ++i) {
    out["momentum/" + store.param(i).name] = momentum_[static_cast<size_t>(i)];
  }
  return out;
}

void Sgd::load_state_tensors(const ParamStore& store,
                             const std::map<std::string, Tensor>& state) {
  for (int i = 0; i < store.n_params(); ++i) {
    momentum_[static_cast<size_t>(i)] = state.at("momentum/" + store.param(i).name);
  }
}

}  // namespace abt
