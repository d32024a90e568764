// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "abt/autodiff.hpp"
#include "abt/tensor.hpp"

namespace abt {

enum class GroupKind { weights, biases_and_norms };

/// Name-pattern classification: parameters ending in ".bias", ".gamma" or
/// ".beta" (biases and normalization affine parameters) are excluded from
/// weight decay and LARS adaptation.
GroupKind classify_param(const std::string& name);

/// Every parameter lands in exactly one group; the audit in the tests
/// asserts that all bias/normalization parameters are in the excluded one.
struct GroupAssignment {
  std::vector<int> weights;
  std::vector<int> excluded;
};

GroupAssignment assign_groups(const ParamStore& store);

struct LarsConfig {
  double lr_weights = 0.4;
  double lr_biases = 0.0048;
  double weight_decay = 1e-5;
  double momentum = 0.9;
  double eta = 1e-3;
  void validate() const;
};

struct AdamWConfig {
  double lr = 6.25e-5;
  double weight_decay = 0.24;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  void validate() const;
};

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  void validate() const;
};

/// Linear learning-rate scaling: lr = lr_ref * batch / batch_ref.
double scale_lr(double lr_ref, int batch_ref, int batch);

/// Optimizer over a ParamStore. step() consumes the accumulated gradients;
/// state tensors are exposed for checkpointing (keyed by param name).
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParamStore& store) = 0;
  virtual std::string kind() const = 0;
  virtual std::map<std::string, Tensor> state_tensors(const ParamStore& store) const = 0;
  virtual void load_state_tensors(const ParamStore& store,
                                  const std::map<std::string, Tensor>& state) = 0;
  virtual int64_t step_count() const = 0;
  virtual void set_step_count(int64_t t) = 0;
};

/// Layer-wise adaptive rate scaling. For the weights group:
///   g' = grad + wd * param
///   tau = eta * ||param|| / ||g'||   (tau = 1 when either norm is 0)
///   m <- mu * m + tau * g';  param <- param - lr_weights * m
/// Biases and norm parameters take plain SGD-with-momentum at lr_biases,
/// no decay, no adaptation.
class Lars : public Optimizer {
 public:
  Lars(const ParamStore& store, const LarsConfig& cfg);
  void step(ParamStore& store) override;
  std::string kind() const override { return "lars"; }
  std::map<std::string, Tensor> state_tensors(const ParamStore& store) const override;
  void load_state_tensors(const ParamStore& store,
                          const std::map<std::string, Tensor>& state) override;
  int64_t step_count() const override { return t_; }
  void set_step_count(int64_t t) override { t_ = t; }

 private:
  LarsConfig cfg_;
  GroupAssignment groups_;
  std::vector<Tensor> momentum_;
  int64_t t_ = 0;
};

/// Decoupled weight decay (applied param-side before the moment update,
/// skipped for the excluded group), bias-corrected moments.
class AdamW : public Optimizer {
 public:
  AdamW(const ParamStore& store, const AdamWConfig& cfg);
  void step(ParamStore& store) override;
  std::string kind() const override { return "adamw"; }
  std::map<std::string, Tensor> state_tensors(const ParamStore& store) const override;
  void load_state_tensors(const ParamStore& store,
                          const std::map<std::string, Tensor>& state) override;
  int64_t step_count() const override { return t_; }
  void set_step_count(int64_t t) override { t_ = t; }

 private:
  AdamWConfig cfg_;
  GroupAssignment groups_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

/// Classical momentum SGD with coupled decay (g' = g + wd * p), exclusions
/// as above.
class Sgd : public Optimizer {
 public:
  Sgd(const ParamStore& store, const SgdConfig& cfg);
  void step(ParamStore& store) override;
  std::string kind() const override { return "sgd"; }
  std::map<std::string, Tensor> state_tensors(const ParamStore& store) const override;
  void load_state_tensors(const ParamStore& store,
                          const std::map<std::string, Tensor>& state) override;
  int64_t step_count() const override { return t_; }
  void set_step_count(int64_t t) override { t_ = t; }

 private:
  SgdConfig cfg_;
  GroupAssignment groups_;
  std::vector<Tensor> momentum_;
  int64_t t_ = 0;
};

}  // namespace abt
