// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dualdit/params.h"

namespace dualdit {

struct AdamWConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
  Real weight_decay = 0;
  Real clip_norm = 1;  // global gradient norm clip, 0 disables
};

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParameterStore& store, const AdamWConfig& cfg);

  /// grads[i] is the gradient of parameter i. Returns the pre-clip norm.
  Real step(ParameterStore& store, std::vector<Tensor>& grads);

  const AdamWConfig& config() const noexcept { return cfg_; }
  AdamWConfig& config() noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }

  // State access for checkpoints.
  std::vector<Tensor>& first_moment() noexcept { return m_; }
  std::vector<Tensor>& second_moment() noexcept { return v_; }
  const std::vector<Tensor>& first_moment() const noexcept { return m_; }
  const std::vector<Tensor>& second_moment() const noexcept { return v_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

}  // namespace dualdit
