// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/optimizer.h"

#include <cmath>

namespace dualdit {

AdamW::AdamW(const ParameterStore& store, const AdamWConfig& cfg) : cfg_(cfg) {
  for (const auto& p : store) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

Real AdamW::step(ParameterStore& store, std::vector<Tensor>& grads) {
  if (grads.size() != store.size() || m_.size() != store.size()) {
    throw Error(ErrorCode::kInvalidShape, "optimizer: gradient count does not match the parameter store");
  }
  double sq = 0;
  for (const Tensor& g : grads) {
    for (Real x : g.values()) sq += double(x) * double(x);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error(ErrorCode::kNonFinite, "optimizer: non-finite gradient");
  const Real clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? Real(cfg_.clip_norm / norm) : Real(1);

  ++t_;
  const Real bc1 = Real(1) - Real(std::pow(double(cfg_.beta1), double(t_)));
  const Real bc2 = Real(1) - Real(std::pow(double(cfg_.beta2), double(t_)));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Tensor& w = store[i].value;
    const Tensor& g = grads[i];
    if (g.size() != w.size()) throw Error(ErrorCode::kInvalidShape, "optimizer: gradient shape for " + store[i].name);
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const Real gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (Real(1) - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (Real(1) - cfg_.beta2) * gj * gj;
      const Real mhat = m[j] / bc1;
      const Real vhat = v[j] / bc2;
      w[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
    }
  }
  return Real(norm);
}

}  // namespace dualdit
