// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/params.h"

#include <cmath>

namespace dualdit {

ParamId ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw Error(ErrorCode::kConfig, "duplicate parameter name '" + name + "'");
  const ParamId id = params_.size();
  index_.emplace(name, id);
  params_.push_back({std::move(name), std::move(value)});
  return id;
}

ParamId ParameterStore::add(std::string name, Shape shape, InitMode mode, std::mt19937_64& rng, Real scale) {
  Tensor t(shape);
  switch (mode) {
    case InitMode::kZero:
      break;
    case InitMode::kOnes:
      t.fill(Real(1));
      break;
    case InitMode::kScaledRandom: {
      const std::size_t fan_in = shape.empty() ? 1 : shape.back();
      const double s = scale > 0 ? double(scale) : 1.0 / std::sqrt(double(fan_in));
      std::normal_distribution<double> normal(0.0, s);
      for (auto& v : t.values()) v = Real(normal(rng));
      break;
    }
  }
  return add(std::move(name), std::move(t));
}

std::optional<ParamId> ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterStore::total_elements() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

LinearMap LinearMap::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                            bool with_bias, InitMode mode, std::mt19937_64& rng, Real scale) {
  LinearMap m;
  m.in = in;
  m.out = out;
  m.weight = store.add(name + ".weight", {out, in}, mode, rng, scale);
  if (with_bias) m.bias = store.add(name + ".bias", {out}, InitMode::kZero, rng);
  return m;
}

AffineNormParams AffineNormParams::create(ParameterStore& store, const std::string& name, std::size_t dim) {
  AffineNormParams p;
  p.gamma = store.add(name + ".gamma", Tensor({dim}, Real(1)));
  p.beta = store.add(name + ".beta", Tensor({dim}, Real(0)));
  return p;
}

}  // namespace dualdit
