// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualdit/tensor.h"

namespace dualdit {

using ParamId = std::size_t;

enum class InitMode { kScaledRandom, kZero, kOnes };

struct Parameter {
  std::string name;
  Tensor value;
};

/// Owns every trainable tensor of a model. Ids are dense and stable, so
/// modules refer to parameters by id and a store can be copied freely.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor value);
  /// Initialized tensor. kScaledRandom draws N(0, scale^2) with scale
  /// defaulting to 1/sqrt(fan_in) where fan_in is the last dimension.
  ParamId add(std::string name, Shape shape, InitMode mode, std::mt19937_64& rng, Real scale = Real(-1));

  Parameter& operator[](ParamId id) { return params_.at(id); }
  const Parameter& operator[](ParamId id) const { return params_.at(id); }
  std::optional<ParamId> find(const std::string& name) const;

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t total_elements() const noexcept;
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, ParamId> index_;
};

/// y = x W^T + b.
struct LinearMap {
  ParamId weight = 0;
  std::optional<ParamId> bias;
  std::size_t in = 0;
  std::size_t out = 0;

  static LinearMap create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                          bool with_bias, InitMode mode, std::mt19937_64& rng, Real scale = Real(-1));
};

/// Learned elementwise affine after layer normalization; gamma starts at 1
/// and beta at 0.
struct AffineNormParams {
  ParamId gamma = 0;
  ParamId beta = 0;

  static AffineNormParams create(ParameterStore& store, const std::string& name, std::size_t dim);
};

}  // namespace dualdit
