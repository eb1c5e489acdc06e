// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <span>

#include "dualdit/autograd.h"
#include "dualdit/params.h"
#include "dualdit/tensor.h"

namespace dualdit {

/// Projections of one multi-head attention; the output projection is
/// optional because the aligners apply theirs after a residual sum.
struct AttentionParams {
  LinearMap q;
  LinearMap k;
  LinearMap v;
  std::optional<LinearMap> o;

  static AttentionParams create(ParameterStore& store, const std::string& name, std::size_t q_dim,
                                std::size_t kv_dim, std::size_t width, bool with_bias, bool with_output,
                                InitMode output_init, std::mt19937_64& rng);
};

// Graph-level helpers.
Var apply(Graph& g, const LinearMap& map, const Var& x);
Var apply(Graph& g, const AffineNormParams& norm, const Var& x);
/// Attention of q_in rows over kv_in rows, grouped; no output projection
/// unless params.o is set.
Var cross_attention(Graph& g, const AttentionParams& params, const Var& q_in, const Var& kv_in, std::size_t heads,
                    std::span<const AttnGroup> groups);

// Eager tensor API.
Tensor layer_norm(const Tensor& x, Real eps);
Tensor sigmoid(const Tensor& x);
/// Every query row of q_in [Lq x D] attends over all rows of kv_in [Lkv x D].
Tensor multi_head_cross_attention(const Tensor& q_in, const Tensor& kv_in, const ParameterStore& store,
                                  const AttentionParams& params, std::size_t heads);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
/// Throws kOracleFailure when f returns a non-finite value.
Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x, Real h);

/// ||a - b|| / max(||a||, ||b||), 0 when both are zero.
Real relative_error(const Tensor& a, const Tensor& b);

}  // namespace dualdit
