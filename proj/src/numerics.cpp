// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/numerics.h"

#include <cmath>

namespace dualdit {

AttentionParams AttentionParams::create(ParameterStore& store, const std::string& name, std::size_t q_dim,
                                        std::size_t kv_dim, std::size_t width, bool with_bias, bool with_output,
                                        InitMode output_init, std::mt19937_64& rng) {
  AttentionParams p;
  p.q = LinearMap::create(store, name + ".q", q_dim, width, with_bias, InitMode::kScaledRandom, rng);
  // A key bias shifts every logit of a query equally and has no gradient.
  p.k = LinearMap::create(store, name + ".k", kv_dim, width, false, InitMode::kScaledRandom, rng);
  p.v = LinearMap::create(store, name + ".v", kv_dim, width, with_bias, InitMode::kScaledRandom, rng);
  if (with_output) p.o = LinearMap::create(store, name + ".o", width, q_dim, with_bias, output_init, rng);
  return p;
}

Var apply(Graph& g, const LinearMap& map, const Var& x) {
  std::optional<Var> bias;
  if (map.bias) bias = g.param(*map.bias);
  return linear(x, g.param(map.weight), bias);
}

Var apply(Graph& g, const AffineNormParams& norm, const Var& x) {
  return add_row(mul_row(x, g.param(norm.gamma)), g.param(norm.beta));
}

Var cross_attention(Graph& g, const AttentionParams& params, const Var& q_in, const Var& kv_in, std::size_t heads,
                    std::span<const AttnGroup> groups) {
  const Var q = apply(g, params.q, q_in);
  const Var k = apply(g, params.k, kv_in);
  const Var v = apply(g, params.v, kv_in);
  const Var out = attention(q, k, v, heads, groups);
  return params.o ? apply(g, *params.o, out) : out;
}

Tensor layer_norm(const Tensor& x, Real eps) {
  Graph g(nullptr, false);
  return layer_norm(g.constant(x), eps).value();
}

Tensor sigmoid(const Tensor& x) {
  Graph g(nullptr, false);
  return sigmoid(g.constant(x)).value();
}

Tensor multi_head_cross_attention(const Tensor& q_in, const Tensor& kv_in, const ParameterStore& store,
                                  const AttentionParams& params, std::size_t heads) {
  if (q_in.rows() == 0 || kv_in.rows() == 0) throw Error(ErrorCode::kInvalidShape, "attention needs Lq, Lkv >= 1");
  Graph g(&store, false);
  const AttnGroup all{0, std::uint32_t(q_in.rows()), 0, std::uint32_t(kv_in.rows())};
  return cross_attention(g, params, g.constant(q_in), g.constant(kv_in), heads, {&all, 1}).value();
}

Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x, Real h) {
  if (!(h > 0)) throw Error(ErrorCode::kConfig, "finite_diff_grad: h must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + h;
    const Real up = f(probe);
    probe[i] = orig - h;
    const Real down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::kOracleFailure, "non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (Real(2) * h);
  }
  return grad;
}

Real relative_error(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kInvalidShape, "relative_error: size mismatch");
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += double(a[i] - b[i]) * double(a[i] - b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0) return 0;
  return Real(std::sqrt(diff) / denom);
}

}  // namespace dualdit
