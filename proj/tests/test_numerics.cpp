// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "dualdit/autograd.h"
#include "dualdit/numerics.h"
#include "test_util.h"

using namespace dualdit;
using dualdit::testing::randn;

namespace {

using Build = std::function<Var(Graph&, const std::vector<Var>&)>;

// Backprop through `build` against central differences for every input.
double op_gradient_error(const std::vector<Tensor>& inputs, const Build& build, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  ParameterStore store;
  std::vector<ParamId> ids;
  for (std::size_t i = 0; i < inputs.size(); ++i) ids.push_back(store.add("in" + std::to_string(i), inputs[i]));
  auto vars = [&](Graph& g) {
    std::vector<Var> v;
    for (ParamId id : ids) v.push_back(g.param(id));
    return v;
  };
  Tensor w;
  {
    Graph g(&store, false);
    w = randn(build(g, vars(g)).value().shape(), rng);
  }
  Graph g(&store, true);
  g.backward(weighted_sum(build(g, vars(g)), w));
  double worst = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Tensor analytic = g.param_grad(ids[i]);
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& x) {
          ParameterStore s = store;
          s[ids[i]].value = x;
          Graph ge(&s, false);
          std::vector<Var> v;
          for (ParamId id : ids) v.push_back(ge.param(id));
          return weighted_sum(build(ge, v), w).value()[0];
        },
        store[ids[i]].value, Real(1e-6));
    worst = std::max(worst, double(relative_error(analytic, numeric)));
  }
  return worst;
}

}  // namespace

TEST_SUITE("numerics") {
  TEST_CASE("layer_norm examples") {
    const Tensor c = layer_norm(Tensor::from_rows({{1, 1, 1}}), Real(1e-5));
    for (Real v : c.values()) CHECK(v == 0);

    const Tensor pm = layer_norm(Tensor::from_rows({{1, -1}}), Real(0));
    CHECK(pm[0] == doctest::Approx(1).epsilon(1e-15));
    CHECK(pm[1] == doctest::Approx(-1).epsilon(1e-15));

    // (x - 2) / sqrt(8/3)
    const Tensor r = layer_norm(Tensor::from_rows({{0, 2, 4}}), Real(0));
    const double s = std::sqrt(8.0 / 3.0);
    CHECK(r[0] == doctest::Approx(-2 / s).epsilon(1e-14));
    CHECK(r[1] == doctest::Approx(0).epsilon(1e-14));
    CHECK(r[2] == doctest::Approx(2 / s).epsilon(1e-14));
    CHECK(r[2] == doctest::Approx(1.2247).epsilon(1e-4));
  }

  TEST_CASE("layer_norm is scale and shift invariant") {
    std::mt19937_64 rng(3);
    const Tensor x = randn({5, 8}, rng);
    Tensor y = x;
    for (Real& v : y.values()) v = Real(2.5) * v - Real(7);
    CHECK(max_abs_diff(layer_norm(x, Real(0)), layer_norm(y, Real(0))) < 1e-13);
  }

  TEST_CASE("layer_norm rejects an empty last dimension") {
    CHECK_THROWS_AS(layer_norm(Tensor({3, 0}), Real(1e-5)), Error);
  }

  TEST_CASE("attention examples") {
    std::mt19937_64 rng(5);
    ParameterStore store;
    const AttentionParams p =
        AttentionParams::create(store, "att", 4, 4, 4, false, false, InitMode::kZero, rng);
    const Tensor q = randn({3, 4}, rng);

    SUBCASE("single key returns its value for every query") {
      const Tensor kv = randn({1, 4}, rng);
      const Tensor out = multi_head_cross_attention(q, kv, store, p, 2);
      Graph g(&store, false);
      const Tensor v = apply(g, p.v, g.constant(kv)).value();
      for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(r, c) == doctest::Approx(v.at(0, c)).epsilon(1e-14));
      }
    }
    SUBCASE("zero query and key maps give the mean of the values") {
      store[p.q.weight].value.fill(0);
      store[p.k.weight].value.fill(0);
      const Tensor kv = randn({5, 4}, rng);
      const Tensor out = multi_head_cross_attention(q, kv, store, p, 2);
      Graph g(&store, false);
      const Tensor v = apply(g, p.v, g.constant(kv)).value();
      for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0;
        for (std::size_t r = 0; r < 5; ++r) mean += v.at(r, c) / 5.0;
        for (std::size_t r = 0; r < 3; ++r) CHECK(out.at(r, c) == doctest::Approx(mean).epsilon(1e-13));
      }
    }
  }

  TEST_CASE("attention with logits [0, ln 3] weighs the keys 1/4 and 3/4") {
    std::mt19937_64 rng(0);
    ParameterStore store;
    const AttentionParams p = AttentionParams::create(store, "att", 1, 1, 1, false, false, InitMode::kZero, rng);
    store[p.q.weight].value.fill(1);
    store[p.k.weight].value.fill(1);
    store[p.v.weight].value.fill(1);
    const Tensor q = Tensor::from_rows({{1}});
    const Tensor kv = Tensor::from_rows({{0}, {Real(std::log(3.0))}});
    const Tensor out = multi_head_cross_attention(q, kv, store, p, 1);
    CHECK(out[0] == doctest::Approx(0.75 * std::log(3.0)).epsilon(1e-14));
  }

  TEST_CASE("attention rows are convex combinations and heads must divide the width") {
    std::mt19937_64 rng(9);
    ParameterStore store;
    const AttentionParams p = AttentionParams::create(store, "att", 6, 6, 6, false, false, InitMode::kZero, rng);
    store[p.v.weight].value = Tensor({6, 6});
    for (std::size_t i = 0; i < 6; ++i) store[p.v.weight].value.at(i, i) = 1;
    // Values equal to a constant row reproduce that row whatever the weights.
    Tensor kv({4, 6}, Real(0.25));
    const Tensor out = multi_head_cross_attention(randn({2, 6}, rng), kv, store, p, 3);
    for (Real v : out.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
    CHECK_THROWS_AS(multi_head_cross_attention(randn({2, 6}, rng), kv, store, p, 4), Error);
  }

  TEST_CASE("attention without positions is invariant to permuting keys with their values") {
    std::mt19937_64 rng(11);
    ParameterStore store;
    const AttentionParams p = AttentionParams::create(store, "att", 4, 4, 4, true, false, InitMode::kZero, rng);
    const Tensor q = randn({3, 4}, rng);
    const Tensor kv = randn({5, 4}, rng);
    Tensor perm(kv.shape());
    const std::size_t order[] = {3, 0, 4, 1, 2};
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 4; ++c) perm.at(r, c) = kv.at(order[r], c);
    }
    CHECK(max_abs_diff(multi_head_cross_attention(q, kv, store, p, 2), multi_head_cross_attention(q, perm, store, p, 2)) <
          1e-14);
  }

  TEST_CASE("sigmoid examples") {
    const Tensor s = sigmoid(Tensor::from_rows({{0, 50, -50, Real(-std::log(3.0)), 1000, -1000}}));
    CHECK(s[0] == 0.5);
    CHECK(std::abs(s[1] - 1) <= 1e-15);
    CHECK(s[3] == doctest::Approx(0.25).epsilon(1e-15));
    for (Real v : s.values()) {
      CHECK(v > 0);
      CHECK(v < 1);
    }
  }

  TEST_CASE("finite_diff_grad examples") {
    const Tensor g = finite_diff_grad([](const Tensor& x) { return x[0] * x[0]; }, Tensor::scalar(3), Real(1e-5));
    CHECK(std::abs(g[0] - 6) <= 1e-8);
    const Tensor z = finite_diff_grad([](const Tensor&) { return Real(4); }, Tensor({3}, Real(1)), Real(1e-5));
    for (Real v : z.values()) CHECK(v == 0);
    CHECK_THROWS_AS(finite_diff_grad([](const Tensor& x) { return Real(1) / (x[0] - x[0]); }, Tensor::scalar(1),
                                     Real(1e-5)),
                    Error);
  }

  TEST_CASE("linear map init modes") {
    std::mt19937_64 rng(1);
    ParameterStore store;
    const LinearMap z = LinearMap::create(store, "z", 4, 3, true, InitMode::kZero, rng);
    for (Real v : store[z.weight].value.values()) CHECK(v == 0);
    for (Real v : store[*z.bias].value.values()) CHECK(v == 0);
    CHECK(store[z.weight].value.shape() == Shape{3, 4});
    const AffineNormParams n = AffineNormParams::create(store, "n", 5);
    for (Real v : store[n.gamma].value.values()) CHECK(v == 1);
    for (Real v : store[n.beta].value.values()) CHECK(v == 0);
  }

  TEST_CASE("tensor shape contract") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<Real>(5)), Error);
    const Tensor t({2, 3}, std::vector<Real>{1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.at(1, 2) == 6);
    CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
    CHECK(reinterpret_cast<std::uintptr_t>(t.data()) % 64 == 0);
  }

  TEST_CASE("op gradients match central differences") {
    std::mt19937_64 rng(21);
    const double tol = 1e-7;
    const Tensor a = randn({4, 6}, rng), b = randn({4, 6}, rng);
    CHECK(op_gradient_error({a, randn({5, 6}, rng), randn({5}, rng)},
                            [](Graph&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }) < tol);
    CHECK(op_gradient_error({a, b}, [](Graph&, const std::vector<Var>& v) { return add(v[0], v[1]); }) < tol);
    CHECK(op_gradient_error({a, b}, [](Graph&, const std::vector<Var>& v) { return sub(v[0], v[1]); }) < tol);
    CHECK(op_gradient_error({a, b}, [](Graph&, const std::vector<Var>& v) { return mul(v[0], v[1]); }) < tol);
    CHECK(op_gradient_error({a}, [](Graph&, const std::vector<Var>& v) { return scale(v[0], Real(-1.5)); }) < tol);
    CHECK(op_gradient_error({a, randn({1, 6}, rng)},
                            [](Graph&, const std::vector<Var>& v) { return add_row(v[0], v[1]); }) < tol);
    CHECK(op_gradient_error({a, randn({1, 6}, rng)},
                            [](Graph&, const std::vector<Var>& v) { return mul_row(v[0], v[1]); }) < tol);
    CHECK(op_gradient_error({a, randn({4, 1}, rng)},
                            [](Graph&, const std::vector<Var>& v) { return mul_rows(v[0], v[1]); }) < tol);
    CHECK(op_gradient_error({randn({1, 6}, rng)}, [](Graph&, const std::vector<Var>& v) {
            const Real w[] = {1, 0, Real(-2)};
            return broadcast_rows(v[0], w);
          }) < tol);
    CHECK(op_gradient_error({a}, [](Graph&, const std::vector<Var>& v) {
            RowMap m;
            m.in_rows = 4;
            m.out_rows = 3;
            m.add(0, 2, Real(0.5));
            m.add(0, 3);
            m.add(2, 2, Real(-1));
            return remap_rows(v[0], m);
          }) < tol);
    CHECK(op_gradient_error({a, randn({2, 6}, rng)}, [](Graph&, const std::vector<Var>& v) {
            RowMap m;
            m.in_rows = 2;
            m.out_rows = 4;
            m.add(1, 0);
            m.add(3, 1, Real(0.25));
            m.add(1, 1);
            return scatter_add_rows(v[0], v[1], m);
          }) < tol);
    CHECK(op_gradient_error({a}, [](Graph&, const std::vector<Var>& v) { return layer_norm(v[0], Real(1e-5)); }) < tol);
    CHECK(op_gradient_error({a}, [](Graph&, const std::vector<Var>& v) { return silu(v[0]); }) < tol);
    CHECK(op_gradient_error({a}, [](Graph&, const std::vector<Var>& v) { return gelu(v[0]); }) < tol);
    CHECK(op_gradient_error({a}, [](Graph&, const std::vector<Var>& v) { return sigmoid(v[0]); }) < tol);
    CHECK(op_gradient_error({a}, [&b](Graph&, const std::vector<Var>& v) {
            const std::uint8_t rows[] = {1, 0, 1, 1};
            return masked_mse(v[0], b, rows);
          }) < tol);
    const Tensor q = randn({5, 4}, rng), k = randn({6, 4}, rng), val = randn({6, 4}, rng);
    CHECK(op_gradient_error({q, k, val}, [](Graph&, const std::vector<Var>& v) {
            const AttnGroup groups[] = {{0, 2, 0, 3}, {2, 2, 1, 5}};
            return attention(v[0], v[1], v[2], 2, groups);
          }) < tol);
  }

  TEST_CASE("masked_mse ignores unselected rows and returns 0 for none") {
    Graph g(nullptr, false);
    const Tensor target = Tensor::from_rows({{1, 1}, {5, 5}});
    const std::uint8_t first[] = {1, 0};
    const std::uint8_t none[] = {0, 0};
    const Var pred = g.constant(Tensor::from_rows({{2, 0}, {0, 0}}));
    CHECK(masked_mse(pred, target, first).value()[0] == 1);
    CHECK(masked_mse(pred, target, none).value()[0] == 0);
  }
}
