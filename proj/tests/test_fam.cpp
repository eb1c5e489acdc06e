// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dualdit/check.h"
#include "dualdit/fam.h"
#include "dualdit/interaction.h"
#include "test_util.h"

using namespace dualdit;
using namespace dualdit::testing;

namespace {

struct HeadFixture {
  ParameterStore store;
  MaskHead head;
  explicit HeadFixture(std::size_t width) {
    std::mt19937_64 rng(5);
    head = MaskHead::create(store, "mask", width, rng);
  }
  void set_bias(Real b) { store[*head.proj.bias].value.fill(b); }
};

}  // namespace

TEST_SUITE("fam") {
  TEST_CASE("predict_mask with a zero projection is the sigmoid of the bias") {
    HeadFixture fx(8);
    std::mt19937_64 rng(1);
    const Tensor h = randn({3, 4, 8}, rng);
    fx.store[fx.head.proj.weight].value.fill(0);
    fx.set_bias(0);
    for (Real m : predict_mask(h, fx.store, fx.head).values()) CHECK(m == 0.5);
    fx.set_bias(Real(-std::log(3.0)));
    const Tensor q = predict_mask(h, fx.store, fx.head);
    CHECK(q.shape() == Shape{3, 4});
    for (Real m : q.values()) CHECK(m == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("predict_mask is pointwise and stays inside (0, 1)") {
    HeadFixture fx(8);
    randomize_parameters(fx.store, 3, Real(50));
    std::mt19937_64 rng(2);
    Tensor h({3, 4, 8});
    for (std::size_t f = 0; f < 3; ++f) {
      const Tensor row = randn({1, 8}, rng);
      for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t c = 0; c < 8; ++c) h[(f * 4 + t) * 8 + c] = row[c];
      }
    }
    const Tensor m = predict_mask(h, fx.store, fx.head);
    for (std::size_t f = 0; f < 3; ++f) {
      for (std::size_t t = 1; t < 4; ++t) CHECK(m.at(f, t) == m.at(f, 0));
    }
    for (Real v : predict_mask(randn({4, 4, 8}, rng, 100), fx.store, fx.head).values()) {
      CHECK(v > 0);
      CHECK(v < 1);
    }
    CHECK_THROWS_AS(predict_mask(randn({2, 2, 4}, rng), fx.store, fx.head), Error);
  }

  TEST_CASE("mask_loss examples") {
    const Tensor gt = Tensor::from_rows({{0, 1}, {1, 0}});
    const std::vector<Tensor> same = {gt, gt};
    CHECK(mask_loss(same, gt) == 0);
    const std::vector<Tensor> ones = {Tensor({2, 2}, Real(1))};
    CHECK(mask_loss(ones, Tensor({2, 2}, Real(0))) == 1);
    const std::vector<Tensor> halves = {Tensor({2, 2}, Real(0.5)), Tensor({2, 2}, Real(0.5))};
    CHECK(mask_loss(halves, Tensor({2, 2}, Real(0))) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(mask_loss(std::vector<Tensor>{}, gt) == 0);

    Graph g(nullptr, false);
    CHECK(mask_loss(g, {}, Tensor({4, 1})).value()[0] == 0);
  }

  TEST_CASE("lambda schedule") {
    MaskSchedule s;
    s.total_steps = 1000;
    CHECK(lambda_at(s, 0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(lambda_at(s, 500) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(lambda_at(s, 1000) == 0);
    CHECK(lambda_at(s, 5000) == 0);
    Real prev = lambda_at(s, 0);
    for (std::size_t step = 1; step <= 1000; ++step) {
      const Real l = lambda_at(s, step);
      CHECK(l <= prev);
      CHECK(l >= 0);
      prev = l;
    }
    s.decay = false;
    CHECK(lambda_at(s, 5000) == doctest::Approx(0.1).epsilon(1e-15));
  }

  TEST_CASE("modulate_v2a_source examples") {
    std::mt19937_64 rng(6);
    const Tensor h = randn({2, 3, 4}, rng);
    CHECK(modulate_v2a_source(h, Tensor({2, 3}, Real(1))) == h);
    for (Real v : modulate_v2a_source(h, Tensor({2, 3}, Real(0))).values()) CHECK(v == 0);

    Tensor flat({2, 3, 4});
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < 4; ++c) flat[r * 4 + c] = Real(r + 1);
    }
    const Tensor mask = Tensor::from_rows({{1, 0, 1}, {0, 1, 0}});
    const Tensor out = modulate_v2a_source(flat, mask);
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < 4; ++c) CHECK(out[r * 4 + c] == (mask[r] == 1 ? Real(r + 1) : Real(0)));
    }
    CHECK_THROWS_AS(modulate_v2a_source(h, Tensor({3, 3})), Error);
  }

  TEST_CASE("zero video context leaves only the query term") {
    ParameterStore store;
    std::mt19937_64 rng(8);
    const AlignerParams p = AlignerParams::create(store, "al", 8, 8, rng);
    randomize_parameters(store, 9);
    const Tensor video = randn({3, 2, 8}, rng), audio = randn({3, 2, 8}, rng);
    const Tensor silent = modulate_v2a_source(video, Tensor({3, 2}, Real(0)));
    InteractionConfig cfg;
    cfg.heads = 2;
    const Tensor out = flatten_frames(v2a_align(audio, silent, store, p, cfg));
    const Tensor expect = apply_map(store, p.v2a_o, flatten_frames(audio));
    CHECK(max_abs_diff(out, expect) < 1e-13);
  }

  TEST_CASE("fam mode names round trip") {
    for (FamMode m : {FamMode::kOff, FamMode::kUnsupervised, FamMode::kFixed, FamMode::kDecaying}) {
      CHECK(parse_fam_mode(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_fam_mode("sometimes"), Error);
  }
}
