// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "dualdit/check.h"
#include "dualdit/config.h"
#include "dualdit/sampling.h"
#include "dualdit/tasks.h"
#include "test_util.h"

using namespace dualdit;
using namespace dualdit::testing;

namespace {

JointInput clean_input(const RunConfig& cfg, TaskKind task, std::uint64_t seed) {
  return assemble(task, generate_sample(cfg.data, seed)).input;
}

Tensor filled_like(const Tensor& x, Real v) { return Tensor(x.shape(), v); }

}  // namespace

TEST_SUITE("sampling") {
  TEST_CASE("guide examples") {
    const Tensor c = Tensor::from_rows({{2, 2}}), u = Tensor::from_rows({{1, 1}});
    for (Real v : guide(c, u, 3).values()) CHECK(v == 4);
    CHECK(guide(c, u, 1) == c);
    CHECK(guide(c, u, 0) == u);
    CHECK_THROWS_AS(guide(c, Tensor({2, 1}), 2), Error);
  }

  TEST_CASE("each modality uses its own scale") {
    std::mt19937_64 rng(1);
    Prediction cond{randn({4, 3}, rng), randn({5, 3}, rng), {}};
    Prediction uncond{randn({4, 3}, rng), randn({5, 3}, rng), {}};
    GuidanceConfig g;
    g.s_v = 2;
    g.s_a = 1;
    const GuidedVelocity out = ma_cfg_combine(cond, uncond, g);
    CHECK(out.audio == cond.audio);
    CHECK(out.video == guide(cond.video, uncond.video, 2));
  }

  TEST_CASE("guided velocity at unit and zero scales") {
    const RunConfig cfg = small_run_config();
    DualBranchModel model(cfg.model_config(), 2);
    randomize_parameters(model.params(), 3);
    JointInput in = with_initial_noise(clean_input(cfg, TaskKind::kJointGen, 4), 5);
    in.t = {Real(0.7)};
    GuidanceConfig g;
    g.s_v = g.s_a = 1;
    const GuidedVelocity one = guided_velocity(model, in, g);
    const Prediction cond = model.joint_forward(in);
    CHECK(one.video == cond.video);
    CHECK(one.audio == cond.audio);
    g.s_v = g.s_a = 0;
    const GuidedVelocity zero = guided_velocity(model, in, g);
    const Prediction uncond = model.nullified_forward(in);
    CHECK(zero.video == uncond.video);
    CHECK(zero.audio == uncond.audio);
    CHECK(max_abs_diff(cond.video, uncond.video) > 0);
  }

  TEST_CASE("a single step with a constant field subtracts it") {
    const RunConfig cfg = small_run_config();
    const JointInput start = with_initial_noise(clean_input(cfg, TaskKind::kJointContinuation, 6), 7);
    const Real c = Real(0.375);
    const VelocityField field = [&](const JointInput& z) {
      return GuidedVelocity{filled_like(z.video.latents, c), filled_like(z.audio.latents, c)};
    };
    const JointInput out = euler_integrate(field, start, 1);
    for (std::size_t r = 0; r < start.video.rows.size(); ++r) {
      for (std::size_t j = 0; j < start.video.latents.cols(); ++j) {
        const Real expect = start.video.rows[r].noised ? start.video.latents.at(r, j) - c : start.video.latents.at(r, j);
        CHECK(out.video.latents.at(r, j) == expect);
      }
    }
    CHECK(out.t == std::vector<Real>{0});
  }

  TEST_CASE("the straight-line field is integrated exactly") {
    const RunConfig cfg = small_run_config();
    const JointInput clean = clean_input(cfg, TaskKind::kJointGen, 8);
    const JointInput start = with_initial_noise(clean, 9);
    // u(z, t) = (z - x0) / t is the velocity of every path through x0.
    const VelocityField field = [&](const JointInput& z) {
      GuidedVelocity u{z.video.latents, z.audio.latents};
      for (std::size_t i = 0; i < u.video.size(); ++i) u.video[i] = (u.video[i] - clean.video.latents[i]) / z.t[0];
      for (std::size_t i = 0; i < u.audio.size(); ++i) u.audio[i] = (u.audio[i] - clean.audio.latents[i]) / z.t[0];
      return u;
    };
    for (std::size_t steps : {1, 4, 10}) {
      const JointInput out = euler_integrate(field, start, steps);
      CHECK(max_abs_diff(out.video.latents, clean.video.latents) < 1e-12);
      CHECK(max_abs_diff(out.audio.latents, clean.audio.latents) < 1e-12);
    }
  }

  TEST_CASE("sampling is deterministic per seed and keeps clean rows") {
    RunConfig cfg = small_run_config();
    DualBranchModel model(cfg.model_config(), 10);
    randomize_parameters(model.params(), 11);
    const JointInput in = clean_input(cfg, TaskKind::kJointContinuation, 12);
    GuidanceConfig g;
    g.steps = 4;
    const SampleResult a = euler_sample(model, in, g, 13);
    const SampleResult b = euler_sample(model, in, g, 13);
    const SampleResult c = euler_sample(model, in, g, 14);
    CHECK(a.video == b.video);
    CHECK(a.audio == b.audio);
    CHECK(max_abs_diff(a.video, c.video) > 0);
    const std::size_t ch = in.video.latents.cols();
    for (std::size_t r = 0; r < in.video.rows.size(); ++r) {
      if (in.video.rows[r].noised) continue;
      for (std::size_t j = 0; j < ch; ++j) CHECK(a.video.at(r, j) == in.video.latents.at(r, j));
    }
  }

  TEST_CASE("zero steps and negative scales are rejected") {
    const RunConfig cfg = small_run_config();
    DualBranchModel model(cfg.model_config(), 1);
    const JointInput in = clean_input(cfg, TaskKind::kJointGen, 2);
    GuidanceConfig g;
    g.steps = 0;
    CHECK_THROWS_AS(euler_sample(model, in, g, 1), Error);
    const VelocityField field = [](const JointInput& z) { return GuidedVelocity{z.video.latents, z.audio.latents}; };
    CHECK_THROWS_AS(euler_integrate(field, in, 0), Error);
    g.steps = 2;
    g.s_a = -1;
    CHECK_THROWS_AS(g.validate(), Error);
  }
}
