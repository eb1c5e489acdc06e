// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dualdit/check.h"
#include "dualdit/config.h"
#include "dualdit/model.h"
#include "dualdit/sampling.h"
#include "dualdit/tasks.h"
#include "dualdit/train.h"
#include "test_util.h"

using namespace dualdit;
using namespace dualdit::testing;

namespace {

JointInput noisy_item(const RunConfig& cfg, TaskKind task, std::uint64_t seed, Real t) {
  JointInput in = assemble(task, generate_sample(cfg.data, seed)).input;
  in.t = {t};
  return with_initial_noise(std::move(in), seed + 100);
}

Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t count) {
  Tensor out({count, x.cols()});
  std::copy(x.data() + begin * x.cols(), x.data() + (begin + count) * x.cols(), out.data());
  return out;
}

bool starts_with(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("a batch of two equals two single-sample passes") {
    const RunConfig cfg = small_run_config();
    DualBranchModel model(cfg.model_config(), 3);
    randomize_parameters(model.params(), 4);
    const JointInput a = noisy_item(cfg, TaskKind::kJointGen, 10, Real(0.3));
    const JointInput b = noisy_item(cfg, TaskKind::kJointContinuation, 11, Real(0.8));
    const JointInput parts[] = {a, b};
    const Prediction both = model.joint_forward(concat_inputs(parts));
    const Prediction pa = model.joint_forward(a), pb = model.joint_forward(b);
    const ModelConfig mc = cfg.model_config();
    CHECK(max_abs_diff(rows_of(both.video, 0, mc.video_rows()), pa.video) < 1e-12);
    CHECK(max_abs_diff(rows_of(both.video, mc.video_rows(), mc.video_rows()), pb.video) < 1e-12);
    CHECK(max_abs_diff(rows_of(both.audio, 0, mc.audio_rows()), pa.audio) < 1e-12);
    CHECK(max_abs_diff(rows_of(both.audio, mc.audio_rows(), mc.audio_rows()), pb.audio) < 1e-12);
  }

  TEST_CASE("output shapes and noise level dependence") {
    const RunConfig cfg = small_run_config();
    DualBranchModel model(cfg.model_config(), 3);
    randomize_parameters(model.params(), 5);
    JointInput in = noisy_item(cfg, TaskKind::kJointGen, 12, Real(0.1));
    const Prediction lo = model.joint_forward(in);
    in.t = {Real(0.9)};
    const Prediction hi = model.joint_forward(in);
    CHECK(lo.video.shape() == in.video.latents.shape());
    CHECK(lo.audio.shape() == in.audio.latents.shape());
    CHECK(max_abs_diff(lo.video, hi.video) > 1e-6);
    CHECK(max_abs_diff(lo.audio, hi.audio) > 1e-6);
    const Prediction n = model.nullified_forward(in);
    CHECK(n.video.shape() == hi.video.shape());
    CHECK(n.audio.shape() == hi.audio.shape());
  }

  TEST_CASE("fresh model is exactly unimodal") {
    const RunConfig cfg = small_run_config();
    DualBranchModel model(cfg.model_config(), 6);
    const JointInput in = noisy_item(cfg, TaskKind::kJointGen, 13, Real(0.5));
    const Prediction joint = model.joint_forward(in);
    CHECK(joint.video == model.unimodal_forward(in, true).video);
    CHECK(joint.audio == model.unimodal_forward(in, false).audio);
    CHECK(joint.video == model.nullified_forward(in).video);
  }

  TEST_CASE("nullified video output ignores the audio branch") {
    const RunConfig cfg = small_run_config();
    DualBranchModel model(cfg.model_config(), 7);
    randomize_parameters(model.params(), 8);
    JointInput in = noisy_item(cfg, TaskKind::kJointGen, 14, Real(0.5));
    const Prediction before = model.nullified_forward(in);
    const Prediction joint_before = model.joint_forward(in);
    for (Real& v : in.audio.latents.values()) v += Real(0.5);
    in.audio.text[0] = {1, 2};
    CHECK(model.nullified_forward(in).video == before.video);
    CHECK(max_abs_diff(model.joint_forward(in).video, joint_before.video) > 0);
  }

  TEST_CASE("disabled interaction gives the audio branch no gradient from the video loss") {
    for (bool enabled : {false, true}) {
      RunConfig cfg = small_run_config();
      cfg.interaction.enabled = enabled;
      DualBranchModel model(cfg.model_config(), 9);
      randomize_parameters(model.params(), 10);
      const TrainingBatch batch = mixed_task_batch(cfg, 11);
      Graph g(&model.params(), true);
      const ForwardResult out = model.forward(g, batch.input);
      g.backward(joint_loss(g, out, batch.input, batch.targets, 0).video);
      double audio_norm = 0;
      for (ParamId id = 0; id < model.params().size(); ++id) {
        if (!starts_with(model.params()[id].name, "audio.") || !g.has_param_grad(id)) continue;
        for (Real v : g.param_grad(id).values()) audio_norm += double(v) * double(v);
      }
      if (enabled) {
        CHECK(audio_norm > 0);
      } else {
        CHECK(audio_norm == 0);
      }
    }
  }

  TEST_CASE("single weight of a one-block model matches central differences") {
    RunConfig cfg = small_run_config();
    cfg.model.depth = 1;
    DualBranchModel model(cfg.model_config(), 12);
    randomize_parameters(model.params(), 13);
    const TrainingBatch batch = mixed_task_batch(cfg, 14);
    const ParamId id = *model.params().find("video.block0.ff_in.weight");
    Graph g(&model.params(), true);
    g.backward(joint_loss(g, model.forward(g, batch.input), batch.input, batch.targets, Real(0.1)).total);
    const Tensor analytic = g.param_grad(id);
    const Tensor start = model.params()[id].value;
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& w) {
          model.params()[id].value = w;
          Graph ge(&model.params(), false);
          return joint_loss(ge, model.forward(ge, batch.input), batch.input, batch.targets, Real(0.1)).total.value()[0];
        },
        start, Real(1e-5));
    CHECK(relative_error(analytic, numeric) < 1e-4);
  }

  TEST_CASE("inconsistent inputs are rejected") {
    const RunConfig cfg = small_run_config();
    DualBranchModel model(cfg.model_config(), 1);
    JointInput in = noisy_item(cfg, TaskKind::kJointGen, 15, Real(0.5));
    in.audio.rows.pop_back();
    CHECK_THROWS_AS(model.joint_forward(in), Error);
  }

  TEST_CASE("flow_target examples") {
    std::mt19937_64 rng(1);
    const Tensor x0 = randn({3, 4}, rng), eps = randn({3, 4}, rng);
    CHECK(flow_target(x0, eps, 0).first == x0);
    CHECK(flow_target(x0, eps, 1).first == eps);
    for (Real t : {Real(0), Real(0.3), Real(1)}) {
      const auto [z, v] = flow_target(x0, x0, t);
      CHECK(max_abs_diff(z, x0) < 1e-15);
      for (Real e : v.values()) CHECK(e == 0);
    }
    const auto [z, v] = flow_target(x0, eps, Real(0.25));
    for (std::size_t i = 0; i < x0.size(); ++i) {
      CHECK(z[i] == doctest::Approx(0.75 * x0[i] + 0.25 * eps[i]).epsilon(1e-15));
      CHECK(v[i] == eps[i] - x0[i]);
    }
  }

  TEST_CASE("branch loss covers the generation rows only") {
    const RunConfig cfg = small_run_config();
    const JointInput in = noisy_item(cfg, TaskKind::kJointContinuation, 16, Real(0.5));
    std::mt19937_64 rng(2);
    const Tensor target = randn(in.video.latents.shape(), rng);
    CHECK(loss_video(target, target, in.video.rows) == 0);
    Tensor shifted = target;
    for (Real& v : shifted.values()) v += 1;
    CHECK(loss_video(shifted, target, in.video.rows) == doctest::Approx(1).epsilon(1e-15));
    Tensor garbage = target;
    const std::size_t c = target.cols();
    for (std::size_t r = 0; r < in.video.rows.size(); ++r) {
      if (!in.video.rows[r].noised) {
        for (std::size_t j = 0; j < c; ++j) garbage[r * c + j] = 1e6;
      }
    }
    CHECK(loss_video(garbage, target, in.video.rows) == 0);
    const Tensor at = randn(in.audio.latents.shape(), rng);
    CHECK(loss_audio(at, at, in.audio.rows) == 0);
  }

  TEST_CASE("composite loss examples") {
    MaskSchedule s;
    s.total_steps = 100;
    CHECK(loss_joint(Real(0.2), Real(0.3), Real(1.0), s, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(loss_joint(Real(0.2), Real(0.3), Real(1.0), s, 100) == Real(0.2) + Real(0.3));
    CHECK(loss_joint(0, 0, 0, s, 0) == 0);
  }

  TEST_CASE("timestep features are bounded and distinguish levels") {
    const Real t[] = {Real(0.1), Real(0.9)};
    const Tensor f = timestep_features(t, 16);
    CHECK(f.shape() == Shape{2, 16});
    double diff = 0;
    for (std::size_t c = 0; c < 16; ++c) {
      CHECK(std::abs(f.at(0, c)) <= 1);
      diff += std::abs(f.at(0, c) - f.at(1, c));
    }
    CHECK(diff > 0.1);
  }
}
