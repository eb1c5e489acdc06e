// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/sampling.h"

#include <random>

namespace dualdit {

void GuidanceConfig::validate() const {
  if (steps == 0) throw Error(ErrorCode::kConfig, "sampler needs at least one step");
  if (!(s_v >= 0) || !(s_a >= 0)) throw Error(ErrorCode::kConfig, "guidance scales must be >= 0");
}

Tensor guide(const Tensor& u_cond, const Tensor& u_uncond, Real s) {
  if (u_cond.shape() != u_uncond.shape()) {
    throw Error(ErrorCode::kInvalidShape, "guide: " + shape_str(u_cond.shape()) + " vs " + shape_str(u_uncond.shape()));
  }
  if (s == Real(1)) return u_cond;
  if (s == Real(0)) return u_uncond;
  Tensor out(u_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = u_uncond[i] + s * (u_cond[i] - u_uncond[i]);
  return out;
}

GuidedVelocity ma_cfg_combine(const Prediction& cond, const Prediction& uncond, const GuidanceConfig& g) {
  return {guide(cond.video, uncond.video, g.s_v), guide(cond.audio, uncond.audio, g.s_a)};
}

GuidedVelocity guided_velocity(const DualBranchModel& model, const JointInput& in, const GuidanceConfig& g) {
  const Prediction cond = model.joint_forward(in);
  if (g.s_v == Real(1) && g.s_a == Real(1)) return {cond.video, cond.audio};
  return ma_cfg_combine(cond, model.nullified_forward(in), g);
}

namespace {

void step_branch(BranchInput& b, const Tensor& u, Real dt) {
  if (u.shape() != b.latents.shape()) throw Error(ErrorCode::kInvalidShape, "velocity does not match latents");
  const std::size_t c = b.latents.cols();
  for (std::size_t r = 0; r < b.rows.size(); ++r) {
    if (!b.rows[r].noised) continue;
    for (std::size_t ch = 0; ch < c; ++ch) b.latents.at(r, ch) -= dt * u.at(r, ch);
  }
}

void noise_branch(BranchInput& b, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t c = b.latents.cols();
  for (std::size_t r = 0; r < b.rows.size(); ++r) {
    if (!b.rows[r].noised) continue;
    for (std::size_t ch = 0; ch < c; ++ch) b.latents.at(r, ch) = Real(n(rng));
  }
}

}  // namespace

JointInput euler_integrate(const VelocityField& field, JointInput z, std::size_t steps) {
  if (steps == 0) throw Error(ErrorCode::kConfig, "sampler needs at least one step");
  const Real dt = Real(1) / Real(steps);
  for (std::size_t n = 0; n < steps; ++n) {
    const Real t = Real(1) - Real(n) / Real(steps);
    std::fill(z.t.begin(), z.t.end(), t);
    const GuidedVelocity u = field(z);
    step_branch(z.video, u.video, dt);
    step_branch(z.audio, u.audio, dt);
  }
  std::fill(z.t.begin(), z.t.end(), Real(0));
  return z;
}

JointInput with_initial_noise(JointInput in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  noise_branch(in.video, rng);
  noise_branch(in.audio, rng);
  return in;
}

SampleResult euler_sample(const DualBranchModel& model, const JointInput& assembled, const GuidanceConfig& g,
                          std::uint64_t seed) {
  g.validate();
  model.validate_input(assembled);
  const VelocityField field = [&](const JointInput& z) { return guided_velocity(model, z, g); };
  JointInput out = euler_integrate(field, with_initial_noise(assembled, seed), g.steps);
  return {std::move(out.video.latents), std::move(out.audio.latents)};
}

}  // namespace dualdit
