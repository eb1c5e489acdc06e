// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Euler sampling of the learned velocity field with modality-aware guidance:
// each modality extrapolates from one shared interaction-free estimate
// towards the interacting estimate with its own scale.

#pragma once

#include <cstdint>
#include <functional>

#include "dualdit/model.h"

namespace dualdit {

struct GuidanceConfig {
  Real s_v = 2;
  Real s_a = 2;
  std::size_t steps = 50;

  void validate() const;
};

/// u_uncond + s (u_cond - u_uncond); exactly u_cond at s == 1 and exactly
/// u_uncond at s == 0.
Tensor guide(const Tensor& u_cond, const Tensor& u_uncond, Real s);

struct GuidedVelocity {
  Tensor video;
  Tensor audio;
};

GuidedVelocity ma_cfg_combine(const Prediction& cond, const Prediction& uncond, const GuidanceConfig& g);

/// Guided velocity of the model at the input's latents and noise levels. The
/// interaction-free pass is skipped when both scales are 1.
GuidedVelocity guided_velocity(const DualBranchModel& model, const JointInput& in, const GuidanceConfig& g);

using VelocityField = std::function<GuidedVelocity(const JointInput&)>;

/// Integrates z <- z - dt * u from t = 1 to t = 0 in `steps` uniform steps,
/// updating only the noised rows. The noised rows of `start` must already hold
/// the initial noise.
JointInput euler_integrate(const VelocityField& field, JointInput start, std::size_t steps);

/// Replaces the noised rows with N(0, 1) noise drawn from `seed`.
JointInput with_initial_noise(JointInput in, std::uint64_t seed);

struct SampleResult {
  Tensor video;  // full row layout, clean rows copied from the input
  Tensor audio;
};

SampleResult euler_sample(const DualBranchModel& model, const JointInput& assembled, const GuidanceConfig& g,
                          std::uint64_t seed);

}  // namespace dualdit
