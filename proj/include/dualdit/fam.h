// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Face-aware modulation: a soft mask over video tokens predicted at every
// interaction layer. It gates the audio-to-video update and scales the video
// features the audio branch reads from.

#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "dualdit/autograd.h"
#include "dualdit/params.h"

namespace dualdit {

enum class FamMode { kOff, kUnsupervised, kFixed, kDecaying };

const char* to_string(FamMode m);
FamMode parse_fam_mode(const std::string& s);

/// sigmoid(W_m (gamma * LN(H) + beta) + b_m), one scalar per video token.
struct MaskHead {
  AffineNormParams norm;
  LinearMap proj;  // D -> 1 with bias

  static MaskHead create(ParameterStore& store, const std::string& name, std::size_t width, std::mt19937_64& rng);
};

/// Weight of the mask loss. With decay the weight falls linearly from lambda0
/// to 0 over total_steps; without it stays at lambda0.
struct MaskSchedule {
  Real lambda0 = Real(0.1);
  std::size_t total_steps = 1;
  bool decay = true;
};

/// lambda0 * (1 - step / total_steps), 0 from total_steps on.
Real lambda_at(const MaskSchedule& schedule, std::size_t step);

inline constexpr Real kMaskNormEps = Real(1e-6);

/// h [N x D] -> mask [N x 1].
Var predict_mask(Graph& g, const MaskHead& head, const Var& h);
/// Sum over layers of the per-layer mean squared error against gt [N x 1].
/// Zero for an empty list.
Var mask_loss(Graph& g, std::span<const Var> masks, const Tensor& gt);

// Tensor API on one sample.

/// h [T x Nv x D] -> [T x Nv].
Tensor predict_mask(const Tensor& h_video_framed, const ParameterStore& store, const MaskHead& head);
Real mask_loss(std::span<const Tensor> masks, const Tensor& gt);
/// H * M with the mask broadcast over channels; h [T x Nv x D], m [T x Nv].
Tensor modulate_v2a_source(const Tensor& h_video_framed, const Tensor& mask);

}  // namespace dualdit
