// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/fam.h"

#include "dualdit/numerics.h"

namespace dualdit {

const char* to_string(FamMode m) {
  switch (m) {
    case FamMode::kOff: return "off";
    case FamMode::kUnsupervised: return "unsupervised";
    case FamMode::kFixed: return "fixed";
    case FamMode::kDecaying: return "decaying";
  }
  return "?";
}

FamMode parse_fam_mode(const std::string& s) {
  if (s == "off") return FamMode::kOff;
  if (s == "unsupervised") return FamMode::kUnsupervised;
  if (s == "fixed") return FamMode::kFixed;
  if (s == "decaying") return FamMode::kDecaying;
  throw Error(ErrorCode::kConfig, "unknown FAM mode '" + s + "' (expected off, unsupervised, fixed or decaying)");
}

MaskHead MaskHead::create(ParameterStore& store, const std::string& name, std::size_t width, std::mt19937_64& rng) {
  MaskHead h;
  h.norm = AffineNormParams::create(store, name + ".norm", width);
  h.proj = LinearMap::create(store, name + ".proj", width, 1, true, InitMode::kScaledRandom, rng);
  return h;
}

Real lambda_at(const MaskSchedule& schedule, std::size_t step) {
  if (!schedule.decay) return schedule.lambda0;
  if (schedule.total_steps == 0 || step >= schedule.total_steps) return Real(0);
  return schedule.lambda0 * (Real(1) - Real(step) / Real(schedule.total_steps));
}

Var predict_mask(Graph& g, const MaskHead& head, const Var& h) {
  return sigmoid(apply(g, head.proj, apply(g, head.norm, layer_norm(h, kMaskNormEps))));
}

Var mask_loss(Graph& g, std::span<const Var> masks, const Tensor& gt) {
  Var total = g.constant(Tensor::scalar(0));
  if (masks.empty()) return total;
  const std::vector<std::uint8_t> all(gt.rows(), 1);
  for (const Var& m : masks) total = add(total, masked_mse(m, gt, all));
  return total;
}

Tensor predict_mask(const Tensor& h_video_framed, const ParameterStore& store, const MaskHead& head) {
  if (h_video_framed.rank() != 3) throw Error(ErrorCode::kInvalidShape, "predict_mask expects [T x Nv x D]");
  const std::size_t t = h_video_framed.dim(0);
  const std::size_t nv = h_video_framed.dim(1);
  const std::size_t d = h_video_framed.dim(2);
  if (store[head.norm.gamma].value.size() != d) {
    throw Error(ErrorCode::kInvalidShape, "predict_mask: width " + std::to_string(d) + " does not match the head");
  }
  Graph g(&store, false);
  const Var m = predict_mask(g, head, g.constant(h_video_framed.reshaped({t * nv, d})));
  return m.value().reshaped({t, nv});
}

Real mask_loss(std::span<const Tensor> masks, const Tensor& gt) {
  Real total = 0;
  for (const Tensor& m : masks) {
    if (m.size() != gt.size()) {
      throw Error(ErrorCode::kInvalidShape, "mask_loss: mask " + shape_str(m.shape()) + " vs gt " + shape_str(gt.shape()));
    }
    Real sum = 0;
    for (std::size_t i = 0; i < m.size(); ++i) sum += (m[i] - gt[i]) * (m[i] - gt[i]);
    total += sum / Real(m.size());
  }
  return total;
}

Tensor modulate_v2a_source(const Tensor& h_video_framed, const Tensor& mask) {
  if (h_video_framed.rank() != 3 || mask.size() != h_video_framed.dim(0) * h_video_framed.dim(1)) {
    throw Error(ErrorCode::kInvalidShape,
                "modulate_v2a_source: " + shape_str(h_video_framed.shape()) + " with mask " + shape_str(mask.shape()));
  }
  Tensor out = h_video_framed;
  const std::size_t d = h_video_framed.dim(2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i / d];
  return out;
}

}  // namespace dualdit
