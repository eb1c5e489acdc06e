// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dual-branch joint denoiser. Each branch is a stack of adaLN transformer
// blocks (self-attention, text cross-attention, feed-forward); interaction
// layers sit between the text cross-attention and the feed-forward of the
// configured blocks.
//
// A batch stacks samples along rows. Per sample the video branch holds
// [Nv reference rows][T*Nv timeline rows] and the audio branch
// [k reference rows][T*k timeline rows]. Every row carries a RowInfo that
// says which role it plays and whether it is noised or touched by
// interaction.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dualdit/autograd.h"
#include "dualdit/fam.h"
#include "dualdit/interaction.h"
#include "dualdit/numerics.h"
#include "dualdit/params.h"

namespace dualdit {

enum class Role : std::uint8_t { kRef = 0, kCond = 1, kGen = 2 };

struct RowInfo {
  Role role = Role::kGen;
  bool present = true;  // absent rows are replaced by the learned null embedding
  bool noised = false;  // part of the generation segment
  bool source = false;  // feeds the other branch through interaction
  bool sink = false;    // receives interaction updates

  friend bool operator==(const RowInfo&, const RowInfo&) = default;
};

struct BranchInput {
  Tensor latents;                        // [B*rows x channels]
  std::vector<RowInfo> rows;             // B*rows entries
  std::vector<std::vector<int>> text;    // token ids per sample, attended after the null token
};

struct JointInput {
  std::size_t batch = 0;
  std::vector<Real> t;  // noise level of the generation rows, per sample
  BranchInput video;
  BranchInput audio;
};

/// Stacks batches along rows.
JointInput concat_inputs(std::span<const JointInput> parts);

struct BranchConfig {
  std::size_t width = 16;
  std::size_t heads = 4;
  std::size_t ff_mult = 2;
  std::size_t vocab = 8;
  std::size_t max_text = 16;
};

struct ModelConfig {
  std::size_t channels = 4;  // latent channels per token
  std::size_t depth = 2;
  std::size_t frames = 4;
  std::size_t video_tokens = 4;
  std::size_t audio_tokens = 3;
  BranchConfig video;
  BranchConfig audio;
  InteractionConfig interaction;

  FrameLayout layout() const { return {frames, video_tokens, audio_tokens, video.width}; }
  std::size_t video_rows() const { return video_tokens * (frames + 1); }
  std::size_t audio_rows() const { return audio_tokens * (frames + 1); }
  void validate() const;
};

struct BlockParams {
  // shift, scale, gate for attention then for the feed-forward.
  std::array<LinearMap, 6> ada;
  AttentionParams self_attn;
  AffineNormParams text_norm;
  AttentionParams text_attn;
  LinearMap ff_in;
  LinearMap ff_out;
};

struct BranchParams {
  LinearMap in_proj;
  ParamId time_pos = 0;  // video: [T x D]; audio: [T*k x D]
  ParamId slot_pos = 0;  // video: [Nv x D]; audio reference slots: [k x D]
  ParamId role = 0;      // [3 x D]
  ParamId null_ref = 0;  // [1 x D]
  ParamId text_table = 0;  // [(vocab + 1) x D], last row is the null token
  ParamId text_pos = 0;    // [(max_text + 1) x D], slot 0 belongs to the null token
  LinearMap t_in;
  LinearMap t_out;
  std::vector<BlockParams> blocks;
  std::array<LinearMap, 2> final_ada;  // shift, scale
  LinearMap out_proj;
};

struct InteractionLayer {
  std::size_t block = 0;
  AlignerParams aligner;
  std::optional<MaskHead> mask;
};

/// Branch states around one interaction layer.
struct InteractionSnapshot {
  std::size_t block = 0;
  Tensor video_before, video_after;
  Tensor audio_before, audio_after;
};

struct ForwardOptions {
  bool interact = true;  // false runs the branches as if unimodal
  bool video = true;
  bool audio = true;
  std::vector<InteractionSnapshot>* snapshots = nullptr;
};

struct ForwardResult {
  Var video;               // [B*video_rows x channels], invalid if the branch was skipped
  Var audio;               // [B*audio_rows x channels]
  std::vector<Var> masks;  // per interaction layer, [B*T*Nv x 1]
};

struct Prediction {
  Tensor video;
  Tensor audio;
  std::vector<Tensor> masks;
};

class DualBranchModel {
 public:
  DualBranchModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterStore& params() noexcept { return store_; }
  const ParameterStore& params() const noexcept { return store_; }
  const BranchParams& video_params() const noexcept { return video_; }
  const BranchParams& audio_params() const noexcept { return audio_; }
  const std::vector<InteractionLayer>& interaction_layers() const noexcept { return layers_; }

  ForwardResult forward(Graph& g, const JointInput& in, const ForwardOptions& opt = {}) const;

  Prediction joint_forward(const JointInput& in) const;
  /// Both branches with interaction suppressed.
  Prediction nullified_forward(const JointInput& in) const;
  /// One branch on its own; the other output is left empty.
  Prediction unimodal_forward(const JointInput& in, bool video) const;

  void validate_input(const JointInput& in) const;

 private:
  Var branch_embed(Graph& g, const BranchParams& p, const BranchInput& in, std::size_t batch, bool video) const;

  ModelConfig config_;
  ParameterStore store_;
  BranchParams video_;
  BranchParams audio_;
  std::vector<InteractionLayer> layers_;
};

/// Sinusoidal features of a noise level in [0, 1], width dim (even).
Tensor timestep_features(std::span<const Real> t, std::size_t dim);

// ---------------------------------------------------------------------------
// Flow matching and losses
// ---------------------------------------------------------------------------

/// z_t = (1 - t) x0 + t eps and the velocity eps - x0.
std::pair<Tensor, Tensor> flow_target(const Tensor& x0, const Tensor& eps, Real t);

/// Row mask of the generation segment.
std::vector<std::uint8_t> generation_rows(std::span<const RowInfo> rows);

/// Mean squared error over the generation rows only.
Var loss_branch(const Var& u, const Tensor& target, std::span<const RowInfo> rows);
Real loss_video(const Tensor& u_v, const Tensor& target, std::span<const RowInfo> rows);
Real loss_audio(const Tensor& u_a, const Tensor& target, std::span<const RowInfo> rows);
/// L_v + L_a + lambda(step) L_m.
Real loss_joint(Real l_video, Real l_audio, Real l_mask, const MaskSchedule& schedule, std::size_t step);

struct TrainingTargets {
  Tensor video;    // velocity targets, full row layout
  Tensor audio;
  Tensor mask_gt;  // [B*T*Nv x 1]
};

struct LossTerms {
  Var total;
  Var video;
  Var audio;
  Var mask;
};

/// Composite loss. A skipped branch contributes 0; mask supervision is skipped
/// when lambda == 0.
LossTerms joint_loss(Graph& g, const ForwardResult& out, const JointInput& in, const TrainingTargets& targets,
                     Real lambda);

}  // namespace dualdit
