// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal interaction between the video and audio token streams.
//
// Both streams are viewed frame by frame: the video timeline holds T frames of
// Nv spatial tokens, the audio timeline T frames of k tokens. Rows are ordered
// (sample, frame, token). Three topologies are available per direction:
//
//   SGI  every token attends to every token of the other modality.
//   STI  video frame i attends to audio frame i; audio token j attends to
//        video frame floor(j / k).
//   ATI  video frame i attends to audio frames i-w..i+w (clamped at the
//        edges); audio token j attends to a blend of video frames i and i+1
//        weighted by its position inside the frame.
//
// Updates are computed as W_o [H + attention(H -> context)] and added back to
// the hidden state. W_o starts at zero so a fresh model is exactly unimodal.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dualdit/autograd.h"
#include "dualdit/numerics.h"
#include "dualdit/params.h"

namespace dualdit {

enum class Topology { kSGI, kSTI, kATI };

const char* to_string(Topology t);
Topology parse_topology(const std::string& s);

struct FrameLayout {
  std::size_t frames = 1;        // T
  std::size_t video_tokens = 1;  // Nv, spatial tokens per latent frame
  std::size_t audio_tokens = 1;  // Na == k, audio tokens per latent frame
  std::size_t width = 1;         // D

  std::size_t k() const noexcept { return audio_tokens; }
  std::size_t video_len() const noexcept { return frames * video_tokens; }
  std::size_t audio_len() const noexcept { return frames * audio_tokens; }
  /// Throws kLayout on degenerate sizes.
  void validate() const;

  friend bool operator==(const FrameLayout&, const FrameLayout&) = default;
};

struct InteractionConfig {
  bool enabled = true;
  Topology a2v = Topology::kATI;
  Topology v2a = Topology::kATI;
  int window = 1;  // w, read only when a2v == kATI
  std::size_t heads = 4;
  /// Block indices hosting an interaction layer; empty means every block.
  std::vector<std::size_t> layers;
  bool fam = true;

  bool active_at(std::size_t block) const;
  void validate(std::size_t width) const;
};

/// W_q, W_k^a, W_v^a, W_o^v (audio-to-video) and W_q^a, W_k^v, W_v^v, W_o^a
/// (video-to-audio).
struct AlignerParams {
  LinearMap a2v_q, a2v_k, a2v_v, a2v_o;
  LinearMap v2a_q, v2a_k, v2a_v, v2a_o;

  static AlignerParams create(ParameterStore& store, const std::string& name, std::size_t video_width,
                              std::size_t audio_width, std::mt19937_64& rng);
};

// ---------------------------------------------------------------------------
// Frame structure
// ---------------------------------------------------------------------------

/// [L^v x D] -> [T x Nv x D].
Tensor reshape_video(const Tensor& h_video, const FrameLayout& layout);
/// [L^a x D] -> [T x Na x D].
Tensor reshape_audio(const Tensor& h_audio, const FrameLayout& layout);
/// [T x N x D] -> [T*N x D].
Tensor flatten_frames(const Tensor& framed);

/// Frame indices i-w..i+w clamped to [0, T-1].
std::vector<std::size_t> audio_context_frames(std::size_t frame, int window, std::size_t frames);
/// Concatenated audio frames around `frame`, [(2w+1)*Na x D].
Tensor build_audio_context(const Tensor& h_audio_framed, std::size_t frame, int window);

struct VideoBlend {
  std::size_t frame = 0;  // i = floor(j / k)
  Real alpha = 0;         // weight of frame i+1; 0 in the final block
};

/// Interpolation weights of audio token j. With nearest == true alpha is
/// forced to 0 (the time-aligned baseline).
VideoBlend video_context_blend(std::size_t audio_token, const FrameLayout& layout, bool nearest = false);
/// C^v_j = (1 - alpha) H^v_i + alpha H^v_{i+1}, [Nv x D].
Tensor interpolate_video_context(const Tensor& h_video_framed, std::size_t audio_token, const FrameLayout& layout);

// ---------------------------------------------------------------------------
// Aligners on a batch of timelines (graph level)
// ---------------------------------------------------------------------------

/// Pre-residual audio-to-video update for `batch` stacked timelines.
/// video [B*T*Nv x Dv], audio [B*T*Na x Da] -> [B*T*Nv x Dv].
Var a2v_update(Graph& g, const AlignerParams& params, const InteractionConfig& cfg, const FrameLayout& layout,
               std::size_t batch, const Var& video, const Var& audio);

/// Pre-residual video-to-audio update. `video_source` is the (optionally
/// mask-modulated) video timeline. -> [B*T*Na x Da].
Var v2a_update(Graph& g, const AlignerParams& params, const InteractionConfig& cfg, const FrameLayout& layout,
               std::size_t batch, const Var& audio, const Var& video_source);

// ---------------------------------------------------------------------------
// Single-sample tensor API
// ---------------------------------------------------------------------------

/// H_bar^v for one sample; inputs framed [T x Nv x D] and [T x Na x D].
Tensor a2v_align(const Tensor& h_video_framed, const Tensor& h_audio_framed, const ParameterStore& store,
                 const AlignerParams& params, const InteractionConfig& cfg);
/// H_bar^a for one sample.
Tensor v2a_align(const Tensor& h_audio_framed, const Tensor& h_video_framed, const ParameterStore& store,
                 const AlignerParams& params, const InteractionConfig& cfg);
/// Global (SGI) update of queries over every key row, same residual contract.
/// Uses the a2v projections when the query side is video and the v2a ones
/// otherwise.
Tensor global_align(const Tensor& h_query, const Tensor& h_kv, const ParameterStore& store,
                    const AlignerParams& params, bool query_is_video, std::size_t heads);

/// H + H_bar, or H + gate * H_bar with the gate broadcast over channels (one
/// value per row) or given elementwise.
Tensor inject_residual(const Tensor& h, const Tensor& h_bar, const Tensor* gate = nullptr);

}  // namespace dualdit
