// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// The five task modes, the synthetic paired-sequence generator and the
// cross-modal consistency metric.
//
// Synthetic latents have four channels. Video: 0 carries the coupling trace
// inside the face region and independent noise elsewhere, 1 marks the face
// (+1) against the background (-1), 2 is a pattern chosen by the style token,
// 3 is a per-token appearance constant over time. Audio: 0 is the coupling
// trace resampled to the audio rate, 1 encodes the frame's symbol, 2 is a
// per-sample timbre constant, 3 is the position inside the frame.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dualdit/model.h"

namespace dualdit {

enum class TaskKind { kJointGen, kJointGenRefAudio, kJointContinuation, kV2ADubbing, kA2VSynthesis };

inline constexpr std::array<TaskKind, 5> kAllTasks = {TaskKind::kJointGen, TaskKind::kJointGenRefAudio,
                                                      TaskKind::kJointContinuation, TaskKind::kV2ADubbing,
                                                      TaskKind::kA2VSynthesis};

const char* to_string(TaskKind k);
TaskKind parse_task(const std::string& s);

struct SegmentFlags {
  bool present = false;
  bool noised = false;
  bool source = false;
  bool sink = false;

  friend bool operator==(const SegmentFlags&, const SegmentFlags&) = default;
};

struct TaskAssembly {
  TaskKind kind = TaskKind::kJointGen;
  SegmentFlags v_ref, v_cond, a_ref, a_cond, v_gen, a_gen;
  std::size_t prefix_frames = 0;  // conditional frames at the start of the timeline
  bool v_ref_from_cond = false;   // reference image taken from the first conditional frame
};

/// Continuation prefix length, max(1, T / 4).
std::size_t continuation_prefix(std::size_t frames);
TaskAssembly task_assembly(TaskKind kind, std::size_t frames);

struct DataConfig {
  std::size_t frames = 8;
  std::size_t video_tokens = 16;  // a square grid
  std::size_t audio_tokens = 4;
  std::size_t channels = 4;
  std::size_t style_vocab = 8;
  std::size_t symbol_vocab = 8;
  Real trace_rho = Real(0.5);       // lag-one correlation of the coupling trace
  Real background_rho = Real(0.5);  // same for background noise

  FrameLayout layout() const { return {frames, video_tokens, audio_tokens, channels}; }
  void validate() const;
};

struct SyntheticSample {
  DataConfig config;
  Tensor video;      // [T*Nv x C], rows ordered (frame, token)
  Tensor audio;      // [T*k x C]
  Tensor video_ref;  // [Nv x C]
  Tensor audio_ref;  // [k x C]
  std::vector<int> symbols;  // one per frame, drives the audio text
  int style = 0;             // video text
  Tensor gt_mask;            // [T x Nv], 1 inside the face region
  std::vector<Real> trace;   // [T], zero mean and unit variance
};

SyntheticSample generate_sample(const DataConfig& cfg, std::uint64_t seed);

struct AssembledSample {
  JointInput input;  // batch of one with clean latents everywhere and t = 0
  Tensor mask_gt;    // [T*Nv x 1]
};

AssembledSample assemble(TaskKind task, const SyntheticSample& sample);

/// I.i.d. task draws with probabilities ratios / sum(ratios).
class TaskScheduler {
 public:
  TaskScheduler(const std::array<unsigned, 5>& ratios, std::uint64_t seed);

  TaskKind next() { return draw(rng_); }
  TaskKind draw(std::mt19937_64& rng) const;
  std::array<double, 5> probabilities() const;

 private:
  std::array<unsigned, 5> ratios_;
  unsigned total_ = 0;
  std::mt19937_64 rng_;
};

/// Per-frame mean of video channel 0 over the face tokens (channel 1 > 0, or
/// the strongest token if none), resampled to the audio rate.
std::vector<Real> decode_video_trace(const Tensor& video, const FrameLayout& layout);

/// Pearson correlation between the decoded video trace and audio channel 0.
/// Throws kNonFinite when either side has zero variance.
Real consistency_score(const Tensor& video, const Tensor& audio, const FrameLayout& layout);

/// Pearson correlation of two sequences; kNonFinite on zero variance.
Real pearson(std::span<const Real> a, std::span<const Real> b);

}  // namespace dualdit
