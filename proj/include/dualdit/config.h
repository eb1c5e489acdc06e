// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its line-oriented `key = value` text form. Lines
// starting with '#' are comments; unknown or repeated keys are errors.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dualdit/fam.h"
#include "dualdit/model.h"
#include "dualdit/optimizer.h"
#include "dualdit/sampling.h"
#include "dualdit/tasks.h"

namespace dualdit {

enum class TimestepSampling { kUniform, kLogitNormal };

struct TrainConfig {
  std::size_t stage1_steps = 0;  // audio branch only
  std::size_t stage2_steps = 200;  // joint generation
  std::size_t stage3_steps = 0;  // all tasks mixed by `ratios`
  std::size_t batch = 4;
  AdamWConfig optim;
  Real lambda0 = Real(0.1);
  std::size_t decay_span = 0;  // 0: joint steps - 1, so the last joint step has weight 0
  TimestepSampling timestep = TimestepSampling::kUniform;
  TaskKind task = TaskKind::kJointGen;  // task of stages 1 and 2
  std::array<unsigned, 5> ratios = {4, 1, 1, 2, 2};
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t probe_every = 0;       // 0: final probe only
  std::size_t probe_count = 8;
  std::uint64_t probe_seed = 7919;

  std::size_t total_steps() const { return stage1_steps + stage2_steps + stage3_steps; }
  std::size_t joint_steps() const { return stage2_steps + stage3_steps; }
};

struct ModelShape {
  std::size_t depth = 2;
  std::size_t width = 16;
  std::size_t audio_width = 0;  // 0: same as width
  std::size_t heads = 4;
  std::size_t ff_mult = 2;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out_dir = "run";
  DataConfig data;
  ModelShape model;
  InteractionConfig interaction;
  FamMode fam = FamMode::kDecaying;
  TrainConfig train;
  GuidanceConfig sampler;
  std::vector<std::uint64_t> ablate_seeds = {1, 2, 3};

  ModelConfig model_config() const;
  MaskSchedule mask_schedule() const;
  void validate() const;
};

std::string to_text(const RunConfig& cfg);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
/// Applies one `key = value` assignment; used for overrides.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace dualdit
