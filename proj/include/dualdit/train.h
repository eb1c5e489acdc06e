// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Three-stage training loop. Stage 1 trains the audio branch alone, stage 2
// trains joint generation with the composite loss, stage 3 mixes all five
// tasks. Every random draw of step s, batch item b is seeded from
// (seed, s, b), so a resumed run replays the same data.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "dualdit/config.h"
#include "dualdit/model.h"
#include "dualdit/optimizer.h"

namespace dualdit {

/// splitmix64 of the combined words.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0, std::uint64_t d = 0);

struct MetricsRow {
  std::uint64_t step = 0;
  int stage = 0;
  Real loss_video = 0;
  Real loss_audio = 0;
  Real loss_mask = 0;
  Real lambda_mask = 0;
  double consistency = std::numeric_limits<double>::quiet_NaN();
};

std::string metrics_header();
std::string format_metrics(const MetricsRow& row);
std::vector<MetricsRow> read_metrics(const std::string& path);

struct TrainingBatch {
  JointInput input;  // noised latents
  TrainingTargets targets;
};

/// Batch of step `step`: per item a task, a sample, a noise level and noise.
TrainingBatch make_training_batch(const RunConfig& cfg, int stage, std::uint64_t step);

int stage_of(const TrainConfig& t, std::uint64_t step);

/// Mean consistency score of JointGen samples drawn with the configured
/// sampler over the fixed probe set.
double probe_consistency(const DualBranchModel& model, const RunConfig& cfg, std::size_t threads = 1);

struct TrainOptions {
  bool write_files = true;     // metrics.csv, checkpoints and config echo in out_dir
  std::string resume;          // checkpoint to continue from
  std::string init;            // checkpoint whose parameters seed a fresh run
  std::uint64_t stop_after = 0;  // stop once this many total steps are done (0: run to the end)
  std::ostream* log = nullptr;
  std::size_t log_every = 50;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  double final_consistency = std::numeric_limits<double>::quiet_NaN();
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  TrainResult run(const TrainOptions& opt);
  const DualBranchModel& model() const { return model_; }
  DualBranchModel& model() { return model_; }

  /// One optimizer step; returns the metrics row without a probe score.
  MetricsRow step(std::uint64_t step);

 private:
  RunConfig cfg_;
  DualBranchModel model_;
  AdamW optimizer_;
};

}  // namespace dualdit
