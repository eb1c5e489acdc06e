// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Invariant suite run by `dualdit check`: gradients, locality, zero-init
// neutrality, guidance algebra, mask contract, task participation, scheduler
// frequencies and checkpoint round trips.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dualdit/model.h"
#include "dualdit/train.h"

namespace dualdit {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct CheckOptions {
  std::uint64_t seed = 0;
  /// Relative gradient tolerance; negative picks 1e-4 for 64-bit builds and
  /// 2e-2 for 32-bit builds.
  Real grad_tol = -1;
  Real grad_step = -1;  // finite-difference step; negative picks by precision
  /// Negative control: give the aligner output projections nonzero values
  /// before the neutrality check.
  bool corrupt_output_init = false;
};

/// 2 blocks, width 16, T = 4, Nv = 4, k = 3.
RunConfig small_run_config();

/// N(0, (scale / sqrt(cols))^2) for every parameter, including the zero-init
/// ones.
void randomize_parameters(ParameterStore& store, std::uint64_t seed, Real scale = Real(0.5));

/// Three samples covering every parameter: JointGen with an absent video
/// reference and empty video text, JointGenRefAudio and JointContinuation.
TrainingBatch mixed_task_batch(const RunConfig& cfg, std::uint64_t seed);

struct GradGroupResult {
  std::string name;
  std::size_t size = 0;
  Real analytic_norm = 0;
  Real rel_error = 0;
};

/// Backprop against central differences of the composite loss, one result
/// per parameter tensor.
std::vector<GradGroupResult> gradient_check(DualBranchModel& model, const TrainingBatch& batch, Real lambda, Real h);

std::vector<CheckResult> run_checks(const CheckOptions& opt, const std::function<void(const CheckResult&)>& report = {});

}  // namespace dualdit
