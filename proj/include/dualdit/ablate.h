// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Interaction ablation harness: trains every cell of
// {SGI/SGI, STI/STI, STI/ATI, ATI/STI, ATI/ATI} x {off, unsupervised, fixed,
// decaying} plus an interaction-free baseline on joint generation, one run
// per seed, and reports the probe consistency of each run.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dualdit/config.h"

namespace dualdit {

struct AblationCell {
  bool interaction = true;
  Topology a2v = Topology::kATI;
  Topology v2a = Topology::kATI;
  FamMode fam = FamMode::kDecaying;

  /// "ATI/STI:decaying", or "disabled" for the baseline.
  std::string name() const;
};

/// The twenty matrix cells followed by the baseline.
std::vector<AblationCell> ablation_matrix();
/// Cells named in a comma-separated list; "all" or "" keeps the matrix. A
/// topology pair without ":fam" selects the decaying variant.
std::vector<AblationCell> select_cells(const std::string& filter);
AblationCell parse_cell(const std::string& name);

/// Joint-generation-only run of `cell` with the base schedule and `seed`.
RunConfig cell_config(const RunConfig& base, const AblationCell& cell, std::uint64_t seed);

struct AblationRow {
  AblationCell cell;
  std::uint64_t seed = 0;
  double consistency = 0;
  double loss_video = 0;  // mean over the last tenth of the run
  double loss_audio = 0;
  double seconds = 0;
};

std::string ablation_header();
std::string format_ablation(const AblationRow& row);
std::vector<AblationRow> read_ablation(const std::string& path);

struct AblateOptions {
  std::vector<AblationCell> cells = ablation_matrix();
  bool write_runs = false;  // per-run metrics and checkpoints under out_dir/<cell>/seed<k>
  std::ostream* log = nullptr;
  std::function<void(const AblationRow&)> on_row;
};

/// Runs cells x base.ablate_seeds. With base.threads > 1 independent runs
/// proceed in parallel; rows come back in cell-major order either way.
std::vector<AblationRow> run_ablation(const RunConfig& base, const AblateOptions& opt);

struct CellSummary {
  std::string cell;
  double mean = 0;
  double min = 0;
  double max = 0;
  std::size_t runs = 0;
};

std::vector<CellSummary> summarize(const std::vector<AblationRow>& rows);

}  // namespace dualdit
