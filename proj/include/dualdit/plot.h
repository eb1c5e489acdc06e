// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Static SVG figures: training curves from a metrics CSV and a bar chart of
// per-cell consistency from an ablation table.

#pragma once

#include <string>
#include <vector>

#include "dualdit/ablate.h"
#include "dualdit/train.h"

namespace dualdit {

struct PlotOptions {
  std::string title;
  std::size_t smooth = 25;  // moving-average window for the loss curves
  int width = 960;
  int height = 360;
};

/// Losses (smoothed, log scale) on the left panel, lambda and probe
/// consistency on the right.
std::string training_curves_svg(const std::vector<MetricsRow>& rows, const PlotOptions& opt = {});

/// Mean consistency per cell with min/max whiskers.
std::string ablation_bars_svg(const std::vector<AblationRow>& rows, const PlotOptions& opt = {});

}  // namespace dualdit
