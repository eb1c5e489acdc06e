// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary formats, all little-endian.
//
// Tensor file:  "UAVT" u32 dtype (1 = f32, 2 = f64) u64 rank, rank x u64 dims,
//               row-major data.
// Checkpoint:   "UAVG" u32 version u32 dtype, u64-length config text,
//               u64 parameter count, per parameter (u64-length name, rank,
//               dims, data), u64 optimizer step, first and second moments in
//               parameter order, u64 training step.
// Dataset shard: "UAVD" u32 version, u64-length generator config text,
//               u64 sample count, per sample the latents, references, mask and
//               trace as embedded tensor records plus symbols and style.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dualdit/optimizer.h"
#include "dualdit/params.h"
#include "dualdit/tasks.h"

namespace dualdit {

inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::uint32_t kDtypeF64 = 2;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kShardVersion = 1;

/// Dtype code of the build's scalar type.
std::uint32_t native_dtype();

void write_tensor(std::ostream& out, const Tensor& t);
/// Accepts either dtype and converts to Real.
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

struct Checkpoint {
  std::string config_text;
  ParameterStore params;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t optimizer_steps = 0;
  std::uint64_t step = 0;
};

void save_checkpoint(const std::string& path, const std::string& config_text, const ParameterStore& params,
                     const AdamW& optimizer, std::uint64_t step);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint values into `store`; names and shapes must match.
void restore_parameters(ParameterStore& store, const ParameterStore& saved);

void save_shard(const std::string& path, const std::string& config_text, const std::vector<SyntheticSample>& samples);
std::vector<SyntheticSample> load_shard(const std::string& path, const DataConfig& cfg, std::string* config_text = nullptr);

}  // namespace dualdit
