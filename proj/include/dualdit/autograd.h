// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a tape of row-major tensor ops. The op set
// is exactly what the dual-branch denoiser needs; it is not a general autograd.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dualdit/params.h"
#include "dualdit/tensor.h"

namespace dualdit {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Graph& graph() const { return *graph_; }
  int id() const noexcept { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  /// Called with the graph and the node it was recorded for.
  using BackwardFn = std::function<void(Graph&, const Var& self)>;

  /// With track_grad == false no backward closures are recorded; use that for
  /// inference and finite-difference evaluation.
  explicit Graph(const ParameterStore* params = nullptr, bool track_grad = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool tracking() const noexcept { return track_; }

  Var constant(Tensor value);
  /// Leaf bound to a stored parameter. Repeated calls return the same node.
  Var param(ParamId id);

  /// Used by op implementations. `fn` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor& value(const Var& v) const { return nodes_[check(v)].value; }
  bool needs_grad(const Var& v) const { return nodes_[check(v)].needs_grad; }
  /// Gradient buffer of v, zero-allocated on first access.
  Tensor& grad(const Var& v);

  /// Seeds d(loss)/d(loss) = 1 and runs the tape backwards.
  void backward(const Var& loss);

  bool has_param_grad(ParamId id) const;
  /// Gradient w.r.t. a stored parameter; zeros if the parameter was unused.
  Tensor param_grad(ParamId id) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  int check(const Var& v) const;

  const ParameterStore* params_;
  bool track_;
  std::deque<Node> nodes_;
  std::vector<int> param_nodes_;
};

// ---------------------------------------------------------------------------
// Row maps: sparse linear maps between row sets, out[o] += w * in[i].
// ---------------------------------------------------------------------------

struct RowTerm {
  std::uint32_t out;
  std::uint32_t in;
  Real weight;
};

struct RowMap {
  std::size_t in_rows = 0;
  std::size_t out_rows = 0;
  std::vector<RowTerm> terms;

  void add(std::size_t out, std::size_t in, Real weight = Real(1)) {
    terms.push_back({static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in), weight});
  }
  /// out[j] = in[rows[j]].
  static RowMap gather(std::span<const std::uint32_t> rows, std::size_t in_rows);
  void validate() const;
};

/// One block of attention: queries [q_begin, q_begin + q_count) attend to keys
/// [k_begin, k_begin + k_count). Query rows outside every group produce zeros.
struct AttnGroup {
  std::uint32_t q_begin;
  std::uint32_t q_count;
  std::uint32_t k_begin;
  std::uint32_t k_count;
};

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, Real c);
/// x + v with v of length cols() broadcast over rows.
Var add_row(const Var& x, const Var& v);
/// x * v with v of length cols() broadcast over rows.
Var mul_row(const Var& x, const Var& v);
/// Row r of x scaled by s[r]; s holds rows() values.
Var mul_rows(const Var& x, const Var& s);
/// out[r] = weights[r] * v, shape [weights.size() x len(v)].
Var broadcast_rows(const Var& v, std::span<const Real> weights);
Var remap_rows(const Var& x, const RowMap& map);
/// base with src rows added in: out = base; out[o] += w * src[i]. Rows of base
/// not named by the map are copied unchanged.
Var scatter_add_rows(const Var& base, const Var& src, const RowMap& map);
/// Per-row normalization, no affine. eps >= 0; a zero-variance row with
/// eps == 0 maps to zeros.
Var layer_norm(const Var& x, Real eps);
Var silu(const Var& x);
/// tanh approximation.
Var gelu(const Var& x);
/// Clamped so outputs stay strictly inside (0, 1).
Var sigmoid(const Var& x);
/// Scaled dot-product attention with 1/sqrt(cols/heads) logit scaling,
/// evaluated independently per group and head. Output has q's shape.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::span<const AttnGroup> groups);
/// Mean of (pred - target)^2 over rows with row_mask[r] != 0 (all columns).
/// Returns 0 when no row is selected.
Var masked_mse(const Var& pred, const Tensor& target, std::span<const std::uint8_t> row_mask);
/// sum(x * w) for a constant w of the same size.
Var weighted_sum(const Var& x, const Tensor& w);

}  // namespace dualdit
