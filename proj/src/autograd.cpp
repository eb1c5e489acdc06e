// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/autograd.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace dualdit {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

MatMap as_mat(Tensor& t) { return MatMap(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kInvalidShape,
                std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  if (out.empty()) out.push_back(last);
  else out.back() = last;
  return out;
}

// Accumulate `scale * src` into the gradient of v when v needs one.
void accumulate(Graph& g, const Var& v, const Tensor& src, Real factor = Real(1)) {
  if (!g.needs_grad(v)) return;
  Tensor& dst = g.grad(v);
  Real* d = dst.data();
  const Real* s = src.data();
  const std::size_t n = dst.size();
  if (factor == Real(1)) {
    for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) d[i] += factor * s[i];
  }
}

Real sigmoid_scalar(Real x) {
  constexpr Real lo = std::numeric_limits<Real>::min();
  const Real hi = std::nextafter(Real(1), Real(0));
  Real y;
  if (x >= 0) {
    y = Real(1) / (Real(1) + std::exp(-x));
  } else {
    const Real e = std::exp(x);
    y = e / (Real(1) + e);
  }
  return std::clamp(y, lo, hi);
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return graph_->value(*this); }

Graph::Graph(const ParameterStore* params, bool track_grad)
    : params_(params), track_(track_grad), param_nodes_(params ? params->size() : 0, -1) {}

int Graph::check(const Var& v) const {
  if (v.graph_ != this || v.id_ < 0 || std::size_t(v.id_) >= nodes_.size()) {
    throw Error(ErrorCode::kIndex, "variable does not belong to this graph");
  }
  return v.id_;
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, int(nodes_.size()) - 1);
}

Var Graph::param(ParamId id) {
  if (!params_) throw Error(ErrorCode::kConfig, "graph has no parameter store");
  if (id >= param_nodes_.size()) throw Error(ErrorCode::kIndex, "parameter id out of range");
  if (param_nodes_[id] >= 0) return Var(this, param_nodes_[id]);
  nodes_.push_back(Node{(*params_)[id].value, {}, {}, track_});
  param_nodes_[id] = int(nodes_.size()) - 1;
  return Var(this, param_nodes_[id]);
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (track_) {
    for (const auto& in : inputs) needs = needs || nodes_[check(in)].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs});
  return Var(this, int(nodes_.size()) - 1);
}

Tensor& Graph::grad(const Var& v) {
  Node& n = nodes_[check(v)];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(const Var& loss) {
  const int top = check(loss);
  if (nodes_[top].value.size() != 1) throw Error(ErrorCode::kInvalidShape, "backward() needs a scalar loss");
  if (!track_) throw Error(ErrorCode::kConfig, "backward() on a graph without gradient tracking");
  grad(loss).fill(Real(1));
  for (int i = top; i >= 0; --i) {
    Node& n = nodes_[std::size_t(i)];
    if (n.backward && !n.grad.empty()) n.backward(*this, Var(this, i));
  }
}

bool Graph::has_param_grad(ParamId id) const {
  return id < param_nodes_.size() && param_nodes_[id] >= 0 && !nodes_[std::size_t(param_nodes_[id])].grad.empty();
}

Tensor Graph::param_grad(ParamId id) const {
  if (has_param_grad(id)) return nodes_[std::size_t(param_nodes_[id])].grad;
  return Tensor((*params_)[id].value.shape());
}

// ---------------------------------------------------------------------------
// RowMap
// ---------------------------------------------------------------------------

RowMap RowMap::gather(std::span<const std::uint32_t> rows, std::size_t in_rows) {
  RowMap m;
  m.in_rows = in_rows;
  m.out_rows = rows.size();
  m.terms.reserve(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) m.add(j, rows[j]);
  return m;
}

void RowMap::validate() const {
  for (const auto& t : terms) {
    if (t.out >= out_rows || t.in >= in_rows) throw Error(ErrorCode::kIndex, "row map term out of range");
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 2 || xv.cols() != wv.dim(1)) {
    throw Error(ErrorCode::kInvalidShape,
                "linear: input " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
  }
  const std::size_t out = wv.dim(0);
  Tensor y(with_last(xv.shape(), out));
  auto Y = as_mat(y);
  Y.noalias() = as_mat(xv) * as_mat(wv).transpose();
  if (bias) {
    const Tensor& bv = bias->value();
    if (bv.size() != out) throw Error(ErrorCode::kInvalidShape, "linear: bias " + shape_str(bv.shape()));
    Y.rowwise() += Eigen::Map<const RowVec>(bv.data(), Eigen::Index(out));
  }
  const Var b = bias.value_or(Var{});
  auto fn = [x, weight, b](Graph& g, const Var& self) {
    const auto dY = as_mat(g.grad(self));
    if (g.needs_grad(x)) as_mat(g.grad(x)).noalias() += dY * as_mat(weight.value());
    if (g.needs_grad(weight)) as_mat(g.grad(weight)).noalias() += dY.transpose() * as_mat(x.value());
    if (b.valid() && g.needs_grad(b)) {
      Tensor& db = g.grad(b);
      Eigen::Map<RowVec>(db.data(), Eigen::Index(db.size())) += dY.colwise().sum();
    }
  };
  if (bias) return g.record(std::move(y), {x, weight, *bias}, fn);
  return g.record(std::move(y), {x, weight}, fn);
}

Var add(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Real* bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.graph().record(std::move(y), {a, b}, [a, b](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    accumulate(g, a, dy);
    accumulate(g, b, dy);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Real* bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.graph().record(std::move(y), {a, b}, [a, b](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    accumulate(g, a, dy);
    accumulate(g, b, dy, Real(-1));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Real* bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.graph().record(std::move(y), {a, b}, [a, b](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (g.needs_grad(a)) {
      Tensor& da = g.grad(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (g.needs_grad(b)) {
      Tensor& db = g.grad(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var scale(const Var& x, Real c) {
  Tensor y = x.value();
  for (auto& v : y.values()) v *= c;
  return x.graph().record(std::move(y), {x}, [x, c](Graph& g, const Var& self) {
    accumulate(g, x, g.grad(self), c);
  });
}

Var add_row(const Var& x, const Var& v) {
  const Tensor& xv = x.value();
  if (v.value().size() != xv.cols()) throw Error(ErrorCode::kInvalidShape, "add_row: vector length mismatch");
  Tensor y = xv;
  as_mat(y).rowwise() += Eigen::Map<const RowVec>(v.value().data(), Eigen::Index(xv.cols()));
  return x.graph().record(std::move(y), {x, v}, [x, v](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    accumulate(g, x, dy);
    if (g.needs_grad(v)) {
      Tensor& dv = g.grad(v);
      Eigen::Map<RowVec>(dv.data(), Eigen::Index(dv.size())) += as_mat(dy).colwise().sum();
    }
  });
}

Var mul_row(const Var& x, const Var& v) {
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  if (v.value().size() != cols) throw Error(ErrorCode::kInvalidShape, "mul_row: vector length mismatch");
  Tensor y = xv;
  const Real* vv = v.value().data();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    Real* yr = y.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yr[c] *= vv[c];
  }
  return x.graph().record(std::move(y), {x, v}, [x, v](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    const std::size_t cols = xv.cols();
    const bool need_x = g.needs_grad(x);
    const bool need_v = g.needs_grad(v);
    Tensor* dx = need_x ? &g.grad(x) : nullptr;
    Tensor* dv = need_v ? &g.grad(v) : nullptr;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        if (dx) (*dx)[i] += dy[i] * vv[c];
        if (dv) (*dv)[c] += dy[i] * xv[i];
      }
    }
  });
}

Var mul_rows(const Var& x, const Var& s) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  if (s.value().size() != rows) {
    throw Error(ErrorCode::kInvalidShape, "mul_rows: " + shape_str(s.value().shape()) + " scales for " +
                                              std::to_string(rows) + " rows");
  }
  Tensor y = xv;
  const Real* sv = s.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real* yr = y.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yr[c] *= sv[r];
  }
  return x.graph().record(std::move(y), {x, s}, [x, s](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    const std::size_t cols = xv.cols();
    Tensor* dx = g.needs_grad(x) ? &g.grad(x) : nullptr;
    Tensor* ds = g.needs_grad(s) ? &g.grad(s) : nullptr;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      Real acc = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        if (dx) (*dx)[i] += dy[i] * sv[r];
        acc += dy[i] * xv[i];
      }
      if (ds) (*ds)[r] += acc;
    }
  });
}

Var broadcast_rows(const Var& v, std::span<const Real> weights) {
  const Tensor& vv = v.value();
  const std::size_t cols = vv.size();
  Tensor y({weights.size(), cols});
  for (std::size_t r = 0; r < weights.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) y.at(r, c) = weights[r] * vv[c];
  }
  std::vector<Real> w(weights.begin(), weights.end());
  return v.graph().record(std::move(y), {v}, [v, w = std::move(w)](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    Tensor& dv = g.grad(v);
    const std::size_t cols = dv.size();
    for (std::size_t r = 0; r < w.size(); ++r) {
      if (w[r] == Real(0)) continue;
      for (std::size_t c = 0; c < cols; ++c) dv[c] += w[r] * dy[r * cols + c];
    }
  });
}

namespace {

void apply_row_terms(const RowMap& map, const Tensor& src, Tensor& dst) {
  const std::size_t cols = src.cols();
  for (const auto& t : map.terms) {
    const Real* s = src.data() + std::size_t(t.in) * cols;
    Real* d = dst.data() + std::size_t(t.out) * cols;
    if (t.weight == Real(1)) {
      for (std::size_t c = 0; c < cols; ++c) d[c] += s[c];
    } else {
      for (std::size_t c = 0; c < cols; ++c) d[c] += t.weight * s[c];
    }
  }
}

void apply_row_terms_transposed(const RowMap& map, const Tensor& dout, Tensor& din) {
  const std::size_t cols = dout.cols();
  for (const auto& t : map.terms) {
    const Real* s = dout.data() + std::size_t(t.out) * cols;
    Real* d = din.data() + std::size_t(t.in) * cols;
    for (std::size_t c = 0; c < cols; ++c) d[c] += t.weight * s[c];
  }
}

}  // namespace

Var remap_rows(const Var& x, const RowMap& map) {
  const Tensor& xv = x.value();
  if (xv.rows() != map.in_rows) {
    throw Error(ErrorCode::kInvalidShape, "remap_rows: map expects " + std::to_string(map.in_rows) +
                                              " rows, got " + shape_str(xv.shape()));
  }
  Tensor y({map.out_rows, xv.cols()});
  apply_row_terms(map, xv, y);
  auto shared = std::make_shared<const RowMap>(map);
  return x.graph().record(std::move(y), {x}, [x, shared](Graph& g, const Var& self) {
    apply_row_terms_transposed(*shared, g.grad(self), g.grad(x));
  });
}

Var scatter_add_rows(const Var& base, const Var& src, const RowMap& map) {
  const Tensor& bv = base.value();
  const Tensor& sv = src.value();
  if (bv.rows() != map.out_rows || sv.rows() != map.in_rows || bv.cols() != sv.cols()) {
    throw Error(ErrorCode::kInvalidShape,
                "scatter_add_rows: base " + shape_str(bv.shape()) + " src " + shape_str(sv.shape()));
  }
  Tensor y = bv;
  apply_row_terms(map, sv, y);
  auto shared = std::make_shared<const RowMap>(map);
  return base.graph().record(std::move(y), {base, src}, [base, src, shared](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    accumulate(g, base, dy);
    if (g.needs_grad(src)) apply_row_terms_transposed(*shared, dy, g.grad(src));
  });
}

Var layer_norm(const Var& x, Real eps) {
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  if (cols == 0) throw Error(ErrorCode::kInvalidShape, "layer_norm: empty last dimension");
  if (!(eps >= 0)) throw Error(ErrorCode::kConfig, "layer_norm: eps must be >= 0");
  const std::size_t rows = xv.rows();
  Tensor y(xv.shape());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * cols;
    Real mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= Real(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= Real(cols);
    const Real denom = var + eps;
    const Real inv = denom > 0 ? Real(1) / std::sqrt(denom) : Real(0);
    (*inv_std)[r] = inv;
    Real* yr = y.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - mean) * inv;
  }
  return x.graph().record(std::move(y), {x}, [x, inv_std](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    const Tensor& yv = self.value();
    Tensor& dx = g.grad(x);
    const std::size_t cols = yv.cols();
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      const Real* dyr = dy.data() + r * cols;
      const Real* yr = yv.data() + r * cols;
      Real mean_dy = 0;
      Real mean_dyy = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        mean_dy += dyr[c];
        mean_dyy += dyr[c] * yr[c];
      }
      mean_dy /= Real(cols);
      mean_dyy /= Real(cols);
      const Real inv = (*inv_std)[r];
      Real* dxr = dx.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dxr[c] += inv * (dyr[c] - mean_dy - yr[c] * mean_dyy);
    }
  });
}

Var silu(const Var& x) {
  Tensor y = x.value();
  for (auto& v : y.values()) v = v * sigmoid_scalar(v);
  return x.graph().record(std::move(y), {x}, [x](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    const Tensor& xv = x.value();
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const Real s = sigmoid_scalar(xv[i]);
      dx[i] += dy[i] * s * (Real(1) + xv[i] * (Real(1) - s));
    }
  });
}

Var gelu(const Var& x) {
  constexpr Real kC = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real kA = Real(0.044715);
  Tensor y = x.value();
  for (auto& v : y.values()) v = Real(0.5) * v * (Real(1) + std::tanh(kC * (v + kA * v * v * v)));
  return x.graph().record(std::move(y), {x}, [x](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    const Tensor& xv = x.value();
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const Real v = xv[i];
      const Real th = std::tanh(kC * (v + kA * v * v * v));
      const Real d = Real(0.5) * (Real(1) + th) +
                     Real(0.5) * v * (Real(1) - th * th) * kC * (Real(1) + Real(3) * kA * v * v);
      dx[i] += dy[i] * d;
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor y = x.value();
  for (auto& v : y.values()) v = sigmoid_scalar(v);
  return x.graph().record(std::move(y), {x}, [x](Graph& g, const Var& self) {
    const Tensor& dy = g.grad(self);
    const Tensor& yv = self.value();
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < yv.size(); ++i) dx[i] += dy[i] * yv[i] * (Real(1) - yv[i]);
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::span<const AttnGroup> groups) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t dim = qv.cols();
  if (heads == 0 || dim % heads != 0) {
    throw Error(ErrorCode::kConfig, "attention: " + std::to_string(heads) + " heads do not divide width " +
                                        std::to_string(dim));
  }
  if (kv.cols() != dim || vv.cols() != dim || kv.rows() != vv.rows()) {
    throw Error(ErrorCode::kInvalidShape, "attention: q " + shape_str(qv.shape()) + " k " + shape_str(kv.shape()) +
                                              " v " + shape_str(vv.shape()));
  }
  const std::size_t hd = dim / heads;
  const Real scale = Real(1) / std::sqrt(Real(hd));

  std::size_t prob_size = 0;
  for (const auto& gr : groups) {
    if (gr.q_begin + gr.q_count > qv.rows() || gr.k_begin + gr.k_count > kv.rows() || gr.k_count == 0) {
      throw Error(ErrorCode::kIndex, "attention: group out of range");
    }
    prob_size += std::size_t(gr.q_count) * gr.k_count * heads;
  }

  auto probs = std::make_shared<std::vector<Real>>(prob_size);
  auto group_list = std::make_shared<std::vector<AttnGroup>>(groups.begin(), groups.end());
  Tensor out(qv.shape());
  const auto Q = as_mat(qv);
  const auto K = as_mat(kv);
  const auto V = as_mat(vv);
  auto O = as_mat(out);

  std::size_t offset = 0;
  for (const auto& gr : groups) {
    const auto nq = Eigen::Index(gr.q_count);
    const auto nk = Eigen::Index(gr.k_count);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto col = Eigen::Index(h * hd);
      MatMap P(probs->data() + offset, nq, nk);
      P.noalias() = Q.block(gr.q_begin, col, nq, Eigen::Index(hd)) *
                    K.block(gr.k_begin, col, nk, Eigen::Index(hd)).transpose();
      for (Eigen::Index i = 0; i < nq; ++i) {
        Real m = P(i, 0) * scale;
        for (Eigen::Index j = 1; j < nk; ++j) m = std::max(m, P(i, j) * scale);
        Real sum = 0;
        for (Eigen::Index j = 0; j < nk; ++j) {
          const Real e = std::exp(P(i, j) * scale - m);
          P(i, j) = e;
          sum += e;
        }
        const Real inv = Real(1) / sum;
        for (Eigen::Index j = 0; j < nk; ++j) P(i, j) *= inv;
      }
      O.block(gr.q_begin, col, nq, Eigen::Index(hd)).noalias() = P * V.block(gr.k_begin, col, nk, Eigen::Index(hd));
      offset += std::size_t(nq * nk);
    }
  }

  return q.graph().record(std::move(out), {q, k, v}, [q, k, v, heads, scale, probs, group_list](Graph& g,
                                                                                                  const Var& self) {
    const Tensor& dout = g.grad(self);
    const std::size_t dim = dout.cols();
    const std::size_t hd = dim / heads;
    const auto dO = as_mat(dout);
    const auto Q = as_mat(q.value());
    const auto K = as_mat(k.value());
    const auto V = as_mat(v.value());
    const bool need_q = g.needs_grad(q);
    const bool need_k = g.needs_grad(k);
    const bool need_v = g.needs_grad(v);
    Tensor* dq = need_q ? &g.grad(q) : nullptr;
    Tensor* dk = need_k ? &g.grad(k) : nullptr;
    Tensor* dv = need_v ? &g.grad(v) : nullptr;
    RowMat dP;
    std::size_t offset = 0;
    for (const auto& gr : *group_list) {
      const auto nq = Eigen::Index(gr.q_count);
      const auto nk = Eigen::Index(gr.k_count);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto col = Eigen::Index(h * hd);
        const auto hdi = Eigen::Index(hd);
        ConstMatMap P(probs->data() + offset, nq, nk);
        offset += std::size_t(nq * nk);
        const auto dOb = dO.block(gr.q_begin, col, nq, hdi);
        if (dv) as_mat(*dv).block(gr.k_begin, col, nk, hdi).noalias() += P.transpose() * dOb;
        if (!dq && !dk) continue;
        dP.noalias() = dOb * V.block(gr.k_begin, col, nk, hdi).transpose();
        for (Eigen::Index i = 0; i < nq; ++i) {
          Real dot = 0;
          for (Eigen::Index j = 0; j < nk; ++j) dot += dP(i, j) * P(i, j);
          for (Eigen::Index j = 0; j < nk; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * scale;
        }
        if (dq) as_mat(*dq).block(gr.q_begin, col, nq, hdi).noalias() += dP * K.block(gr.k_begin, col, nk, hdi);
        if (dk) {
          as_mat(*dk).block(gr.k_begin, col, nk, hdi).noalias() += dP.transpose() * Q.block(gr.q_begin, col, nq, hdi);
        }
      }
    }
  });
}

Var masked_mse(const Var& pred, const Tensor& target, std::span<const std::uint8_t> row_mask) {
  const Tensor& pv = pred.value();
  require_same(pv, target, "masked_mse");
  if (row_mask.size() != pv.rows()) throw Error(ErrorCode::kInvalidShape, "masked_mse: row mask length");
  const std::size_t cols = pv.cols();
  std::size_t count = 0;
  Real sum = 0;
  for (std::size_t r = 0; r < pv.rows(); ++r) {
    if (!row_mask[r]) continue;
    count += cols;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real d = pv.at(r, c) - target.at(r, c);
      sum += d * d;
    }
  }
  Graph& g = pred.graph();
  if (count == 0) return g.constant(Tensor::scalar(0));
  const Real inv = Real(1) / Real(count);
  auto tgt = std::make_shared<const Tensor>(target);
  std::vector<std::uint8_t> mask(row_mask.begin(), row_mask.end());
  return g.record(Tensor::scalar(sum * inv), {pred},
                  [pred, tgt, mask = std::move(mask), inv](Graph& g, const Var& self) {
                    const Real up = g.grad(self)[0];
                    const Tensor& pv = pred.value();
                    Tensor& dp = g.grad(pred);
                    const std::size_t cols = pv.cols();
                    for (std::size_t r = 0; r < pv.rows(); ++r) {
                      if (!mask[r]) continue;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const std::size_t i = r * cols + c;
                        dp[i] += up * Real(2) * (pv[i] - (*tgt)[i]) * inv;
                      }
                    }
                  });
}

Var weighted_sum(const Var& x, const Tensor& w) {
  const Tensor& xv = x.value();
  if (xv.size() != w.size()) throw Error(ErrorCode::kInvalidShape, "weighted_sum: size mismatch");
  Real s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * w[i];
  auto wt = std::make_shared<const Tensor>(w);
  return x.graph().record(Tensor::scalar(s), {x}, [x, wt](Graph& g, const Var& self) {
    accumulate(g, x, *wt, g.grad(self)[0]);
  });
}

}  // namespace dualdit
