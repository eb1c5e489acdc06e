// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/model.h"

#include <cmath>

namespace dualdit {

namespace {

constexpr Real kNormEps = Real(1e-6);
constexpr Real kEmbedScale = Real(0.3);

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

BranchParams create_branch(ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                           const BranchConfig& bc, bool video, std::mt19937_64& rng) {
  const std::size_t d = bc.width;
  const auto rnd = InitMode::kScaledRandom;
  const Real ada_scale = Real(0.3) / std::sqrt(Real(d));
  BranchParams p;
  p.in_proj = LinearMap::create(store, name + ".in_proj", cfg.channels, d, true, rnd, rng);
  const std::size_t time_rows = video ? cfg.frames : cfg.frames * cfg.audio_tokens;
  const std::size_t slot_rows = video ? cfg.video_tokens : cfg.audio_tokens;
  p.time_pos = store.add(name + ".time_pos", {time_rows, d}, rnd, rng, kEmbedScale);
  p.slot_pos = store.add(name + ".slot_pos", {slot_rows, d}, rnd, rng, kEmbedScale);
  p.role = store.add(name + ".role", {3, d}, rnd, rng, kEmbedScale);
  p.null_ref = store.add(name + ".null_ref", {1, d}, rnd, rng, kEmbedScale);
  p.text_table = store.add(name + ".text_table", {bc.vocab + 1, d}, rnd, rng, Real(1));
  p.text_pos = store.add(name + ".text_pos", {bc.max_text + 1, d}, rnd, rng, kEmbedScale);
  p.t_in = LinearMap::create(store, name + ".t_in", d, d, true, rnd, rng);
  p.t_out = LinearMap::create(store, name + ".t_out", d, d, true, rnd, rng);
  static const char* kAdaNames[6] = {"shift_attn", "scale_attn", "gate_attn", "shift_ff", "scale_ff", "gate_ff"};
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string bn = name + ".block" + std::to_string(b);
    BlockParams blk;
    for (std::size_t i = 0; i < 6; ++i) {
      blk.ada[i] = LinearMap::create(store, bn + ".ada." + kAdaNames[i], d, d, true, rnd, rng, ada_scale);
    }
    blk.self_attn = AttentionParams::create(store, bn + ".self_attn", d, d, d, true, true, InitMode::kZero, rng);
    blk.text_norm = AffineNormParams::create(store, bn + ".text_norm", d);
    blk.text_attn = AttentionParams::create(store, bn + ".text_attn", d, d, d, true, true, InitMode::kZero, rng);
    blk.ff_in = LinearMap::create(store, bn + ".ff_in", d, d * bc.ff_mult, true, rnd, rng);
    blk.ff_out = LinearMap::create(store, bn + ".ff_out", d * bc.ff_mult, d, true, InitMode::kZero, rng);
    p.blocks.push_back(std::move(blk));
  }
  p.final_ada[0] = LinearMap::create(store, name + ".final.shift", d, d, true, rnd, rng, ada_scale);
  p.final_ada[1] = LinearMap::create(store, name + ".final.scale", d, d, true, rnd, rng, ada_scale);
  p.out_proj = LinearMap::create(store, name + ".out_proj", d, cfg.channels, true, rnd, rng,
                                 Real(0.1) / std::sqrt(Real(d)));
  return p;
}

// h + h * scale + shift on the normalized stream.
Var modulate(const Var& x, const Var& shift, const Var& scale_mod) {
  const Var h = layer_norm(x, kNormEps);
  return add(add(h, mul(h, scale_mod)), shift);
}

Var gated(const Var& a, const Var& gate) { return add(a, mul(a, gate)); }

// Per-branch row bookkeeping for one forward pass.
struct BranchPlan {
  std::size_t rows = 0;  // per sample
  std::vector<AttnGroup> self_groups;
  std::vector<AttnGroup> text_groups;
  RowMap time_rows;       // 2B timestep rows -> branch rows
  RowMap timeline;        // branch rows -> timeline rows
  RowMap timeline_sinks;  // timeline rows -> branch rows, sinks only
  Var text;
  Var temb;
  Var x;
};

Var text_embeddings(Graph& g, const BranchParams& p, const BranchConfig& bc, const BranchInput& in,
                    std::size_t batch, std::vector<AttnGroup>& groups, std::size_t rows) {
  std::vector<std::uint32_t> ids, pos;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& tokens = in.text[b];
    const std::size_t begin = ids.size();
    // The null token is always the first key.
    ids.push_back(u32(bc.vocab));
    pos.push_back(0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      ids.push_back(u32(std::size_t(tokens[i])));
      pos.push_back(u32(i + 1));
    }
    groups.push_back({u32(b * rows), u32(rows), u32(begin), u32(ids.size() - begin)});
  }
  const Var table = g.param(p.text_table);
  const Var tpos = g.param(p.text_pos);
  return add(remap_rows(table, RowMap::gather(ids, bc.vocab + 1)), remap_rows(tpos, RowMap::gather(pos, bc.max_text + 1)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

JointInput concat_inputs(std::span<const JointInput> parts) {
  if (parts.empty()) throw Error(ErrorCode::kInvalidShape, "concat_inputs: nothing to concatenate");
  JointInput out;
  auto append = [](BranchInput& dst, const BranchInput& src) {
    if (dst.latents.empty()) {
      dst.latents = src.latents;
    } else {
      if (src.latents.cols() != dst.latents.cols()) throw Error(ErrorCode::kInvalidShape, "concat_inputs: channels");
      Storage s = std::move(dst.latents.storage());
      s.insert(s.end(), src.latents.storage().begin(), src.latents.storage().end());
      const std::size_t rows = s.size() / src.latents.cols();
      dst.latents = Tensor({rows, src.latents.cols()}, std::move(s));
    }
    dst.rows.insert(dst.rows.end(), src.rows.begin(), src.rows.end());
    dst.text.insert(dst.text.end(), src.text.begin(), src.text.end());
  };
  for (const auto& p : parts) {
    out.batch += p.batch;
    out.t.insert(out.t.end(), p.t.begin(), p.t.end());
    append(out.video, p.video);
    append(out.audio, p.audio);
  }
  return out;
}

void ModelConfig::validate() const {
  if (channels == 0 || depth == 0) throw Error(ErrorCode::kConfig, "model needs channels >= 1 and depth >= 1");
  layout().validate();
  for (const BranchConfig* bc : {&video, &audio}) {
    if (bc->width == 0 || bc->width % 2 != 0) throw Error(ErrorCode::kConfig, "branch width must be even and >= 2");
    if (bc->heads == 0 || bc->width % bc->heads != 0) throw Error(ErrorCode::kConfig, "branch heads must divide width");
    if (bc->ff_mult == 0 || bc->vocab == 0 || bc->max_text == 0) {
      throw Error(ErrorCode::kConfig, "branch ff_mult, vocab and max_text must be >= 1");
    }
  }
  interaction.validate(video.width);
  if (audio.width % interaction.heads != 0) throw Error(ErrorCode::kConfig, "interaction heads must divide audio width");
  for (std::size_t l : interaction.layers) {
    if (l >= depth) throw Error(ErrorCode::kConfig, "interaction layer " + std::to_string(l) + " >= depth");
  }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

DualBranchModel::DualBranchModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  video_ = create_branch(store_, "video", config_, config_.video, true, rng);
  audio_ = create_branch(store_, "audio", config_, config_.audio, false, rng);
  for (std::size_t b = 0; b < config_.depth; ++b) {
    if (!config_.interaction.active_at(b)) continue;
    InteractionLayer layer;
    layer.block = b;
    const std::string name = "interact" + std::to_string(b);
    layer.aligner = AlignerParams::create(store_, name, config_.video.width, config_.audio.width, rng);
    if (config_.interaction.fam) layer.mask = MaskHead::create(store_, name + ".mask", config_.video.width, rng);
    layers_.push_back(std::move(layer));
  }
}

void DualBranchModel::validate_input(const JointInput& in) const {
  const ModelConfig& c = config_;
  const std::size_t B = in.batch;
  if (B == 0) throw Error(ErrorCode::kInvalidShape, "empty batch");
  if (in.t.size() != B) throw Error(ErrorCode::kInvalidShape, "need one noise level per sample");
  for (Real t : in.t) {
    if (!(t >= 0 && t <= 1)) throw Error(ErrorCode::kConfig, "noise level outside [0, 1]");
  }
  auto check_branch = [&](const BranchInput& bi, std::size_t rows, std::size_t ref_rows, const BranchConfig& bc,
                          const char* name) {
    const std::string n = name;
    if (bi.latents.rank() != 2 || bi.latents.rows() != B * rows || bi.latents.cols() != c.channels) {
      throw Error(ErrorCode::kLayout, n + " latents " + shape_str(bi.latents.shape()) + ", expected [" +
                                          std::to_string(B * rows) + " x " + std::to_string(c.channels) + "]");
    }
    if (bi.rows.size() != B * rows) throw Error(ErrorCode::kLayout, n + " row info count");
    if (bi.text.size() != B) throw Error(ErrorCode::kLayout, n + " text needs one entry per sample");
    for (const auto& tokens : bi.text) {
      if (tokens.size() > bc.max_text) throw Error(ErrorCode::kConfig, n + " text longer than max_text");
      for (int id : tokens) {
        if (id < 0 || std::size_t(id) >= bc.vocab) throw Error(ErrorCode::kIndex, n + " text token out of range");
      }
    }
    for (std::size_t r = 0; r < bi.rows.size(); ++r) {
      const RowInfo& ri = bi.rows[r];
      if (r % rows < ref_rows) {
        if (ri.role != Role::kRef || ri.noised || ri.source || ri.sink) {
          throw Error(ErrorCode::kLayout, n + " reference rows must be clean and outside interaction");
        }
      } else {
        if (ri.role == Role::kRef || !ri.present || !ri.source || ri.noised != (ri.role == Role::kGen)) {
          throw Error(ErrorCode::kLayout, n + " timeline row " + std::to_string(r) + " has inconsistent flags");
        }
      }
    }
  };
  check_branch(in.video, c.video_rows(), c.video_tokens, c.video, "video");
  check_branch(in.audio, c.audio_rows(), c.audio_tokens, c.audio, "audio");
}

Tensor timestep_features(std::span<const Real> t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw Error(ErrorCode::kConfig, "timestep feature width must be even");
  const std::size_t half = dim / 2;
  Tensor out({t.size(), dim});
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      const double arg = double(t[r]) * 1000.0 * freq;
      out.at(r, i) = Real(std::cos(arg));
      out.at(r, half + i) = Real(std::sin(arg));
    }
  }
  return out;
}

Var DualBranchModel::branch_embed(Graph& g, const BranchParams& p, const BranchInput& in, std::size_t batch,
                                  bool video) const {
  const ModelConfig& c = config_;
  const std::size_t rows = video ? c.video_rows() : c.audio_rows();
  const std::size_t slots = video ? c.video_tokens : c.audio_tokens;
  const std::size_t total = batch * rows;

  Var x = apply(g, p.in_proj, g.constant(in.latents));
  bool any_absent = false;
  Tensor keep({total, 1});
  std::vector<Real> fill(total, Real(0));
  for (std::size_t r = 0; r < total; ++r) {
    keep[r] = in.rows[r].present ? Real(1) : Real(0);
    fill[r] = in.rows[r].present ? Real(0) : Real(1);
    any_absent = any_absent || !in.rows[r].present;
  }
  if (any_absent) x = add(mul_rows(x, g.constant(std::move(keep))), broadcast_rows(g.param(p.null_ref), fill));

  RowMap time_map, slot_map, role_map;
  time_map.in_rows = video ? c.frames : c.frames * c.audio_tokens;
  slot_map.in_rows = slots;
  role_map.in_rows = 3;
  time_map.out_rows = slot_map.out_rows = role_map.out_rows = total;
  for (std::size_t r = 0; r < total; ++r) {
    const std::size_t local = r % rows;
    role_map.add(r, std::size_t(in.rows[r].role));
    if (local < slots) {
      slot_map.add(r, local);
      continue;
    }
    const std::size_t idx = local - slots;
    if (video) {
      time_map.add(r, idx / slots);
      slot_map.add(r, idx % slots);
    } else {
      time_map.add(r, idx);
    }
  }
  x = add(x, remap_rows(g.param(p.time_pos), time_map));
  x = add(x, remap_rows(g.param(p.slot_pos), slot_map));
  return add(x, remap_rows(g.param(p.role), role_map));
}

ForwardResult DualBranchModel::forward(Graph& g, const JointInput& in, const ForwardOptions& opt) const {
  validate_input(in);
  const ModelConfig& c = config_;
  const std::size_t B = in.batch;
  const FrameLayout layout = c.layout();

  std::vector<Real> tv(2 * B);
  for (std::size_t b = 0; b < B; ++b) {
    tv[2 * b] = 0;
    tv[2 * b + 1] = in.t[b];
  }

  auto plan_branch = [&](const BranchParams& p, const BranchConfig& bc, const BranchInput& bi, bool video) {
    BranchPlan plan;
    plan.rows = video ? c.video_rows() : c.audio_rows();
    const std::size_t slots = video ? c.video_tokens : c.audio_tokens;
    const std::size_t tl = video ? layout.video_len() : layout.audio_len();
    plan.time_rows.in_rows = 2 * B;
    plan.time_rows.out_rows = B * plan.rows;
    plan.timeline.in_rows = B * plan.rows;
    plan.timeline.out_rows = B * tl;
    plan.timeline_sinks.in_rows = B * tl;
    plan.timeline_sinks.out_rows = B * plan.rows;
    for (std::size_t b = 0; b < B; ++b) {
      plan.self_groups.push_back({u32(b * plan.rows), u32(plan.rows), u32(b * plan.rows), u32(plan.rows)});
      for (std::size_t r = 0; r < plan.rows; ++r) {
        const std::size_t row = b * plan.rows + r;
        plan.time_rows.add(row, 2 * b + (bi.rows[row].noised ? 1 : 0));
        if (r < slots) continue;
        const std::size_t tl_row = b * tl + (r - slots);
        plan.timeline.add(tl_row, row);
        if (bi.rows[row].sink) plan.timeline_sinks.add(row, tl_row);
      }
    }
    plan.text = text_embeddings(g, p, bc, bi, B, plan.text_groups, plan.rows);
    const Var feat = g.constant(timestep_features(tv, bc.width));
    plan.temb = silu(apply(g, p.t_out, silu(apply(g, p.t_in, feat))));
    plan.x = branch_embed(g, p, bi, B, video);
    return plan;
  };

  std::optional<BranchPlan> vp, ap;
  if (opt.video) vp = plan_branch(video_, c.video, in.video, true);
  if (opt.audio) ap = plan_branch(audio_, c.audio, in.audio, false);

  auto mod = [&](const BranchPlan& plan, const LinearMap& m) { return remap_rows(apply(g, m, plan.temb), plan.time_rows); };

  auto pre_interaction = [&](BranchPlan& plan, const BlockParams& blk, const BranchConfig& bc) {
    const Var n1 = modulate(plan.x, mod(plan, blk.ada[0]), mod(plan, blk.ada[1]));
    const Var sa = cross_attention(g, blk.self_attn, n1, n1, bc.heads, plan.self_groups);
    plan.x = add(plan.x, gated(sa, mod(plan, blk.ada[2])));
    const Var n2 = apply(g, blk.text_norm, layer_norm(plan.x, kNormEps));
    plan.x = add(plan.x, cross_attention(g, blk.text_attn, n2, plan.text, bc.heads, plan.text_groups));
  };
  auto feed_forward = [&](BranchPlan& plan, const BlockParams& blk) {
    const Var n3 = modulate(plan.x, mod(plan, blk.ada[3]), mod(plan, blk.ada[4]));
    const Var ff = apply(g, blk.ff_out, gelu(apply(g, blk.ff_in, n3)));
    plan.x = add(plan.x, gated(ff, mod(plan, blk.ada[5])));
  };

  ForwardResult result;
  const bool interact = opt.interact && vp && ap && c.interaction.enabled;
  std::size_t next_layer = 0;
  for (std::size_t b = 0; b < c.depth; ++b) {
    if (vp) pre_interaction(*vp, video_.blocks[b], c.video);
    if (ap) pre_interaction(*ap, audio_.blocks[b], c.audio);
    while (next_layer < layers_.size() && layers_[next_layer].block < b) ++next_layer;
    if (interact && next_layer < layers_.size() && layers_[next_layer].block == b) {
      const InteractionLayer& layer = layers_[next_layer];
      const Var hv = remap_rows(vp->x, vp->timeline);
      const Var ha = remap_rows(ap->x, ap->timeline);
      std::optional<Var> mask;
      if (layer.mask) {
        mask = predict_mask(g, *layer.mask, hv);
        result.masks.push_back(*mask);
      }
      Var upd_v = a2v_update(g, layer.aligner, c.interaction, layout, B, hv, ha);
      if (mask) upd_v = mul_rows(upd_v, *mask);
      const Var source = mask ? mul_rows(hv, *mask) : hv;
      const Var upd_a = v2a_update(g, layer.aligner, c.interaction, layout, B, ha, source);
      InteractionSnapshot snap;
      if (opt.snapshots) {
        snap.block = b;
        snap.video_before = vp->x.value();
        snap.audio_before = ap->x.value();
      }
      vp->x = scatter_add_rows(vp->x, upd_v, vp->timeline_sinks);
      ap->x = scatter_add_rows(ap->x, upd_a, ap->timeline_sinks);
      if (opt.snapshots) {
        snap.video_after = vp->x.value();
        snap.audio_after = ap->x.value();
        opt.snapshots->push_back(std::move(snap));
      }
    }
    if (vp) feed_forward(*vp, video_.blocks[b]);
    if (ap) feed_forward(*ap, audio_.blocks[b]);
  }

  auto finish = [&](BranchPlan& plan, const BranchParams& p) {
    const Var n = modulate(plan.x, mod(plan, p.final_ada[0]), mod(plan, p.final_ada[1]));
    return apply(g, p.out_proj, n);
  };
  if (vp) result.video = finish(*vp, video_);
  if (ap) result.audio = finish(*ap, audio_);
  return result;
}

namespace {

Prediction to_prediction(const ForwardResult& r) {
  Prediction p;
  if (r.video.valid()) p.video = r.video.value();
  if (r.audio.valid()) p.audio = r.audio.value();
  for (const Var& m : r.masks) p.masks.push_back(m.value());
  return p;
}

}  // namespace

Prediction DualBranchModel::joint_forward(const JointInput& in) const {
  Graph g(&store_, false);
  return to_prediction(forward(g, in));
}

Prediction DualBranchModel::nullified_forward(const JointInput& in) const {
  Graph g(&store_, false);
  ForwardOptions opt;
  opt.interact = false;
  return to_prediction(forward(g, in, opt));
}

Prediction DualBranchModel::unimodal_forward(const JointInput& in, bool video) const {
  Graph g(&store_, false);
  ForwardOptions opt;
  opt.interact = false;
  opt.video = video;
  opt.audio = !video;
  return to_prediction(forward(g, in, opt));
}

// ---------------------------------------------------------------------------
// Flow matching and losses
// ---------------------------------------------------------------------------

std::pair<Tensor, Tensor> flow_target(const Tensor& x0, const Tensor& eps, Real t) {
  if (x0.shape() != eps.shape()) {
    throw Error(ErrorCode::kInvalidShape, "flow_target: " + shape_str(x0.shape()) + " vs " + shape_str(eps.shape()));
  }
  if (!(t >= 0 && t <= 1)) throw Error(ErrorCode::kConfig, "flow_target: t outside [0, 1]");
  Tensor z(x0.shape()), v(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    z[i] = (Real(1) - t) * x0[i] + t * eps[i];
    v[i] = eps[i] - x0[i];
  }
  return {std::move(z), std::move(v)};
}

std::vector<std::uint8_t> generation_rows(std::span<const RowInfo> rows) {
  std::vector<std::uint8_t> mask(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) mask[r] = rows[r].noised ? 1 : 0;
  return mask;
}

Var loss_branch(const Var& u, const Tensor& target, std::span<const RowInfo> rows) {
  return masked_mse(u, target, generation_rows(rows));
}

namespace {

Real eager_loss(const Tensor& u, const Tensor& target, std::span<const RowInfo> rows) {
  Graph g(nullptr, false);
  return loss_branch(g.constant(u), target, rows).value()[0];
}

}  // namespace

Real loss_video(const Tensor& u_v, const Tensor& target, std::span<const RowInfo> rows) {
  return eager_loss(u_v, target, rows);
}

Real loss_audio(const Tensor& u_a, const Tensor& target, std::span<const RowInfo> rows) {
  return eager_loss(u_a, target, rows);
}

Real loss_joint(Real l_video, Real l_audio, Real l_mask, const MaskSchedule& schedule, std::size_t step) {
  const Real lambda = lambda_at(schedule, step);
  if (lambda == Real(0)) return l_video + l_audio;
  return l_video + l_audio + lambda * l_mask;
}

LossTerms joint_loss(Graph& g, const ForwardResult& out, const JointInput& in, const TrainingTargets& targets,
                     Real lambda) {
  LossTerms t;
  const Var zero = g.constant(Tensor::scalar(0));
  t.video = out.video.valid() ? loss_branch(out.video, targets.video, in.video.rows) : zero;
  t.audio = out.audio.valid() ? loss_branch(out.audio, targets.audio, in.audio.rows) : zero;
  t.mask = out.masks.empty() ? zero : mask_loss(g, out.masks, targets.mask_gt);
  t.total = add(t.video, t.audio);
  if (lambda != Real(0) && !out.masks.empty()) t.total = add(t.total, scale(t.mask, lambda));
  return t;
}

}  // namespace dualdit
