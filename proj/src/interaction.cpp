// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/interaction.h"

#include <algorithm>

namespace dualdit {

const char* to_string(Topology t) {
  switch (t) {
    case Topology::kSGI: return "SGI";
    case Topology::kSTI: return "STI";
    case Topology::kATI: return "ATI";
  }
  return "?";
}

Topology parse_topology(const std::string& s) {
  if (s == "SGI" || s == "sgi") return Topology::kSGI;
  if (s == "STI" || s == "sti") return Topology::kSTI;
  if (s == "ATI" || s == "ati") return Topology::kATI;
  throw Error(ErrorCode::kConfig, "unknown topology '" + s + "' (expected SGI, STI or ATI)");
}

void FrameLayout::validate() const {
  if (frames < 1 || video_tokens < 1 || audio_tokens < 1 || width < 1) {
    throw Error(ErrorCode::kLayout, "frame layout needs T, Nv, k, D >= 1");
  }
}

bool InteractionConfig::active_at(std::size_t block) const {
  if (!enabled) return false;
  return layers.empty() || std::find(layers.begin(), layers.end(), block) != layers.end();
}

void InteractionConfig::validate(std::size_t width) const {
  if (window < 0) throw Error(ErrorCode::kConfig, "interaction window must be >= 0");
  if (heads == 0 || width % heads != 0) {
    throw Error(ErrorCode::kConfig, "interaction heads " + std::to_string(heads) + " do not divide width " +
                                        std::to_string(width));
  }
}

AlignerParams AlignerParams::create(ParameterStore& store, const std::string& name, std::size_t video_width,
                                    std::size_t audio_width, std::mt19937_64& rng) {
  const auto rnd = InitMode::kScaledRandom;
  AlignerParams p;
  p.a2v_q = LinearMap::create(store, name + ".a2v.q", video_width, video_width, false, rnd, rng);
  p.a2v_k = LinearMap::create(store, name + ".a2v.k", audio_width, video_width, false, rnd, rng);
  p.a2v_v = LinearMap::create(store, name + ".a2v.v", audio_width, video_width, false, rnd, rng);
  p.a2v_o = LinearMap::create(store, name + ".a2v.o", video_width, video_width, false, InitMode::kZero, rng);
  p.v2a_q = LinearMap::create(store, name + ".v2a.q", audio_width, audio_width, false, rnd, rng);
  p.v2a_k = LinearMap::create(store, name + ".v2a.k", video_width, audio_width, false, rnd, rng);
  p.v2a_v = LinearMap::create(store, name + ".v2a.v", video_width, audio_width, false, rnd, rng);
  p.v2a_o = LinearMap::create(store, name + ".v2a.o", audio_width, audio_width, false, InitMode::kZero, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Frame structure
// ---------------------------------------------------------------------------

namespace {

Tensor reshape_framed(const Tensor& h, std::size_t frames, std::size_t per_frame) {
  if (h.rank() != 2 || h.rows() != frames * per_frame) {
    throw Error(ErrorCode::kLayout, "cannot frame " + shape_str(h.shape()) + " as " + std::to_string(frames) + "x" +
                                        std::to_string(per_frame));
  }
  return h.reshaped({frames, per_frame, h.cols()});
}

void require_framed(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw Error(ErrorCode::kLayout, std::string(what) + " must be [T x N x D]");
}

}  // namespace

Tensor reshape_video(const Tensor& h_video, const FrameLayout& layout) {
  layout.validate();
  return reshape_framed(h_video, layout.frames, layout.video_tokens);
}

Tensor reshape_audio(const Tensor& h_audio, const FrameLayout& layout) {
  layout.validate();
  return reshape_framed(h_audio, layout.frames, layout.audio_tokens);
}

Tensor flatten_frames(const Tensor& framed) {
  require_framed(framed, "framed tensor");
  return framed.reshaped({framed.dim(0) * framed.dim(1), framed.dim(2)});
}

std::vector<std::size_t> audio_context_frames(std::size_t frame, int window, std::size_t frames) {
  if (window < 0) throw Error(ErrorCode::kConfig, "window must be >= 0");
  if (frame >= frames) throw Error(ErrorCode::kIndex, "frame index out of range");
  std::vector<std::size_t> out;
  out.reserve(std::size_t(2 * window + 1));
  const auto last = static_cast<long>(frames) - 1;
  for (long d = -window; d <= window; ++d) {
    out.push_back(std::size_t(std::clamp(static_cast<long>(frame) + d, 0L, last)));
  }
  return out;
}

Tensor build_audio_context(const Tensor& h_audio_framed, std::size_t frame, int window) {
  require_framed(h_audio_framed, "audio");
  const std::size_t na = h_audio_framed.dim(1);
  const std::size_t d = h_audio_framed.dim(2);
  const auto idx = audio_context_frames(frame, window, h_audio_framed.dim(0));
  Tensor out({idx.size() * na, d});
  for (std::size_t p = 0; p < idx.size(); ++p) {
    const Real* src = h_audio_framed.data() + idx[p] * na * d;
    std::copy(src, src + na * d, out.data() + p * na * d);
  }
  return out;
}

VideoBlend video_context_blend(std::size_t audio_token, const FrameLayout& layout, bool nearest) {
  if (audio_token >= layout.audio_len()) throw Error(ErrorCode::kIndex, "audio token index out of range");
  VideoBlend b;
  b.frame = audio_token / layout.k();
  if (nearest || b.frame + 1 == layout.frames) return b;
  b.alpha = Real(audio_token % layout.k()) / Real(layout.k());
  return b;
}

Tensor interpolate_video_context(const Tensor& h_video_framed, std::size_t audio_token, const FrameLayout& layout) {
  require_framed(h_video_framed, "video");
  if (h_video_framed.dim(0) != layout.frames || h_video_framed.dim(1) != layout.video_tokens) {
    throw Error(ErrorCode::kLayout, "video " + shape_str(h_video_framed.shape()) + " does not match layout");
  }
  const VideoBlend b = video_context_blend(audio_token, layout);
  const std::size_t n = layout.video_tokens * h_video_framed.dim(2);
  Tensor out({layout.video_tokens, h_video_framed.dim(2)});
  const Real* cur = h_video_framed.data() + b.frame * n;
  if (b.alpha == Real(0)) {
    std::copy(cur, cur + n, out.data());
    return out;
  }
  const Real* next = cur + n;
  for (std::size_t i = 0; i < n; ++i) out[i] = (Real(1) - b.alpha) * cur[i] + b.alpha * next[i];
  return out;
}

// ---------------------------------------------------------------------------
// Aligners
// ---------------------------------------------------------------------------

namespace {

void check_rows(const Var& v, std::size_t rows, const char* what) {
  if (v.rows() != rows) {
    throw Error(ErrorCode::kLayout, std::string(what) + " has " + std::to_string(v.rows()) + " rows, expected " +
                                        std::to_string(rows));
  }
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

}  // namespace

Var a2v_update(Graph& g, const AlignerParams& params, const InteractionConfig& cfg, const FrameLayout& layout,
               std::size_t batch, const Var& video, const Var& audio) {
  const std::size_t T = layout.frames;
  const std::size_t nv = layout.video_tokens;
  const std::size_t na = layout.audio_tokens;
  check_rows(video, batch * T * nv, "video timeline");
  check_rows(audio, batch * T * na, "audio timeline");

  const Var q = apply(g, params.a2v_q, video);
  const Var k = apply(g, params.a2v_k, audio);
  const Var v = apply(g, params.a2v_v, audio);
  std::vector<AttnGroup> groups;
  Var att;
  if (cfg.a2v == Topology::kSGI) {
    for (std::size_t b = 0; b < batch; ++b) groups.push_back({u32(b * T * nv), u32(T * nv), u32(b * T * na), u32(T * na)});
    att = attention(q, k, v, cfg.heads, groups);
  } else {
    // STI is the w = 0 case of the windowed aligner.
    const int w = cfg.a2v == Topology::kATI ? cfg.window : 0;
    const std::size_t span = std::size_t(2 * w + 1);
    RowMap ctx;
    ctx.in_rows = batch * T * na;
    ctx.out_rows = batch * T * span * na;
    ctx.terms.reserve(ctx.out_rows);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < T; ++i) {
        const std::size_t out_base = (b * T + i) * span * na;
        const auto frames = audio_context_frames(i, w, T);
        for (std::size_t p = 0; p < span; ++p) {
          for (std::size_t a = 0; a < na; ++a) ctx.add(out_base + p * na + a, (b * T + frames[p]) * na + a);
        }
        groups.push_back({u32((b * T + i) * nv), u32(nv), u32(out_base), u32(span * na)});
      }
    }
    att = attention(q, remap_rows(k, ctx), remap_rows(v, ctx), cfg.heads, groups);
  }
  return apply(g, params.a2v_o, add(video, att));
}

Var v2a_update(Graph& g, const AlignerParams& params, const InteractionConfig& cfg, const FrameLayout& layout,
               std::size_t batch, const Var& audio, const Var& video_source) {
  const std::size_t T = layout.frames;
  const std::size_t nv = layout.video_tokens;
  const std::size_t na = layout.audio_tokens;
  check_rows(video_source, batch * T * nv, "video timeline");
  check_rows(audio, batch * T * na, "audio timeline");

  const Var q = apply(g, params.v2a_q, audio);
  // Key/value projections are linear and bias-free, so projecting the frames
  // first and blending afterwards equals projecting the blended context.
  const Var k = apply(g, params.v2a_k, video_source);
  const Var v = apply(g, params.v2a_v, video_source);
  std::vector<AttnGroup> groups;
  Var att;
  if (cfg.v2a == Topology::kSGI) {
    for (std::size_t b = 0; b < batch; ++b) groups.push_back({u32(b * T * na), u32(T * na), u32(b * T * nv), u32(T * nv)});
    att = attention(q, k, v, cfg.heads, groups);
  } else {
    const bool nearest = cfg.v2a == Topology::kSTI;
    RowMap blend;
    blend.in_rows = batch * T * nv;
    blend.out_rows = batch * T * na * nv;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < T * na; ++j) {
        const VideoBlend vb = video_context_blend(j, layout, nearest);
        const std::size_t out_base = (b * T * na + j) * nv;
        const std::size_t cur = (b * T + vb.frame) * nv;
        for (std::size_t s = 0; s < nv; ++s) {
          if (vb.alpha == Real(0)) {
            blend.add(out_base + s, cur + s);
          } else {
            blend.add(out_base + s, cur + s, Real(1) - vb.alpha);
            blend.add(out_base + s, cur + nv + s, vb.alpha);
          }
        }
        groups.push_back({u32(b * T * na + j), 1, u32(out_base), u32(nv)});
      }
    }
    att = attention(q, remap_rows(k, blend), remap_rows(v, blend), cfg.heads, groups);
  }
  return apply(g, params.v2a_o, add(audio, att));
}

// ---------------------------------------------------------------------------
// Tensor API
// ---------------------------------------------------------------------------

namespace {

FrameLayout layout_of(const Tensor& video_framed, const Tensor& audio_framed) {
  require_framed(video_framed, "video");
  require_framed(audio_framed, "audio");
  if (video_framed.dim(0) != audio_framed.dim(0)) throw Error(ErrorCode::kLayout, "video and audio frame counts differ");
  FrameLayout l{video_framed.dim(0), video_framed.dim(1), audio_framed.dim(1), video_framed.dim(2)};
  l.validate();
  return l;
}

}  // namespace

Tensor a2v_align(const Tensor& h_video_framed, const Tensor& h_audio_framed, const ParameterStore& store,
                 const AlignerParams& params, const InteractionConfig& cfg) {
  const FrameLayout l = layout_of(h_video_framed, h_audio_framed);
  Graph g(&store, false);
  const Var out = a2v_update(g, params, cfg, l, 1, g.constant(flatten_frames(h_video_framed)),
                             g.constant(flatten_frames(h_audio_framed)));
  return out.value().reshaped(h_video_framed.shape());
}

Tensor v2a_align(const Tensor& h_audio_framed, const Tensor& h_video_framed, const ParameterStore& store,
                 const AlignerParams& params, const InteractionConfig& cfg) {
  const FrameLayout l = layout_of(h_video_framed, h_audio_framed);
  Graph g(&store, false);
  const Var out = v2a_update(g, params, cfg, l, 1, g.constant(flatten_frames(h_audio_framed)),
                             g.constant(flatten_frames(h_video_framed)));
  return out.value().reshaped(h_audio_framed.shape());
}

Tensor global_align(const Tensor& h_query, const Tensor& h_kv, const ParameterStore& store,
                    const AlignerParams& params, bool query_is_video, std::size_t heads) {
  if (h_query.rank() != 2 || h_kv.rank() != 2 || h_query.rows() == 0 || h_kv.rows() == 0) {
    throw Error(ErrorCode::kInvalidShape, "global_align expects non-empty [L x D] inputs");
  }
  Graph g(&store, false);
  const Var q_in = g.constant(h_query);
  const Var kv_in = g.constant(h_kv);
  const LinearMap& wq = query_is_video ? params.a2v_q : params.v2a_q;
  const LinearMap& wk = query_is_video ? params.a2v_k : params.v2a_k;
  const LinearMap& wv = query_is_video ? params.a2v_v : params.v2a_v;
  const LinearMap& wo = query_is_video ? params.a2v_o : params.v2a_o;
  const AttnGroup all{0, u32(h_query.rows()), 0, u32(h_kv.rows())};
  const Var att = attention(apply(g, wq, q_in), apply(g, wk, kv_in), apply(g, wv, kv_in), heads, {&all, 1});
  return apply(g, wo, add(q_in, att)).value();
}

Tensor inject_residual(const Tensor& h, const Tensor& h_bar, const Tensor* gate) {
  if (h.size() != h_bar.size() || h.cols() != h_bar.cols()) {
    throw Error(ErrorCode::kInvalidShape, "inject_residual: " + shape_str(h.shape()) + " vs " + shape_str(h_bar.shape()));
  }
  Tensor out = h;
  if (!gate) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += h_bar[i];
    return out;
  }
  const std::size_t cols = h.cols();
  if (gate->size() == h.rows()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*gate)[i / cols] * h_bar[i];
  } else if (gate->size() == h.size()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*gate)[i] * h_bar[i];
  } else {
    throw Error(ErrorCode::kInvalidShape, "inject_residual: gate " + shape_str(gate->shape()) + " not broadcastable");
  }
  return out;
}

}  // namespace dualdit
