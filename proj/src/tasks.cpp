// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/tasks.h"

#include <cmath>
#include <numbers>
#include <numeric>

namespace dualdit {

const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kJointGen: return "JointGen";
    case TaskKind::kJointGenRefAudio: return "JointGenRefAudio";
    case TaskKind::kJointContinuation: return "JointContinuation";
    case TaskKind::kV2ADubbing: return "V2ADubbing";
    case TaskKind::kA2VSynthesis: return "A2VSynthesis";
  }
  return "?";
}

TaskKind parse_task(const std::string& s) {
  for (TaskKind k : kAllTasks) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::kConfig, "unknown task '" + s + "'");
}

std::size_t continuation_prefix(std::size_t frames) { return std::max<std::size_t>(1, frames / 4); }

TaskAssembly task_assembly(TaskKind kind, std::size_t frames) {
  const SegmentFlags ref{true, false, false, false};
  const SegmentFlags absent{};
  const SegmentFlags gen{true, true, true, true};
  const SegmentFlags cond{true, false, true, false};
  TaskAssembly a;
  a.kind = kind;
  a.v_ref = ref;
  a.a_ref = absent;
  a.v_gen = gen;
  a.a_gen = gen;
  switch (kind) {
    case TaskKind::kJointGen:
      break;
    case TaskKind::kJointGenRefAudio:
      a.a_ref = ref;
      break;
    case TaskKind::kJointContinuation:
      if (frames < 2) throw Error(ErrorCode::kLayout, "continuation needs at least two frames");
      a.v_cond = cond;
      a.a_cond = cond;
      a.prefix_frames = continuation_prefix(frames);
      break;
    case TaskKind::kV2ADubbing:
      a.v_cond = cond;
      a.v_gen = absent;
      a.prefix_frames = frames;
      a.v_ref_from_cond = true;
      break;
    case TaskKind::kA2VSynthesis:
      a.a_cond = cond;
      a.a_gen = absent;
      a.prefix_frames = frames;
      break;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

namespace {

std::size_t grid_side(std::size_t tokens) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(tokens))));
  return side * side == tokens ? side : 0;
}

void ar1(std::vector<Real>& out, Real rho, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double innov = std::sqrt(1.0 - double(rho) * double(rho));
  double x = n(rng);
  for (auto& v : out) {
    v = Real(x);
    x = double(rho) * x + innov * n(rng);
  }
}

Real style_pattern(int style, std::size_t slot, std::size_t slots) {
  return Real(std::cos(2.0 * std::numbers::pi * double(style + 1) * double(slot) / double(slots) + 0.7 * style));
}

Real symbol_value(int symbol, std::size_t vocab) {
  return vocab < 2 ? Real(0) : Real(2.0 * double(symbol) / double(vocab - 1) - 1.0);
}

std::vector<Real> resample(std::span<const Real> per_frame, const FrameLayout& layout) {
  std::vector<Real> out(layout.audio_len());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const VideoBlend b = video_context_blend(j, layout);
    out[j] = b.alpha == Real(0) ? per_frame[b.frame]
                                : (Real(1) - b.alpha) * per_frame[b.frame] + b.alpha * per_frame[b.frame + 1];
  }
  return out;
}

}  // namespace

void DataConfig::validate() const {
  if (frames < 2 || audio_tokens < 1) throw Error(ErrorCode::kConfig, "generator needs T >= 2 and k >= 1");
  if (grid_side(video_tokens) == 0) throw Error(ErrorCode::kConfig, "video tokens must form a square grid");
  if (channels != 4) throw Error(ErrorCode::kConfig, "the synthetic format has exactly 4 channels");
  if (style_vocab < 1 || symbol_vocab < 1) throw Error(ErrorCode::kConfig, "vocabularies must be non-empty");
  if (!(std::abs(trace_rho) < 1) || !(std::abs(background_rho) < 1)) {
    throw Error(ErrorCode::kConfig, "AR coefficients must lie in (-1, 1)");
  }
}

SyntheticSample generate_sample(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t T = cfg.frames, nv = cfg.video_tokens, k = cfg.audio_tokens;
  const std::size_t side = grid_side(nv);
  const std::size_t face = std::max<std::size_t>(1, side / 2);

  SyntheticSample s;
  s.config = cfg;
  s.style = int(std::uniform_int_distribution<std::size_t>(0, cfg.style_vocab - 1)(rng));
  s.symbols.resize(T);
  for (auto& sym : s.symbols) sym = int(std::uniform_int_distribution<std::size_t>(0, cfg.symbol_vocab - 1)(rng));

  s.trace.resize(T);
  ar1(s.trace, cfg.trace_rho, rng);
  const Real mean = std::accumulate(s.trace.begin(), s.trace.end(), Real(0)) / Real(T);
  Real var = 0;
  for (Real v : s.trace) var += (v - mean) * (v - mean);
  const Real sd = std::sqrt(var / Real(T));
  for (Real& v : s.trace) v = (v - mean) / sd;

  const std::size_t top = std::uniform_int_distribution<std::size_t>(0, side - face)(rng);
  const std::size_t left = std::uniform_int_distribution<std::size_t>(0, side - face)(rng);
  std::vector<std::uint8_t> in_face(nv, 0);
  for (std::size_t r = top; r < top + face; ++r) {
    for (std::size_t c = left; c < left + face; ++c) in_face[r * side + c] = 1;
  }
  std::vector<Real> appearance(nv);
  for (auto& a : appearance) a = Real(n(rng));
  const Real timbre = Real(n(rng));

  s.video = Tensor({T * nv, cfg.channels});
  s.video_ref = Tensor({nv, cfg.channels});
  s.gt_mask = Tensor({T, nv});
  std::vector<Real> background(T);
  for (std::size_t tok = 0; tok < nv; ++tok) {
    ar1(background, cfg.background_rho, rng);
    const Real marker = in_face[tok] ? Real(1) : Real(-1);
    const Real pattern = style_pattern(s.style, tok, nv);
    for (std::size_t i = 0; i < T; ++i) {
      const std::size_t row = i * nv + tok;
      s.video.at(row, 0) = in_face[tok] ? s.trace[i] : background[i];
      s.video.at(row, 1) = marker;
      s.video.at(row, 2) = pattern;
      s.video.at(row, 3) = appearance[tok];
      s.gt_mask.at(i, tok) = in_face[tok] ? Real(1) : Real(0);
    }
    s.video_ref.at(tok, 1) = marker;
    s.video_ref.at(tok, 2) = pattern;
    s.video_ref.at(tok, 3) = appearance[tok];
  }

  const FrameLayout layout = cfg.layout();
  const std::vector<Real> envelope = resample(s.trace, layout);
  s.audio = Tensor({T * k, cfg.channels});
  s.audio_ref = Tensor({k, cfg.channels});
  for (std::size_t j = 0; j < T * k; ++j) {
    const std::size_t m = j % k;
    s.audio.at(j, 0) = envelope[j];
    s.audio.at(j, 1) = symbol_value(s.symbols[j / k], cfg.symbol_vocab);
    s.audio.at(j, 2) = timbre;
    s.audio.at(j, 3) = Real(std::sin(2.0 * std::numbers::pi * double(m) / double(k)));
  }
  for (std::size_t m = 0; m < k; ++m) {
    s.audio_ref.at(m, 2) = timbre;
    s.audio_ref.at(m, 3) = Real(std::sin(2.0 * std::numbers::pi * double(m) / double(k)));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

namespace {

RowInfo row_for(const SegmentFlags& f, Role role) {
  RowInfo r;
  r.role = role;
  r.present = f.present;
  r.noised = f.noised;
  r.source = f.source;
  r.sink = f.sink;
  return r;
}

void fill_branch(BranchInput& out, const TaskAssembly& a, const SegmentFlags& ref, const SegmentFlags& cond,
                 const SegmentFlags& gen, const Tensor& ref_latents, const Tensor& timeline, std::size_t per_frame,
                 std::size_t frames) {
  const std::size_t c = timeline.cols();
  out.latents = Tensor({per_frame * (frames + 1), c});
  out.rows.clear();
  for (std::size_t r = 0; r < per_frame; ++r) {
    out.rows.push_back(row_for(ref, Role::kRef));
    if (!ref.present) continue;
    for (std::size_t ch = 0; ch < c; ++ch) out.latents.at(r, ch) = ref_latents.at(r, ch);
  }
  for (std::size_t i = 0; i < frames; ++i) {
    const bool is_cond = cond.present && i < a.prefix_frames;
    const SegmentFlags& f = is_cond ? cond : gen;
    if (!f.present) throw Error(ErrorCode::kLayout, std::string("task ") + to_string(a.kind) + " leaves frame " +
                                                        std::to_string(i) + " without a segment");
    for (std::size_t tok = 0; tok < per_frame; ++tok) {
      const std::size_t src = i * per_frame + tok;
      out.rows.push_back(row_for(f, is_cond ? Role::kCond : Role::kGen));
      for (std::size_t ch = 0; ch < c; ++ch) out.latents.at(per_frame + src, ch) = timeline.at(src, ch);
    }
  }
}

}  // namespace

AssembledSample assemble(TaskKind task, const SyntheticSample& sample) {
  const DataConfig& cfg = sample.config;
  const std::size_t T = cfg.frames, nv = cfg.video_tokens, k = cfg.audio_tokens;
  if (sample.video.rows() != T * nv || sample.audio.rows() != T * k || sample.video_ref.rows() != nv ||
      sample.audio_ref.rows() != k || sample.symbols.size() != T || sample.gt_mask.size() != T * nv) {
    throw Error(ErrorCode::kLayout, "sample does not match its generator config");
  }
  const TaskAssembly a = task_assembly(task, T);
  AssembledSample out;
  JointInput& in = out.input;
  in.batch = 1;
  in.t = {Real(0)};
  Tensor v_ref = sample.video_ref;
  if (a.v_ref_from_cond) {
    for (std::size_t tok = 0; tok < nv; ++tok) {
      for (std::size_t ch = 0; ch < cfg.channels; ++ch) v_ref.at(tok, ch) = sample.video.at(tok, ch);
    }
  }
  fill_branch(in.video, a, a.v_ref, a.v_cond, a.v_gen, v_ref, sample.video, nv, T);
  fill_branch(in.audio, a, a.a_ref, a.a_cond, a.a_gen, sample.audio_ref, sample.audio, k, T);
  in.video.text = {{sample.style}};
  in.audio.text = {sample.symbols};
  out.mask_gt = sample.gt_mask.reshaped({T * nv, 1});
  return out;
}

// ---------------------------------------------------------------------------
// Scheduler
// ---------------------------------------------------------------------------

TaskScheduler::TaskScheduler(const std::array<unsigned, 5>& ratios, std::uint64_t seed)
    : ratios_(ratios), rng_(seed) {
  for (unsigned r : ratios_) total_ += r;
  if (total_ == 0) throw Error(ErrorCode::kConfig, "task ratios are all zero");
}

TaskKind TaskScheduler::draw(std::mt19937_64& rng) const {
  unsigned u = std::uniform_int_distribution<unsigned>(0, total_ - 1)(rng);
  for (std::size_t i = 0; i < ratios_.size(); ++i) {
    if (u < ratios_[i]) return kAllTasks[i];
    u -= ratios_[i];
  }
  return kAllTasks.back();
}

std::array<double, 5> TaskScheduler::probabilities() const {
  std::array<double, 5> p{};
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = double(ratios_[i]) / double(total_);
  return p;
}

// ---------------------------------------------------------------------------
// Metric
// ---------------------------------------------------------------------------

Real pearson(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error(ErrorCode::kInvalidShape, "pearson: length mismatch");
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const double floor = 1e-12 * double(a.size());
  if (saa <= floor || sbb <= floor) throw Error(ErrorCode::kNonFinite, "pearson: zero-variance input");
  return Real(sab / std::sqrt(saa * sbb));
}

std::vector<Real> decode_video_trace(const Tensor& video, const FrameLayout& layout) {
  if (video.rows() != layout.video_len() || video.cols() < 2) {
    throw Error(ErrorCode::kLayout, "video " + shape_str(video.shape()) + " does not match the layout");
  }
  const std::size_t nv = layout.video_tokens;
  std::vector<Real> per_frame(layout.frames);
  for (std::size_t i = 0; i < layout.frames; ++i) {
    Real sum = 0;
    std::size_t count = 0;
    std::size_t best = 0;
    for (std::size_t tok = 0; tok < nv; ++tok) {
      const std::size_t row = i * nv + tok;
      if (video.at(row, 1) > video.at(i * nv + best, 1)) best = tok;
      if (video.at(row, 1) > 0) {
        sum += video.at(row, 0);
        ++count;
      }
    }
    per_frame[i] = count ? sum / Real(count) : video.at(i * nv + best, 0);
  }
  return resample(per_frame, layout);
}

Real consistency_score(const Tensor& video, const Tensor& audio, const FrameLayout& layout) {
  if (audio.rows() != layout.audio_len()) {
    throw Error(ErrorCode::kLayout, "audio " + shape_str(audio.shape()) + " does not match the layout");
  }
  const std::vector<Real> v = decode_video_trace(video, layout);
  std::vector<Real> a(audio.rows());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = audio.at(j, 0);
  return pearson(v, a);
}

}  // namespace dualdit
