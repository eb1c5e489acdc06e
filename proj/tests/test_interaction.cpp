// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dualdit/check.h"
#include "dualdit/interaction.h"
#include "test_util.h"

using namespace dualdit;
using namespace dualdit::testing;

namespace {

struct Fixture {
  FrameLayout layout;
  ParameterStore store;
  AlignerParams params;
  Tensor video, audio;  // framed

  explicit Fixture(FrameLayout l, std::uint64_t seed = 17) : layout(l) {
    std::mt19937_64 rng(seed);
    params = AlignerParams::create(store, "al", l.width, l.width, rng);
    randomize_parameters(store, seed + 1);
    video = randn({l.frames, l.video_tokens, l.width}, rng);
    audio = randn({l.frames, l.audio_tokens, l.width}, rng);
  }

  AttentionParams a2v_attn() const { return {params.a2v_q, params.a2v_k, params.a2v_v, std::nullopt}; }
  AttentionParams v2a_attn() const { return {params.v2a_q, params.v2a_k, params.v2a_v, std::nullopt}; }

  // Frame by frame: W_o [H_i + attention(H_i -> audio window)].
  Tensor a2v_oracle(int window, std::size_t heads) const {
    Tensor out(video.shape());
    const std::size_t per = layout.video_tokens * layout.width;
    for (std::size_t i = 0; i < layout.frames; ++i) {
      const Tensor q = frame_of(video, i);
      const Tensor att = multi_head_cross_attention(q, build_audio_context(audio, i, window), store, a2v_attn(), heads);
      const Tensor o = apply_map(store, params.a2v_o, add(q, att));
      std::copy(o.data(), o.data() + per, out.data() + i * per);
    }
    return out;
  }

  // Token by token: W_o [h_j + attention(h_j -> blended video frames)].
  Tensor v2a_oracle(std::size_t heads, bool nearest) const {
    Tensor out(audio.shape());
    const std::size_t k = layout.audio_tokens, d = layout.width;
    for (std::size_t j = 0; j < layout.audio_len(); ++j) {
      Tensor q({1, d});
      for (std::size_t c = 0; c < d; ++c) q[c] = audio[j * d + c];
      const Tensor ctx = nearest ? frame_of(video, j / k) : interpolate_video_context(video, j, layout);
      const Tensor att = multi_head_cross_attention(q, ctx, store, v2a_attn(), heads);
      const Tensor o = apply_map(store, params.v2a_o, add(q, att));
      std::copy(o.data(), o.data() + d, out.data() + j * d);
    }
    return out;
  }
};

Real frame_diff(const Tensor& a, const Tensor& b, std::size_t frame) {
  return max_abs_diff(frame_of(a, frame), frame_of(b, frame));
}

}  // namespace

TEST_SUITE("interaction") {
  TEST_CASE("reshape examples") {
    const FrameLayout l{2, 3, 2, 2};
    Tensor h({6, 2});
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = Real(i);
    const Tensor v = reshape_video(h, l);
    CHECK(v.shape() == Shape{2, 3, 2});
    // token 4 -> frame 1, slot 1
    CHECK(v[(1 * 3 + 1) * 2] == h.at(4, 0));
    CHECK(flatten_frames(v) == h);
    CHECK_THROWS_AS(reshape_video(Tensor({5, 2}), l), Error);
    CHECK(reshape_audio(Tensor({4, 2}), l).shape() == Shape{2, 2, 2});

    const FrameLayout one{1, 6, 2, 2};
    CHECK(reshape_video(h, one).shape() == Shape{1, 6, 2});
  }

  TEST_CASE("audio context window replicates the edge frames") {
    Tensor a({3, 2, 1});
    for (std::size_t i = 0; i < 6; ++i) a[i] = Real(i / 2);  // frame index in every row
    auto frames_in = [&](std::size_t i) {
      const Tensor c = build_audio_context(a, i, 1);
      REQUIRE(c.shape() == Shape{6, 1});
      return std::vector<Real>{c[0], c[2], c[4]};
    };
    CHECK(frames_in(0) == std::vector<Real>{0, 0, 1});
    CHECK(frames_in(1) == std::vector<Real>{0, 1, 2});
    CHECK(frames_in(2) == std::vector<Real>{1, 2, 2});
    CHECK(audio_context_frames(0, 2, 3) == std::vector<std::size_t>{0, 0, 0, 1, 2});
    CHECK_THROWS_AS(build_audio_context(a, 0, -1), Error);
  }

  TEST_CASE("video context interpolation") {
    const FrameLayout l{3, 2, 4, 1};
    Tensor v({3, 2, 1});
    for (std::size_t i = 0; i < 6; ++i) v[i] = Real(10 * (i / 2) + i % 2);
    const Tensor c0 = interpolate_video_context(v, 0, l);
    CHECK(c0[0] == 0);
    CHECK(c0[1] == 1);
    const Tensor c6 = interpolate_video_context(v, 6, l);
    CHECK(video_context_blend(6, l).alpha == doctest::Approx(0.5));
    CHECK(c6[0] == doctest::Approx(15).epsilon(1e-15));
    CHECK(c6[1] == doctest::Approx(16).epsilon(1e-15));
    // Final block: the last frame whatever the position inside it.
    for (std::size_t j = 8; j < 12; ++j) {
      const Tensor c = interpolate_video_context(v, j, l);
      CHECK(c[0] == 20);
      CHECK(c[1] == 21);
    }
    CHECK(video_context_blend(5, l, true).alpha == 0);
    CHECK_THROWS_AS(interpolate_video_context(v, 12, l), Error);
  }

  TEST_CASE("audio-to-video aligner matches a per-frame oracle") {
    Fixture fx({5, 4, 3, 16});
    for (int w : {0, 1, 2, 6}) {
      InteractionConfig cfg;
      cfg.window = w;
      CHECK(max_abs_diff(a2v_align(fx.video, fx.audio, fx.store, fx.params, cfg), fx.a2v_oracle(w, cfg.heads)) <
            1e-12);
    }
  }

  TEST_CASE("video-to-audio aligner matches a per-token oracle") {
    Fixture fx({5, 4, 3, 16});
    InteractionConfig ati;
    CHECK(max_abs_diff(v2a_align(fx.audio, fx.video, fx.store, fx.params, ati), fx.v2a_oracle(ati.heads, false)) <
          1e-12);
    InteractionConfig sti;
    sti.a2v = sti.v2a = Topology::kSTI;
    CHECK(max_abs_diff(v2a_align(fx.audio, fx.video, fx.store, fx.params, sti), fx.v2a_oracle(sti.heads, true)) <
          1e-12);
  }

  TEST_CASE("zero output projections give a zero update") {
    ParameterStore store;
    std::mt19937_64 rng(2);
    const AlignerParams p = AlignerParams::create(store, "al", 16, 16, rng);
    const Tensor v = randn({4, 4, 16}, rng), a = randn({4, 3, 16}, rng);
    for (Topology t : {Topology::kSGI, Topology::kSTI, Topology::kATI}) {
      InteractionConfig cfg;
      cfg.a2v = cfg.v2a = t;
      for (Real x : a2v_align(v, a, store, p, cfg).values()) CHECK(x == 0);
      for (Real x : v2a_align(a, v, store, p, cfg).values()) CHECK(x == 0);
    }
    for (Real x : global_align(flatten_frames(v), flatten_frames(a), store, p, true, 4).values()) CHECK(x == 0);
  }

  TEST_CASE("window locality is exact") {
    Fixture fx({6, 4, 3, 16});
    InteractionConfig cfg;
    cfg.window = 1;
    const Tensor base_v = a2v_align(fx.video, fx.audio, fx.store, fx.params, cfg);
    const Tensor base_a = v2a_align(fx.audio, fx.video, fx.store, fx.params, cfg);
    for (std::size_t i = 0; i + 2 < 6; ++i) {
      Tensor audio = fx.audio;
      Tensor video = fx.video;
      for (std::size_t e = 0; e < 3 * 16; ++e) audio[(i + 2) * 3 * 16 + e] += 1;
      for (std::size_t e = 0; e < 4 * 16; ++e) video[(i + 2) * 4 * 16 + e] += 1;
      CHECK(frame_diff(a2v_align(fx.video, audio, fx.store, fx.params, cfg), base_v, i) == 0);
      CHECK(frame_diff(v2a_align(fx.audio, video, fx.store, fx.params, cfg), base_a, i) == 0);
      CHECK(frame_diff(a2v_align(fx.video, audio, fx.store, fx.params, cfg), base_v, i + 1) > 0);
    }
  }

  TEST_CASE("a single frame makes every topology global") {
    Fixture fx({1, 4, 3, 16});
    const Tensor gv = global_align(flatten_frames(fx.video), flatten_frames(fx.audio), fx.store, fx.params, true, 4);
    const Tensor ga = global_align(flatten_frames(fx.audio), flatten_frames(fx.video), fx.store, fx.params, false, 4);
    for (int w : {0, 1, 3}) {
      InteractionConfig cfg;
      cfg.window = w;
      CHECK(max_abs_diff(flatten_frames(a2v_align(fx.video, fx.audio, fx.store, fx.params, cfg)), gv) < 1e-12);
    }
    InteractionConfig cfg;
    CHECK(max_abs_diff(flatten_frames(v2a_align(fx.audio, fx.video, fx.store, fx.params, cfg)), ga) < 1e-12);
  }

  TEST_CASE("global align with uniform logits averages the values") {
    Fixture fx({3, 2, 2, 8});
    fx.store[fx.params.a2v_q.weight].value.fill(0);
    Tensor& wo = fx.store[fx.params.a2v_o.weight].value;
    wo.fill(0);
    for (std::size_t i = 0; i < 8; ++i) wo.at(i, i) = 1;
    const Tensor q = flatten_frames(fx.video), kv = flatten_frames(fx.audio);
    const Tensor vals = apply_map(fx.store, fx.params.a2v_v, kv);
    const Tensor out = global_align(q, kv, fx.store, fx.params, true, 2);
    for (std::size_t r = 0; r < q.rows(); ++r) {
      for (std::size_t c = 0; c < 8; ++c) {
        double mean = 0;
        for (std::size_t s = 0; s < kv.rows(); ++s) mean += vals.at(s, c) / double(kv.rows());
        CHECK(out.at(r, c) == doctest::Approx(q.at(r, c) + mean).epsilon(1e-13));
      }
    }
  }

  TEST_CASE("identical video frames give one context for every audio token") {
    Fixture fx({4, 4, 3, 16});
    for (std::size_t i = 1; i < 4; ++i) {
      for (std::size_t e = 0; e < 4 * 16; ++e) fx.video[i * 4 * 16 + e] = fx.video[e];
    }
    for (std::size_t j = 1; j < 12; ++j) {
      CHECK(max_abs_diff(interpolate_video_context(fx.video, j, fx.layout), frame_of(fx.video, 0)) < 1e-15);
    }
    for (std::size_t j = 0; j < 12; ++j) {
      for (std::size_t c = 0; c < 16; ++c) fx.audio[j * 16 + c] = fx.audio[c];
    }
    InteractionConfig cfg;
    const Tensor out = flatten_frames(v2a_align(fx.audio, fx.video, fx.store, fx.params, cfg));
    for (std::size_t j = 1; j < 12; ++j) {
      for (std::size_t c = 0; c < 16; ++c) CHECK(out.at(j, c) == doctest::Approx(out.at(0, c)).epsilon(1e-12));
    }
  }

  TEST_CASE("time-aligned audio-to-video equals a zero window") {
    Fixture fx({5, 4, 3, 16});
    InteractionConfig sti, ati;
    sti.a2v = Topology::kSTI;
    ati.window = 0;
    CHECK(a2v_align(fx.video, fx.audio, fx.store, fx.params, sti) ==
          a2v_align(fx.video, fx.audio, fx.store, fx.params, ati));
  }

  TEST_CASE("inject_residual examples") {
    std::mt19937_64 rng(4);
    const Tensor h = randn({3, 4}, rng);
    const Tensor hb({3, 4}, Real(2));
    const Tensor zero({3, 1}, Real(0)), one({3, 1}, Real(1)), half({3, 4}, Real(0.5));
    CHECK(inject_residual(h, hb, &zero) == h);
    CHECK(inject_residual(h, hb, &one) == inject_residual(h, hb));
    const Tensor r = inject_residual(h, hb, &half);
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(r[i] == h[i] + 1);
    const Tensor bad({2, 1});
    CHECK_THROWS_AS(inject_residual(h, hb, &bad), Error);
  }

  TEST_CASE("topology names round trip") {
    for (Topology t : {Topology::kSGI, Topology::kSTI, Topology::kATI}) CHECK(parse_topology(to_string(t)) == t);
    CHECK_THROWS_AS(parse_topology("XYZ"), Error);
  }
}
