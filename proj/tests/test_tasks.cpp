// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dualdit/config.h"
#include "dualdit/tasks.h"
#include "dualdit/train.h"

using namespace dualdit;

namespace {

DataConfig data_config() {
  DataConfig c;
  c.frames = 8;
  c.video_tokens = 16;
  c.audio_tokens = 4;
  return c;
}

struct Segments {
  std::vector<RowInfo> ref, timeline;
};

Segments split(const BranchInput& b, std::size_t tokens) {
  return {{b.rows.begin(), b.rows.begin() + long(tokens)}, {b.rows.begin() + long(tokens), b.rows.end()}};
}

bool all_rows(const std::vector<RowInfo>& rows, std::size_t begin, std::size_t end, RowInfo expect) {
  for (std::size_t r = begin; r < end; ++r) {
    if (!(rows[r] == expect)) return false;
  }
  return true;
}

const RowInfo kRef{Role::kRef, true, false, false, false};
const RowInfo kAbsentRef{Role::kRef, false, false, false, false};
const RowInfo kGen{Role::kGen, true, true, true, true};
const RowInfo kCond{Role::kCond, true, false, true, false};

}  // namespace

TEST_SUITE("tasks") {
  TEST_CASE("participation flags per task") {
    const DataConfig cfg = data_config();
    const SyntheticSample s = generate_sample(cfg, 1);
    const std::size_t nv = cfg.video_tokens, k = cfg.audio_tokens, T = cfg.frames;

    SUBCASE("joint generation") {
      const JointInput in = assemble(TaskKind::kJointGen, s).input;
      const Segments v = split(in.video, nv), a = split(in.audio, k);
      CHECK(all_rows(v.ref, 0, nv, kRef));
      CHECK(all_rows(a.ref, 0, k, kAbsentRef));
      CHECK(all_rows(v.timeline, 0, T * nv, kGen));
      CHECK(all_rows(a.timeline, 0, T * k, kGen));
    }
    SUBCASE("joint generation with reference audio") {
      const JointInput in = assemble(TaskKind::kJointGenRefAudio, s).input;
      const Segments a = split(in.audio, k);
      CHECK(all_rows(a.ref, 0, k, kRef));
      CHECK(all_rows(a.timeline, 0, T * k, kGen));
    }
    SUBCASE("continuation") {
      const JointInput in = assemble(TaskKind::kJointContinuation, s).input;
      const std::size_t p = continuation_prefix(T);
      const Segments v = split(in.video, nv), a = split(in.audio, k);
      CHECK(all_rows(v.timeline, 0, p * nv, kCond));
      CHECK(all_rows(v.timeline, p * nv, T * nv, kGen));
      CHECK(all_rows(a.timeline, 0, p * k, kCond));
      CHECK(all_rows(a.timeline, p * k, T * k, kGen));
    }
    SUBCASE("video-to-audio dubbing") {
      const AssembledSample as = assemble(TaskKind::kV2ADubbing, s);
      const JointInput& in = as.input;
      const Segments v = split(in.video, nv), a = split(in.audio, k);
      CHECK(all_rows(v.ref, 0, nv, kRef));
      CHECK(all_rows(v.timeline, 0, T * nv, kCond));
      CHECK(all_rows(a.timeline, 0, T * k, kGen));
      for (std::size_t r = 0; r < nv; ++r) {
        for (std::size_t c = 0; c < cfg.channels; ++c) CHECK(in.video.latents.at(r, c) == s.video.at(r, c));
      }
      CHECK(task_assembly(TaskKind::kV2ADubbing, T).v_ref_from_cond);
    }
    SUBCASE("audio-driven video synthesis") {
      const JointInput in = assemble(TaskKind::kA2VSynthesis, s).input;
      const Segments v = split(in.video, nv), a = split(in.audio, k);
      CHECK(all_rows(v.timeline, 0, T * nv, kGen));
      CHECK(all_rows(a.timeline, 0, T * k, kCond));
    }
  }

  TEST_CASE("continuation prefix length") {
    CHECK(continuation_prefix(8) == 2);
    CHECK(continuation_prefix(4) == 1);
    CHECK(continuation_prefix(2) == 1);
    CHECK_THROWS_AS(task_assembly(TaskKind::kJointContinuation, 1), Error);
  }

  TEST_CASE("generator is deterministic per seed") {
    const DataConfig cfg = data_config();
    const SyntheticSample a = generate_sample(cfg, 5), b = generate_sample(cfg, 5), c = generate_sample(cfg, 6);
    CHECK(a.video == b.video);
    CHECK(a.audio == b.audio);
    CHECK(a.gt_mask == b.gt_mask);
    CHECK(a.symbols == b.symbols);
    CHECK(max_abs_diff(a.video, c.video) > 0);
    DataConfig bad = cfg;
    bad.frames = 1;
    CHECK_THROWS_AS(generate_sample(bad, 1), Error);
  }

  TEST_CASE("mask is binary and the coupling channel follows the trace") {
    const DataConfig cfg = data_config();
    const std::size_t nv = cfg.video_tokens, T = cfg.frames;
    std::vector<Real> bg_pool, trace_pool;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const SyntheticSample s = generate_sample(cfg, seed);
      std::vector<Real> face(T, 0), bg(T, 0);
      for (std::size_t f = 0; f < T; ++f) {
        std::size_t faces = 0;
        for (std::size_t t = 0; t < nv; ++t) {
          const Real m = s.gt_mask.at(f, t);
          REQUIRE((m == 0 || m == 1));
          if (m == 1) {
            face[f] += s.video.at(f * nv + t, 0);
            ++faces;
          } else {
            bg[f] += s.video.at(f * nv + t, 0);
          }
        }
        REQUIRE(faces > 0);
        REQUIRE(faces < nv);
        face[f] /= Real(faces);
        bg[f] /= Real(nv - faces);
      }
      if (seed < 20) CHECK(pearson(face, s.trace) >= 0.999);
      bg_pool.insert(bg_pool.end(), bg.begin(), bg.end());
      trace_pool.insert(trace_pool.end(), s.trace.begin(), s.trace.end());
    }
    CHECK(std::abs(pearson(bg_pool, trace_pool)) < 0.2);
  }

  TEST_CASE("scheduler frequencies") {
    TaskScheduler sched({4, 1, 1, 2, 2}, 3);
    const auto p = sched.probabilities();
    const double expect[] = {0.4, 0.1, 0.1, 0.2, 0.2};
    for (std::size_t i = 0; i < 5; ++i) CHECK(p[i] == doctest::Approx(expect[i]).epsilon(1e-15));
    std::array<std::size_t, 5> counts{};
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) ++counts[std::size_t(sched.next())];
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(double(counts[i]) / double(n) - expect[i]) <= 0.01);

    TaskScheduler only({1, 0, 0, 0, 0}, 4);
    for (int i = 0; i < 1000; ++i) CHECK(only.next() == TaskKind::kJointGen);
    CHECK_THROWS_AS(TaskScheduler({0, 0, 0, 0, 0}, 1), Error);
  }

  TEST_CASE("consistency score examples") {
    const DataConfig cfg = data_config();
    const FrameLayout l = cfg.layout();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const SyntheticSample s = generate_sample(cfg, seed);
      CHECK(consistency_score(s.video, s.audio, l) >= 0.98);
      CHECK(decode_video_trace(s.video, l).size() == l.audio_len());
    }
    double sum = 0;
    const int pairs = 500;
    for (int i = 0; i < pairs; ++i) {
      const SyntheticSample a = generate_sample(cfg, 10000 + 2 * i), b = generate_sample(cfg, 10001 + 2 * i);
      sum += consistency_score(a.video, b.audio, l);
    }
    CHECK(std::abs(sum / pairs) < 0.2);

    const SyntheticSample s = generate_sample(cfg, 0);
    Tensor flat = s.audio;
    for (std::size_t r = 0; r < flat.rows(); ++r) flat.at(r, 0) = 1;
    CHECK_THROWS_AS(consistency_score(s.video, flat, l), Error);
    const Real c[] = {1, 1, 1};
    const Real x[] = {1, 2, 3};
    CHECK_THROWS_AS(pearson(c, x), Error);
    const Real y[] = {2, 4, 6};
    CHECK(pearson(x, y) == doctest::Approx(1).epsilon(1e-15));
  }

  TEST_CASE("task names round trip") {
    for (TaskKind k : kAllTasks) CHECK(parse_task(to_string(k)) == k);
    CHECK_THROWS_AS(parse_task("Karaoke"), Error);
  }

  TEST_CASE("training batches are reproducible") {
    RunConfig cfg;
    cfg.data.frames = 4;
    cfg.data.video_tokens = 4;
    cfg.data.audio_tokens = 3;
    cfg.train.batch = 2;
    const TrainingBatch a = make_training_batch(cfg, 2, 7);
    const TrainingBatch b = make_training_batch(cfg, 2, 7);
    const TrainingBatch c = make_training_batch(cfg, 2, 8);
    CHECK(a.input.video.latents == b.input.video.latents);
    CHECK(a.targets.audio == b.targets.audio);
    CHECK(max_abs_diff(a.input.video.latents, c.input.video.latents) > 0);
  }
}
