// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/check.h"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "dualdit/io.h"
#include "dualdit/sampling.h"
#include "dualdit/tasks.h"

namespace dualdit {

namespace {

constexpr bool kDouble = sizeof(Real) == 8;

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

void noise_branch(BranchInput& b, Tensor& target, Real t, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  target = Tensor(b.latents.shape());
  for (std::size_t r = 0; r < b.rows.size(); ++r) {
    if (!b.rows[r].noised) continue;
    for (std::size_t c = 0; c < b.latents.cols(); ++c) {
      const Real x0 = b.latents.at(r, c);
      const Real eps = Real(n(rng));
      b.latents.at(r, c) = (Real(1) - t) * x0 + t * eps;
      target.at(r, c) = eps - x0;
    }
  }
}

Tensor stack(const std::vector<Tensor>& parts) {
  Storage data;
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    data.insert(data.end(), p.storage().begin(), p.storage().end());
    rows += p.rows();
  }
  const std::size_t cols = parts.front().cols();
  return Tensor({rows, cols}, std::move(data));
}

Real eval_loss(DualBranchModel& model, const TrainingBatch& batch, Real lambda) {
  Graph g(&model.params(), false);
  const ForwardResult out = model.forward(g, batch.input);
  return joint_loss(g, out, batch.input, batch.targets, lambda).total.value()[0];
}

// One noised sample of `task` with the given noise level.
JointInput noised_task(const RunConfig& cfg, TaskKind task, std::uint64_t seed, Real t) {
  AssembledSample a = assemble(task, generate_sample(cfg.data, seed));
  std::mt19937_64 rng(seed ^ 0x5bd1e995u);
  Tensor unused;
  a.input.t = {t};
  noise_branch(a.input.video, unused, t, rng);
  noise_branch(a.input.audio, unused, t, rng);
  return a.input;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor out(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (Real& v : out.values()) v = Real(n(rng));
  return out;
}

bool rows_equal(const Tensor& a, const Tensor& b, std::size_t r) {
  return std::equal(a.row(r).begin(), a.row(r).end(), b.row(r).begin());
}

Real rows_diff(const Tensor& a, const Tensor& b, std::size_t begin, std::size_t end) {
  Real d = 0;
  for (std::size_t r = begin; r < end; ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) d = std::max(d, std::abs(a.at(r, c) - b.at(r, c)));
  }
  return d;
}

// ---------------------------------------------------------------------------

CheckResult check_gradients(const CheckOptions& opt) {
  const Real tol = opt.grad_tol > 0 ? opt.grad_tol : Real(kDouble ? 1e-4 : 2e-2);
  const Real h = opt.grad_step > 0 ? opt.grad_step : Real(kDouble ? 1e-5 : 1e-2);
  const RunConfig cfg = small_run_config();
  DualBranchModel model(cfg.model_config(), mix_seed(opt.seed, 11));
  randomize_parameters(model.params(), mix_seed(opt.seed, 12));
  const TrainingBatch batch = mixed_task_batch(cfg, mix_seed(opt.seed, 13));
  const auto t0 = std::chrono::steady_clock::now();
  const auto groups = gradient_check(model, batch, Real(0.1), h);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CheckResult r{"gradients", true, ""};
  const GradGroupResult* worst = nullptr;
  std::size_t failed = 0, untouched = 0;
  std::string zero_names;
  for (const auto& gr : groups) {
    if (!worst || gr.rel_error > worst->rel_error) worst = &gr;
    if (!(gr.rel_error <= tol)) ++failed;
    if (gr.analytic_norm == 0) {
      ++untouched;
      zero_names += (zero_names.empty() ? " [" : " ") + gr.name;
    }
  }
  if (!zero_names.empty()) zero_names += "]";
  r.pass = failed == 0 && untouched == 0;
  r.detail = std::to_string(groups.size()) + " groups, worst " + (worst ? worst->name : "-") + " rel " +
             fmt(worst ? worst->rel_error : 0) + " (tol " + fmt(tol) + "), " + std::to_string(untouched) +
             " with zero gradient" + zero_names + ", " + fmt(secs) + " s";
  return r;
}

CheckResult check_neutrality(const CheckOptions& opt) {
  const RunConfig cfg = small_run_config();
  DualBranchModel model(cfg.model_config(), mix_seed(opt.seed, 21));
  if (opt.corrupt_output_init) {
    std::mt19937_64 rng(mix_seed(opt.seed, 22));
    for (const InteractionLayer& l : model.interaction_layers()) {
      for (ParamId id : {l.aligner.a2v_o.weight, l.aligner.v2a_o.weight}) {
        Tensor& w = model.params()[id].value;
        w = random_tensor(w.shape(), rng);
      }
    }
  }
  const TrainingBatch batch = mixed_task_batch(cfg, mix_seed(opt.seed, 23));
  const Prediction joint = model.joint_forward(batch.input);
  const Prediction video = model.unimodal_forward(batch.input, true);
  const Prediction audio = model.unimodal_forward(batch.input, false);
  const Prediction nullified = model.nullified_forward(batch.input);
  const Real dv = max_abs_diff(joint.video, video.video);
  const Real da = max_abs_diff(joint.audio, audio.audio);
  const Real dn = std::max(max_abs_diff(joint.video, nullified.video), max_abs_diff(joint.audio, nullified.audio));
  CheckResult r{"zero-init neutrality", dv == 0 && da == 0 && dn == 0, ""};
  r.detail = "max |joint - unimodal| video " + fmt(dv) + ", audio " + fmt(da) + ", vs nullified " + fmt(dn);
  if (opt.corrupt_output_init) r.detail += " (corrupted output projections)";
  return r;
}

struct AlignerFixture {
  ParameterStore store;
  AlignerParams params;
  FrameLayout layout{6, 4, 3, 16};
  Tensor video, audio;  // framed

  explicit AlignerFixture(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    params = AlignerParams::create(store, "aligner", layout.width, layout.width, rng);
    randomize_parameters(store, seed + 1);
    video = random_tensor({layout.frames, layout.video_tokens, layout.width}, rng);
    audio = random_tensor({layout.frames, layout.audio_tokens, layout.width}, rng);
  }
  Tensor perturb_frame(const Tensor& x, std::size_t frame, std::mt19937_64& rng) const {
    Tensor out = x;
    const std::size_t per = x.dim(1) * x.dim(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t i = 0; i < per; ++i) out[frame * per + i] += Real(n(rng));
    return out;
  }
};

CheckResult check_locality(const CheckOptions& opt) {
  AlignerFixture fx(mix_seed(opt.seed, 31));
  const FrameLayout& l = fx.layout;
  InteractionConfig cfg;
  cfg.window = 1;
  std::mt19937_64 rng(mix_seed(opt.seed, 32));
  const std::size_t T = l.frames;
  std::size_t leaks = 0, dead = 0;

  const Tensor base_v = a2v_align(fx.video, fx.audio, fx.store, fx.params, cfg);
  const std::size_t vrows = l.video_tokens;
  const Tensor bv = base_v.reshaped({T * vrows, l.width});
  for (std::size_t j = 0; j < T; ++j) {
    const Tensor out = a2v_align(fx.video, fx.perturb_frame(fx.audio, j, rng), fx.store, fx.params, cfg)
                           .reshaped({T * vrows, l.width});
    for (std::size_t i = 0; i < T; ++i) {
      const Real d = rows_diff(out, bv, i * vrows, (i + 1) * vrows);
      const bool inside = (i > j ? i - j : j - i) <= std::size_t(cfg.window);
      if (!inside && d != 0) ++leaks;
      if (inside && d == 0) ++dead;
    }
  }

  const std::size_t k = l.audio_tokens;
  const Tensor ba = v2a_align(fx.audio, fx.video, fx.store, fx.params, cfg).reshaped({T * k, l.width});
  for (std::size_t j = 0; j < T; ++j) {
    const Tensor out = v2a_align(fx.audio, fx.perturb_frame(fx.video, j, rng), fx.store, fx.params, cfg)
                           .reshaped({T * k, l.width});
    for (std::size_t tok = 0; tok < T * k; ++tok) {
      const VideoBlend b = video_context_blend(tok, l);
      const bool inside = j == b.frame || (j == b.frame + 1 && b.alpha != 0);
      const Real d = rows_diff(out, ba, tok, tok + 1);
      if (!inside && d != 0) ++leaks;
      if (inside && d == 0) ++dead;
    }
  }
  CheckResult r{"aligner locality", leaks == 0 && dead == 0, ""};
  r.detail = "w=1, T=6: " + std::to_string(leaks) + " outputs changed outside the dependence set, " +
             std::to_string(dead) + " inside it unchanged";
  return r;
}

CheckResult check_special_cases(const CheckOptions& opt) {
  AlignerFixture fx(mix_seed(opt.seed, 41));
  const FrameLayout& l = fx.layout;
  InteractionConfig ati, sti, sgi;
  ati.window = 0;
  sti.a2v = sti.v2a = Topology::kSTI;
  sgi.a2v = sgi.v2a = Topology::kSGI;
  const bool a2v_eq = a2v_align(fx.video, fx.audio, fx.store, fx.params, ati) ==
                      a2v_align(fx.video, fx.audio, fx.store, fx.params, sti);
  // V2A: tokens whose blend weight is 0 see exactly their own frame.
  const Tensor va = v2a_align(fx.audio, fx.video, fx.store, fx.params, ati).reshaped({l.audio_len(), l.width});
  const Tensor vs = v2a_align(fx.audio, fx.video, fx.store, fx.params, sti).reshaped({l.audio_len(), l.width});
  std::size_t mismatched = 0, aligned = 0;
  for (std::size_t tok = 0; tok < l.audio_len(); ++tok) {
    if (video_context_blend(tok, l).alpha != 0) continue;
    ++aligned;
    if (!rows_equal(va, vs, tok)) ++mismatched;
  }
  const Tensor vflat = flatten_frames(fx.video), aflat = flatten_frames(fx.audio);
  const Real d_sgi_v = max_abs_diff(a2v_align(fx.video, fx.audio, fx.store, fx.params, sgi).reshaped(vflat.shape()),
                                    global_align(vflat, aflat, fx.store, fx.params, true, sgi.heads));
  const Real d_sgi_a = max_abs_diff(v2a_align(fx.audio, fx.video, fx.store, fx.params, sgi).reshaped(aflat.shape()),
                                    global_align(aflat, vflat, fx.store, fx.params, false, sgi.heads));
  const Real tol = Real(kDouble ? 1e-12 : 1e-5);
  CheckResult r{"topology special cases", a2v_eq && mismatched == 0 && aligned > 0 && d_sgi_v <= tol && d_sgi_a <= tol,
                ""};
  r.detail = std::string("ATI(w=0) == STI for A2V: ") + (a2v_eq ? "yes" : "no") + "; V2A aligned tokens equal: " +
             std::to_string(aligned - mismatched) + "/" + std::to_string(aligned) + "; SGI vs global attention " +
             fmt(std::max(d_sgi_v, d_sgi_a));
  return r;
}

CheckResult check_guidance(const CheckOptions& opt) {
  const RunConfig cfg = small_run_config();
  DualBranchModel model(cfg.model_config(), mix_seed(opt.seed, 51));
  randomize_parameters(model.params(), mix_seed(opt.seed, 52));
  const TrainingBatch batch = mixed_task_batch(cfg, mix_seed(opt.seed, 53));
  const Prediction cond = model.joint_forward(batch.input);
  const Prediction uncond = model.nullified_forward(batch.input);
  auto combine = [&](Real s) { return ma_cfg_combine(cond, uncond, GuidanceConfig{s, s, 1}); };
  const GuidedVelocity one = combine(1), zero = combine(0);
  const bool identities = one.video == cond.video && one.audio == cond.audio && zero.video == uncond.video &&
                          zero.audio == uncond.audio;
  const GuidedVelocity direct = guided_velocity(model, batch.input, GuidanceConfig{1, 1, 1});
  const bool skip_pass = direct.video == cond.video && direct.audio == cond.audio;

  const Real s1 = Real(2.5), s2 = Real(-0.75);
  const GuidedVelocity a = combine(s1), b = combine(s2);
  Real lin = 0;
  auto lin_err = [&](const Tensor& x1, const Tensor& x2, const Tensor& c, const Tensor& u) {
    for (std::size_t i = 0; i < x1.size(); ++i) lin = std::max(lin, std::abs((x1[i] - x2[i]) - (s1 - s2) * (c[i] - u[i])));
  };
  lin_err(a.video, b.video, cond.video, uncond.video);
  lin_err(a.audio, b.audio, cond.audio, uncond.audio);
  const Real lin_tol = Real(kDouble ? 1e-12 : 1e-5);
  const Real arith = guide(Tensor::scalar(2), Tensor::scalar(1), 3).item();

  // Interaction-free estimate of one branch ignores the other branch entirely.
  TrainingBatch moved = batch;
  std::mt19937_64 rng(mix_seed(opt.seed, 54));
  moved.input.audio.latents = random_tensor(moved.input.audio.latents.shape(), rng);
  for (auto& text : moved.input.audio.text) {
    for (int& id : text) id = (id + 3) % int(cfg.data.symbol_vocab);
  }
  const Prediction u_moved = model.nullified_forward(moved.input);
  const bool isolated = u_moved.audio != uncond.audio;
  TrainingBatch moved_v = batch;
  moved_v.input.video.latents = random_tensor(moved_v.input.video.latents.shape(), rng);
  const Prediction u_moved_v = model.nullified_forward(moved_v.input);
  TrainingBatch moved_a = batch;
  moved_a.input.audio = moved.input.audio;
  const bool invariant = model.nullified_forward(moved_a.input).video == uncond.video && u_moved_v.audio == uncond.audio;

  CheckResult r{"modality-aware guidance", identities && skip_pass && lin <= lin_tol && arith == 4 && invariant && isolated,
                ""};
  r.detail = std::string("s=1/s=0 identities ") + (identities ? "exact" : "broken") + ", linearity err " + fmt(lin) +
             " (tol " + fmt(lin_tol) + "), 1+3(2-1)=" + fmt(arith) + ", unconditional branch isolation " +
             (invariant ? "holds" : "broken");
  return r;
}

CheckResult check_mask_contract(const CheckOptions& opt) {
  const RunConfig cfg = small_run_config();
  DualBranchModel model(cfg.model_config(), mix_seed(opt.seed, 61));
  randomize_parameters(model.params(), mix_seed(opt.seed, 62));
  const TrainingBatch batch = mixed_task_batch(cfg, mix_seed(opt.seed, 63));
  bool inside = true;
  auto in_range = [&](const Prediction& p) {
    for (const Tensor& m : p.masks) {
      for (Real v : m.values()) inside = inside && v > 0 && v < 1;
    }
    return p.masks.size();
  };
  const std::size_t layers = in_range(model.joint_forward(batch.input));
  // Saturate the heads: the clamp must still keep values strictly inside.
  for (const InteractionLayer& l : model.interaction_layers()) {
    for (Real& v : model.params()[l.mask->proj.weight].value.values()) v *= Real(1e4);
  }
  in_range(model.joint_forward(batch.input));

  const Tensor& gt = batch.targets.mask_gt;
  const Real exact = mask_loss(std::vector<Tensor>{gt, gt}, gt);
  Tensor near = gt;
  near[0] = near[0] > Real(0.5) ? Real(0.999) : Real(0.001);
  const Real off = mask_loss(std::vector<Tensor>{near}, gt);

  const MaskSchedule s = cfg.mask_schedule();
  const std::size_t steps = cfg.train.joint_steps();
  bool monotone = true;
  for (std::size_t i = 1; i < steps; ++i) monotone = monotone && lambda_at(s, i) <= lambda_at(s, i - 1);
  const Real first = lambda_at(s, 0), last = lambda_at(s, steps - 1);

  CheckResult r{"mask contract",
                inside && layers == cfg.model.depth && exact == 0 && off > 0 && first == Real(0.1) && last == 0 && monotone,
                ""};
  r.detail = std::string("masks in (0,1): ") + (inside ? "yes" : "no") + ", loss at gt " + fmt(exact) +
             ", loss off gt " + fmt(off) + ", lambda " + fmt(first) + " -> " + fmt(last) + " over " +
             std::to_string(steps) + " steps" + (monotone ? "" : " (not monotone)");
  return r;
}

CheckResult check_participation(const CheckOptions& opt) {
  const RunConfig cfg = small_run_config();
  DualBranchModel model(cfg.model_config(), mix_seed(opt.seed, 71));
  randomize_parameters(model.params(), mix_seed(opt.seed, 72));
  std::size_t violations = 0, inert = 0, ref_rows = 0;
  for (TaskKind task : kAllTasks) {
    const JointInput in = noised_task(cfg, task, mix_seed(opt.seed, 73, std::size_t(task)), Real(0.5));
    Graph g(&model.params(), false);
    std::vector<InteractionSnapshot> snaps;
    ForwardOptions fo;
    fo.snapshots = &snaps;
    model.forward(g, in, fo);
    bool moved_v = false, moved_a = false;
    for (const auto& s : snaps) {
      for (std::size_t r = 0; r < in.video.rows.size(); ++r) {
        const bool same = rows_equal(s.video_before, s.video_after, r);
        if (!in.video.rows[r].sink && !same) ++violations;
        moved_v = moved_v || !same;
      }
      for (std::size_t r = 0; r < in.audio.rows.size(); ++r) {
        const bool same = rows_equal(s.audio_before, s.audio_after, r);
        if (!in.audio.rows[r].sink && !same) ++violations;
        if (task == TaskKind::kJointGenRefAudio && in.audio.rows[r].role == Role::kRef && in.audio.rows[r].present) {
          ++ref_rows;
        }
        moved_a = moved_a || !same;
      }
    }
    if (snaps.size() != cfg.model.depth) ++violations;
    const TaskAssembly a = task_assembly(task, cfg.data.frames);
    if (a.v_gen.sink && !moved_v) ++inert;
    if (a.a_gen.sink && !moved_a) ++inert;
  }

  // Clean segments survive sampling bit for bit.
  std::size_t altered = 0;
  for (TaskKind task : kAllTasks) {
    const JointInput in = assemble(task, generate_sample(cfg.data, mix_seed(opt.seed, 74, std::size_t(task)))).input;
    const SampleResult out = euler_sample(model, in, GuidanceConfig{2, 2, 3}, mix_seed(opt.seed, 75));
    for (std::size_t r = 0; r < in.video.rows.size(); ++r) {
      if (!in.video.rows[r].noised && !rows_equal(out.video, in.video.latents, r)) ++altered;
    }
    for (std::size_t r = 0; r < in.audio.rows.size(); ++r) {
      if (!in.audio.rows[r].noised && !rows_equal(out.audio, in.audio.latents, r)) ++altered;
    }
  }

  // Conditional sources reach the other branch.
  std::size_t silent = 0;
  const std::pair<TaskKind, bool> sources[] = {{TaskKind::kJointContinuation, true},
                                               {TaskKind::kV2ADubbing, true},
                                               {TaskKind::kA2VSynthesis, false}};
  std::mt19937_64 rng(mix_seed(opt.seed, 76));
  for (const auto& [task, from_video] : sources) {
    const JointInput in = noised_task(cfg, task, mix_seed(opt.seed, 77, std::size_t(task)), Real(0.5));
    JointInput moved = in;
    BranchInput& src = from_video ? moved.video : moved.audio;
    for (std::size_t r = 0; r < src.rows.size(); ++r) {
      if (src.rows[r].role != Role::kCond) continue;
      for (Real& v : src.latents.row(r)) v += Real(std::normal_distribution<double>(0.0, 1.0)(rng));
    }
    const Prediction p0 = model.joint_forward(in), p1 = model.joint_forward(moved);
    const Tensor& o0 = from_video ? p0.audio : p0.video;
    const Tensor& o1 = from_video ? p1.audio : p1.video;
    const auto& rows = from_video ? in.audio.rows : in.video.rows;
    Real d = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].noised) d = std::max(d, rows_diff(o0, o1, r, r + 1));
    }
    if (d == 0) ++silent;
  }

  TaskScheduler sched({4, 1, 1, 2, 2}, mix_seed(opt.seed, 78));
  const std::size_t draws = 100000;
  std::array<std::size_t, 5> counts{};
  for (std::size_t i = 0; i < draws; ++i) ++counts[std::size_t(sched.next())];
  const auto p = sched.probabilities();
  double worst = 0;
  for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(double(counts[i]) / double(draws) - p[i]));

  CheckResult r{"task participation",
                violations == 0 && inert == 0 && altered == 0 && silent == 0 && ref_rows > 0 && worst <= 0.01, ""};
  r.detail = std::to_string(violations) + " non-sink rows touched by interaction (" + std::to_string(ref_rows) +
             " reference-audio row visits), " + std::to_string(inert) + " sink segments never updated, " +
             std::to_string(altered) + " clean rows altered by sampling, " + std::to_string(silent) +
             " conditional sources without influence, scheduler max deviation " + fmt(worst) + " over 1e5 draws";
  return r;
}

CheckResult check_persistence(const CheckOptions& opt) {
  namespace fs = std::filesystem;
  const RunConfig cfg = small_run_config();
  DualBranchModel model(cfg.model_config(), mix_seed(opt.seed, 81));
  randomize_parameters(model.params(), mix_seed(opt.seed, 82));
  AdamW optim(model.params(), AdamWConfig{});
  std::mt19937_64 rng(mix_seed(opt.seed, 83));
  for (int s = 0; s < 2; ++s) {
    std::vector<Tensor> grads;
    for (const Parameter& p : model.params()) grads.push_back(random_tensor(p.value.shape(), rng));
    optim.step(model.params(), grads);
  }
  const fs::path dir = fs::temp_directory_path() / ("dualdit_check_" + std::to_string(mix_seed(opt.seed, 84) % 1000000007));
  fs::create_directories(dir);
  const std::string text = to_text(cfg);
  const fs::path a = dir / "a.uavg", b = dir / "b.uavg";
  save_checkpoint(a.string(), text, model.params(), optim, 42);
  const Checkpoint ck = load_checkpoint(a.string());
  bool params_equal = ck.params.size() == model.params().size() && ck.step == 42 && ck.config_text == text &&
                      ck.optimizer_steps == optim.steps();
  for (std::size_t i = 0; params_equal && i < ck.params.size(); ++i) {
    params_equal = ck.params[i].name == model.params()[i].name && ck.params[i].value == model.params()[i].value &&
                   ck.first_moment[i] == optim.first_moment()[i] && ck.second_moment[i] == optim.second_moment()[i];
  }
  AdamW reloaded(ck.params, AdamWConfig{});
  reloaded.first_moment() = ck.first_moment;
  reloaded.second_moment() = ck.second_moment;
  reloaded.set_steps(ck.optimizer_steps);
  save_checkpoint(b.string(), ck.config_text, ck.params, reloaded, ck.step);
  auto bytes = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  const bool files_equal = bytes(a) == bytes(b);

  RunConfig odd = cfg;
  odd.interaction.layers = {1};
  odd.interaction.a2v = Topology::kSTI;
  odd.fam = FamMode::kFixed;
  odd.train.ratios = {3, 0, 1, 2, 5};
  odd.train.optim.lr = Real(3.25e-4);
  odd.out_dir = "some dir";
  const std::string t1 = to_text(odd);
  const bool config_fixpoint = to_text(parse_run_config(t1)) == t1;
  fs::remove_all(dir);

  CheckResult r{"persistence round trips", params_equal && files_equal && config_fixpoint, ""};
  r.detail = std::string("checkpoint values ") + (params_equal ? "bitwise equal" : "differ") + ", re-saved file " +
             (files_equal ? "identical" : "differs") + ", config print/parse " + (config_fixpoint ? "fixpoint" : "drifts");
  return r;
}

CheckResult check_training_determinism(const CheckOptions& opt) {
  namespace fs = std::filesystem;
  RunConfig cfg = small_run_config();
  cfg.seed = opt.seed;
  cfg.train.stage1_steps = 1;
  cfg.train.stage2_steps = 2;
  cfg.train.stage3_steps = 2;
  cfg.train.batch = 2;
  cfg.train.probe_count = 2;
  cfg.sampler.steps = 2;
  const fs::path dir = fs::temp_directory_path() / ("dualdit_check_run_" + std::to_string(mix_seed(opt.seed, 91) % 1000000007));
  fs::remove_all(dir);
  auto lines = [](const std::vector<MetricsRow>& rows) {
    std::string s;
    for (const auto& r : rows) s += format_metrics(r) + "\n";
    return s;
  };
  TrainOptions quiet;
  quiet.write_files = false;
  const std::string first = lines(Trainer(cfg).run(quiet).metrics);
  const std::string second = lines(Trainer(cfg).run(quiet).metrics);

  RunConfig part = cfg;
  part.out_dir = dir.string();
  TrainOptions head;
  head.stop_after = 3;
  Trainer(part).run(head);
  TrainOptions tail;
  tail.resume = (dir / "checkpoint.uavg").string();
  const std::string resumed = lines(Trainer(part).run(tail).metrics);
  const std::string on_disk = lines(read_metrics((dir / "metrics.csv").string()));
  fs::remove_all(dir);

  CheckResult r{"training determinism", first == second && resumed == first && on_disk == first, ""};
  r.detail = std::string("repeat run ") + (first == second ? "identical" : "differs") + ", resumed run " +
             (resumed == first ? "identical" : "differs") + ", metrics file " + (on_disk == first ? "identical" : "differs");
  return r;
}

}  // namespace

RunConfig small_run_config() {
  RunConfig c;
  c.data.frames = 4;
  c.data.video_tokens = 4;
  c.data.audio_tokens = 3;
  c.model.depth = 2;
  c.model.width = 16;
  c.model.heads = 4;
  c.model.ff_mult = 2;
  c.interaction.window = 1;
  return c;
}

void randomize_parameters(ParameterStore& store, std::uint64_t seed, Real scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Tensor& v = store[i].value;
    const Real s = scale / std::sqrt(Real(std::max<std::size_t>(1, v.cols())));
    for (Real& x : v.values()) x = Real(n(rng)) * s;
  }
}

TrainingBatch mixed_task_batch(const RunConfig& cfg, std::uint64_t seed) {
  const TaskKind tasks[] = {TaskKind::kJointGen, TaskKind::kJointGenRefAudio, TaskKind::kJointContinuation};
  const Real levels[] = {Real(0.35), Real(0.6), Real(0.85)};
  std::vector<JointInput> inputs;
  std::vector<Tensor> tv, ta, masks;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < 3; ++i) {
    AssembledSample a = assemble(tasks[i], generate_sample(cfg.data, mix_seed(seed, i)));
    if (i == 0) {
      for (std::size_t r = 0; r < cfg.data.video_tokens; ++r) a.input.video.rows[r].present = false;
      a.input.video.text[0].clear();
    }
    a.input.t = {levels[i]};
    Tensor target_v, target_a;
    noise_branch(a.input.video, target_v, levels[i], rng);
    noise_branch(a.input.audio, target_a, levels[i], rng);
    inputs.push_back(std::move(a.input));
    tv.push_back(std::move(target_v));
    ta.push_back(std::move(target_a));
    masks.push_back(std::move(a.mask_gt));
  }
  TrainingBatch batch;
  batch.input = concat_inputs(inputs);
  batch.targets.video = stack(tv);
  batch.targets.audio = stack(ta);
  batch.targets.mask_gt = stack(masks);
  return batch;
}

std::vector<GradGroupResult> gradient_check(DualBranchModel& model, const TrainingBatch& batch, Real lambda, Real h) {
  Graph g(&model.params(), true);
  const ForwardResult out = model.forward(g, batch.input);
  const LossTerms terms = joint_loss(g, out, batch.input, batch.targets, lambda);
  g.backward(terms.total);

  std::vector<GradGroupResult> results;
  ParameterStore& store = model.params();
  for (ParamId id = 0; id < store.size(); ++id) {
    const Tensor analytic = g.param_grad(id);
    Tensor numeric(analytic.shape());
    Tensor& value = store[id].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const Real saved = value[i];
      value[i] = saved + h;
      const Real up = eval_loss(model, batch, lambda);
      value[i] = saved - h;
      const Real down = eval_loss(model, batch, lambda);
      value[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    Real norm = 0;
    for (Real v : analytic.values()) norm += v * v;
    results.push_back({store[id].name, value.size(), std::sqrt(norm), relative_error(analytic, numeric)});
  }
  return results;
}

std::vector<CheckResult> run_checks(const CheckOptions& opt, const std::function<void(const CheckResult&)>& report) {
  struct Entry {
    const char* name;
    CheckResult (*fn)(const CheckOptions&);
  };
  const Entry checks[] = {{"gradients", check_gradients},
                          {"zero-init neutrality", check_neutrality},
                          {"aligner locality", check_locality},
                          {"topology special cases", check_special_cases},
                          {"modality-aware guidance", check_guidance},
                          {"mask contract", check_mask_contract},
                          {"task participation", check_participation},
                          {"persistence round trips", check_persistence},
                          {"training determinism", check_training_determinism}};
  std::vector<CheckResult> results;
  for (const Entry& e : checks) {
    CheckResult r;
    try {
      r = e.fn(opt);
    } catch (const std::exception& ex) {
      r.pass = false;
      r.detail = std::string("error: ") + ex.what();
    }
    r.name = e.name;
    if (report) report(r);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace dualdit
