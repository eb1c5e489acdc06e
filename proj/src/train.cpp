// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/train.h"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "dualdit/io.h"
#include "dualdit/sampling.h"
#include "dualdit/tasks.h"

namespace dualdit {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (std::uint64_t w : {a, b, c, d}) {
    h ^= w + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    std::uint64_t z = (h += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    h = z ^ (z >> 31);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace {

template <typename T>
std::string num(T v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

}  // namespace

std::string metrics_header() { return "step,stage,loss_video,loss_audio,loss_mask,lambda_mask,consistency"; }

std::string format_metrics(const MetricsRow& r) {
  std::string out = num(r.step) + "," + num(r.stage) + "," + num(r.loss_video) + "," + num(r.loss_audio) + "," +
                    num(r.loss_mask) + "," + num(r.lambda_mask) + ",";
  if (!std::isnan(r.consistency)) out += num(r.consistency);
  return out;
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot read metrics '" + path + "'");
  std::vector<MetricsRow> rows;
  std::string line;
  std::getline(f, line);
  if (line != metrics_header()) throw Error(ErrorCode::kFormat, "unexpected metrics header in '" + path + "'");
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == 6) cells.emplace_back();
    if (cells.size() != 7) throw Error(ErrorCode::kFormat, "bad metrics row '" + line + "'");
    MetricsRow r;
    r.step = std::stoull(cells[0]);
    r.stage = std::stoi(cells[1]);
    r.loss_video = Real(std::stod(cells[2]));
    r.loss_audio = Real(std::stod(cells[3]));
    r.loss_mask = Real(std::stod(cells[4]));
    r.lambda_mask = Real(std::stod(cells[5]));
    if (!cells[6].empty()) r.consistency = std::stod(cells[6]);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

int stage_of(const TrainConfig& t, std::uint64_t step) {
  if (step < t.stage1_steps) return 1;
  if (step < t.stage1_steps + t.stage2_steps) return 2;
  return 3;
}

namespace {

void noise_rows(const BranchInput& clean, BranchInput& noised, Tensor& target, Real t, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  noised = clean;
  target = Tensor(clean.latents.shape());
  const std::size_t c = clean.latents.cols();
  for (std::size_t r = 0; r < clean.rows.size(); ++r) {
    if (!clean.rows[r].noised) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Real x0 = clean.latents.at(r, ch);
      const Real eps = Real(n(rng));
      noised.latents.at(r, ch) = (Real(1) - t) * x0 + t * eps;
      target.at(r, ch) = eps - x0;
    }
  }
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  Storage data;
  std::size_t rows = 0;
  const std::size_t cols = parts.front().cols();
  for (const Tensor& p : parts) {
    data.insert(data.end(), p.storage().begin(), p.storage().end());
    rows += p.rows();
  }
  return Tensor({rows, cols}, std::move(data));
}

}  // namespace

TrainingBatch make_training_batch(const RunConfig& cfg, int stage, std::uint64_t step) {
  const TaskScheduler scheduler(cfg.train.ratios, 0);
  std::vector<JointInput> inputs;
  std::vector<Tensor> tv, ta, masks;
  for (std::size_t b = 0; b < cfg.train.batch; ++b) {
    TaskKind task = cfg.train.task;
    if (stage == 3) {
      std::mt19937_64 task_rng(mix_seed(cfg.seed, step, b, 0));
      task = scheduler.draw(task_rng);
    }
    const SyntheticSample sample = generate_sample(cfg.data, mix_seed(cfg.seed, step, b, 1));
    AssembledSample a = assemble(task, sample);
    std::mt19937_64 rng(mix_seed(cfg.seed, step, b, 2));
    Real t;
    if (cfg.train.timestep == TimestepSampling::kUniform) {
      t = Real(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    } else {
      t = Real(1.0 / (1.0 + std::exp(-std::normal_distribution<double>(0.0, 1.0)(rng))));
    }
    JointInput in = a.input;
    in.t = {t};
    Tensor target_v, target_a;
    noise_rows(a.input.video, in.video, target_v, t, rng);
    noise_rows(a.input.audio, in.audio, target_a, t, rng);
    inputs.push_back(std::move(in));
    tv.push_back(std::move(target_v));
    ta.push_back(std::move(target_a));
    masks.push_back(std::move(a.mask_gt));
  }
  TrainingBatch batch;
  batch.input = concat_inputs(inputs);
  batch.targets.video = stack_rows(tv);
  batch.targets.audio = stack_rows(ta);
  batch.targets.mask_gt = stack_rows(masks);
  return batch;
}

// ---------------------------------------------------------------------------
// Probe
// ---------------------------------------------------------------------------

namespace {

std::vector<double> probe_chunk(const DualBranchModel& model, const RunConfig& cfg, std::size_t begin,
                                std::size_t end) {
  std::vector<JointInput> inputs;
  for (std::size_t i = begin; i < end; ++i) {
    const SyntheticSample s = generate_sample(cfg.data, mix_seed(cfg.train.probe_seed, i));
    inputs.push_back(with_initial_noise(assemble(TaskKind::kJointGen, s).input, mix_seed(cfg.train.probe_seed, i, 1)));
  }
  const JointInput start = concat_inputs(inputs);
  const GuidanceConfig g = cfg.sampler;
  const VelocityField field = [&](const JointInput& z) { return guided_velocity(model, z, g); };
  const JointInput out = euler_integrate(field, start, g.steps);
  const ModelConfig& mc = model.config();
  const FrameLayout layout = mc.layout();
  std::vector<double> scores;
  for (std::size_t i = 0; i < end - begin; ++i) {
    const std::size_t vr = mc.video_rows(), ar = mc.audio_rows();
    Tensor video({layout.video_len(), mc.channels});
    Tensor audio({layout.audio_len(), mc.channels});
    std::copy_n(out.video.latents.data() + (i * vr + mc.video_tokens) * mc.channels, video.size(), video.data());
    std::copy_n(out.audio.latents.data() + (i * ar + mc.audio_tokens) * mc.channels, audio.size(), audio.data());
    double score = 0;
    try {
      score = consistency_score(video, audio, layout);
    } catch (const Error&) {
      score = 0;
    }
    scores.push_back(score);
  }
  return scores;
}

}  // namespace

double probe_consistency(const DualBranchModel& model, const RunConfig& cfg, std::size_t threads) {
  const std::size_t n = cfg.train.probe_count;
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::vector<double>> parts(threads);
  auto run = [&](std::size_t k) { parts[k] = probe_chunk(model, cfg, k * n / threads, (k + 1) * n / threads); };
  if (threads == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(run, k);
    for (auto& th : pool) th.join();
  }
  double sum = 0;
  for (const auto& p : parts) {
    for (double s : p) sum += s;
  }
  return sum / double(n);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)), model_((cfg_.validate(), cfg_.model_config()), cfg_.seed) {
  optimizer_ = AdamW(model_.params(), cfg_.train.optim);
}

MetricsRow Trainer::step(std::uint64_t s) {
  const int stage = stage_of(cfg_.train, s);
  const TrainingBatch batch = make_training_batch(cfg_, stage, s);
  Graph g(&model_.params(), true);
  ForwardOptions opt;
  if (stage == 1) {
    opt.video = false;
    opt.interact = false;
  }
  const ForwardResult out = model_.forward(g, batch.input, opt);
  const Real lambda = stage == 1 ? Real(0) : lambda_at(cfg_.mask_schedule(), s - cfg_.train.stage1_steps);
  const LossTerms terms = joint_loss(g, out, batch.input, batch.targets, lambda);
  const Real total = terms.total.value()[0];
  if (!std::isfinite(total)) {
    throw Error(ErrorCode::kNonFinite, "non-finite loss at step " + std::to_string(s));
  }
  g.backward(terms.total);
  std::vector<Tensor> grads;
  grads.reserve(model_.params().size());
  for (std::size_t i = 0; i < model_.params().size(); ++i) grads.push_back(g.param_grad(i));
  optimizer_.step(model_.params(), grads);

  MetricsRow row;
  row.step = s;
  row.stage = stage;
  row.loss_video = terms.video.value()[0];
  row.loss_audio = terms.audio.value()[0];
  row.loss_mask = terms.mask.value()[0];
  row.lambda_mask = lambda;
  return row;
}

TrainResult Trainer::run(const TrainOptions& opt) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg_.out_dir);
  const fs::path metrics_path = dir / "metrics.csv";
  TrainResult result;
  std::uint64_t start = 0;
  if (!opt.resume.empty()) {
    Checkpoint ck = load_checkpoint(opt.resume);
    restore_parameters(model_.params(), ck.params);
    optimizer_.first_moment() = std::move(ck.first_moment);
    optimizer_.second_moment() = std::move(ck.second_moment);
    optimizer_.set_steps(ck.optimizer_steps);
    start = ck.step;
    if (fs::exists(metrics_path)) {
      for (const auto& r : read_metrics(metrics_path.string())) {
        if (r.step < start) result.metrics.push_back(r);
      }
    }
  } else if (!opt.init.empty()) {
    restore_parameters(model_.params(), load_checkpoint(opt.init).params);
  }

  const std::string config_text = to_text(cfg_);
  if (opt.write_files) {
    fs::create_directories(dir);
    std::ofstream(dir / "run.cfg") << config_text;
  }
  auto write_metrics = [&] {
    if (!opt.write_files) return;
    std::ofstream f(metrics_path);
    f << metrics_header() << "\n";
    for (const auto& r : result.metrics) f << format_metrics(r) << "\n";
    if (!f) throw Error(ErrorCode::kIo, "cannot write '" + metrics_path.string() + "'");
  };

  const std::uint64_t total = cfg_.train.total_steps();
  const std::uint64_t end = opt.stop_after ? std::min<std::uint64_t>(opt.stop_after, total) : total;
  for (std::uint64_t s = start; s < end; ++s) {
    MetricsRow row = step(s);
    const bool last = s + 1 == total;
    if (last || (cfg_.train.probe_every && (s + 1) % cfg_.train.probe_every == 0)) {
      row.consistency = probe_consistency(model_, cfg_, cfg_.threads);
      result.final_consistency = row.consistency;
    }
    result.metrics.push_back(row);
    if (opt.log && (s % std::max<std::size_t>(1, opt.log_every) == 0 || last || !std::isnan(row.consistency))) {
      *opt.log << format_metrics(row) << std::endl;
    }
    const bool ckpt = cfg_.train.checkpoint_every && (s + 1) % cfg_.train.checkpoint_every == 0;
    if (opt.write_files && ckpt) {
      save_checkpoint((dir / ("checkpoint_" + std::to_string(s + 1) + ".uavg")).string(), config_text,
                      model_.params(), optimizer_, s + 1);
      write_metrics();
    }
  }
  if (opt.write_files) {
    save_checkpoint((dir / "checkpoint.uavg").string(), config_text, model_.params(), optimizer_, end);
    write_metrics();
  }
  return result;
}

}  // namespace dualdit
