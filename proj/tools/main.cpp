// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0
//
// dualdit command-line tool: train, sample, check, ablate, plot, gen-data.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "dualdit/ablate.h"
#include "dualdit/check.h"
#include "dualdit/io.h"
#include "dualdit/plot.h"
#include "dualdit/sampling.h"
#include "dualdit/tasks.h"
#include "dualdit/train.h"

namespace fs = std::filesystem;
using namespace dualdit;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool deterministic = false;
  std::string config;
  std::vector<std::string> overrides;
};

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::kConfig, "override '" + assignment + "' is not key=value");
  auto trim = [](std::string s) {
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    return s;
  };
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

// Config file, then environment, then flags and key=value overrides.
RunConfig resolve_config(const Globals& g, const std::string& base_text = {}) {
  RunConfig cfg;
  if (!base_text.empty()) cfg = parse_run_config(base_text);
  if (!g.config.empty()) cfg = load_run_config(g.config);
  if (const char* s = std::getenv("DUALDIT_SEED")) set_config_value(cfg, "seed", s);
  if (const char* t = std::getenv("DUALDIT_THREADS")) set_config_value(cfg, "threads", t);
  for (const auto& o : g.overrides) apply_override(cfg, o);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  if (g.deterministic) cfg.threads = 1;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

int cmd_train(const Globals& g, const std::string& resume, const std::string& init, std::uint64_t stop_after,
              bool quiet, std::size_t log_every) {
  const RunConfig cfg = resolve_config(g);
  Trainer trainer(cfg);
  TrainOptions opt;
  opt.resume = resume;
  opt.init = init;
  opt.stop_after = stop_after;
  opt.log = quiet ? nullptr : &std::cout;
  opt.log_every = log_every;
  if (!quiet) {
    std::cout << "# " << trainer.model().params().total_elements() << " parameters, " << cfg.train.total_steps()
              << " steps, output in " << cfg.out_dir << "\n"
              << metrics_header() << std::endl;
  }
  const TrainResult r = trainer.run(opt);
  if (!quiet) std::cout << "# final consistency " << r.final_consistency << std::endl;
  return 0;
}

struct SampleFlags {
  std::string checkpoint;
  std::string task = "JointGen";
  std::optional<double> s_v, s_a;
  std::optional<std::size_t> steps;
  std::size_t count = 1;
  std::string out = "samples";
  std::string shard;
  std::uint64_t data_seed = 104729;
  bool dump_masks = false;
};

int cmd_sample(const Globals& g, const SampleFlags& f) {
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  RunConfig cfg = resolve_config(g, ck.config_text);
  if (f.s_v) cfg.sampler.s_v = Real(*f.s_v);
  if (f.s_a) cfg.sampler.s_a = Real(*f.s_a);
  if (f.steps) cfg.sampler.steps = *f.steps;
  cfg.sampler.validate();
  DualBranchModel model(cfg.model_config(), cfg.seed);
  restore_parameters(model.params(), ck.params);
  const TaskKind task = parse_task(f.task);

  std::vector<SyntheticSample> sources;
  if (!f.shard.empty()) {
    sources = load_shard(f.shard, cfg.data);
    if (sources.size() < f.count) throw Error(ErrorCode::kConfig, "shard holds fewer samples than --count");
    sources.resize(f.count);
  } else {
    for (std::size_t i = 0; i < f.count; ++i) sources.push_back(generate_sample(cfg.data, mix_seed(f.data_seed, i)));
  }

  const fs::path out(f.out);
  fs::create_directories(out);
  std::ofstream report(out / "report.jsonl");
  const ModelConfig mc = model.config();
  const FrameLayout layout = mc.layout();
  auto score = [](auto&& fn) -> nlohmann::json {
    try {
      return double(fn());
    } catch (const Error&) {
      return nullptr;
    }
  };
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const SyntheticSample& src = sources[i];
    const AssembledSample a = assemble(task, src);
    const std::uint64_t seed = mix_seed(cfg.seed, i);
    const SampleResult res = euler_sample(model, a.input, cfg.sampler, seed);
    Tensor video({layout.video_len(), mc.channels}), audio({layout.audio_len(), mc.channels});
    std::copy_n(res.video.data() + mc.video_tokens * mc.channels, video.size(), video.data());
    std::copy_n(res.audio.data() + mc.audio_tokens * mc.channels, audio.size(), audio.data());
    const std::string stem = "sample_" + std::to_string(i);
    save_tensor((out / (stem + "_video.uavt")).string(), video);
    save_tensor((out / (stem + "_audio.uavt")).string(), audio);

    std::vector<Real> gen_env(layout.audio_len()), src_env(layout.audio_len());
    for (std::size_t r = 0; r < layout.audio_len(); ++r) {
      gen_env[r] = audio.at(r, 0);
      src_env[r] = src.audio.at(r, 0);
    }
    nlohmann::json j;
    j["index"] = i;
    j["task"] = to_string(task);
    j["seed"] = seed;
    j["s_v"] = cfg.sampler.s_v;
    j["s_a"] = cfg.sampler.s_a;
    j["steps"] = cfg.sampler.steps;
    j["consistency"] = score([&] { return consistency_score(video, audio, layout); });
    j["video_vs_source_trace"] = score([&] { return consistency_score(video, src.audio, layout); });
    j["audio_vs_source_trace"] = score([&] { return pearson(gen_env, src_env); });
    j["video_file"] = stem + "_video.uavt";
    j["audio_file"] = stem + "_audio.uavt";

    if (f.dump_masks) {
      JointInput final_in = a.input;
      final_in.video.latents = res.video;
      final_in.audio.latents = res.audio;
      const Prediction p = model.joint_forward(final_in);
      nlohmann::json files = nlohmann::json::array();
      for (std::size_t l = 0; l < p.masks.size(); ++l) {
        const std::string name = stem + "_mask" + std::to_string(l) + ".uavt";
        save_tensor((out / name).string(), p.masks[l].reshaped({layout.frames, layout.video_tokens}));
        files.push_back(name);
      }
      j["mask_files"] = files;
    }
    report << j.dump() << "\n";
    std::cout << j.dump() << std::endl;
  }
  return 0;
}

int cmd_check(const Globals& g, bool corrupt, std::optional<double> tol) {
  CheckOptions opt;
  opt.seed = g.seed.value_or(0);
  opt.corrupt_output_init = corrupt;
  if (tol) opt.grad_tol = Real(*tol);
  std::size_t failed = 0;
  run_checks(opt, [&](const CheckResult& r) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << std::endl;
    failed += r.pass ? 0 : 1;
  });
  std::cout << (failed ? std::to_string(failed) + " check(s) failed" : std::string("all checks passed")) << std::endl;
  return failed ? 1 : 0;
}

int cmd_ablate(const Globals& g, const std::string& cells, const std::string& seeds, const std::string& out,
               bool write_runs) {
  RunConfig cfg = resolve_config(g);
  if (!seeds.empty()) set_config_value(cfg, "ablate.seeds", seeds);
  AblateOptions opt;
  opt.cells = select_cells(cells);
  opt.write_runs = write_runs;
  opt.log = &std::cerr;
  const fs::path csv = out.empty() ? fs::path(cfg.out_dir) / "ablation.csv" : fs::path(out);
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream f(csv);
  f << ablation_header() << "\n";
  opt.on_row = [&](const AblationRow& r) { f << format_ablation(r) << std::endl; };
  const auto rows = run_ablation(cfg, opt);
  if (!f) throw Error(ErrorCode::kIo, "cannot write '" + csv.string() + "'");
  std::cout << std::left << std::setw(26) << "cell" << std::setw(10) << "mean" << std::setw(10) << "min"
            << std::setw(10) << "max" << "runs\n";
  for (const auto& s : summarize(rows)) {
    std::cout << std::left << std::setw(26) << s.cell << std::setw(10) << std::setprecision(4) << s.mean
              << std::setw(10) << s.min << std::setw(10) << s.max << s.runs << "\n";
  }
  std::cout << "table written to " << csv.string() << std::endl;
  return 0;
}

int cmd_plot(const std::string& input, std::string out, const std::string& title, std::size_t smooth) {
  std::string header;
  {
    std::ifstream f(input);
    if (!f) throw Error(ErrorCode::kIo, "cannot read '" + input + "'");
    std::getline(f, header);
  }
  PlotOptions opt;
  opt.title = title;
  opt.smooth = smooth;
  if (out.empty()) out = fs::path(input).replace_extension(".svg").string();
  if (header == metrics_header()) {
    write_text(out, training_curves_svg(read_metrics(input), opt));
  } else if (header == ablation_header()) {
    write_text(out, ablation_bars_svg(read_ablation(input), opt));
  } else {
    throw Error(ErrorCode::kFormat, "'" + input + "' is neither a metrics nor an ablation table");
  }
  std::cout << "wrote " << out << std::endl;
  return 0;
}

int cmd_gen_data(const Globals& g, std::size_t count, const std::string& out) {
  const RunConfig cfg = resolve_config(g);
  std::vector<SyntheticSample> samples;
  for (std::size_t i = 0; i < count; ++i) samples.push_back(generate_sample(cfg.data, mix_seed(cfg.seed, i)));
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_shard(out, to_text(cfg), samples);
  std::cout << "wrote " << count << " samples to " << out << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dualdit: dual-branch joint audio-video diffusion on synthetic data"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--threads", g.threads, "Worker threads");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, fixed reduction order");
  app.add_option("-c,--config", g.config, "key = value config file");

  auto overrides = [&](CLI::App* sub) { sub->add_option("overrides", g.overrides, "key=value config overrides"); };

  std::string resume, init;
  std::uint64_t stop_after = 0;
  bool quiet = false;
  std::size_t log_every = 50;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--init", init, "Initialize parameters from a checkpoint");
  train->add_option("--stop-after", stop_after, "Stop after this many total steps");
  train->add_option("--log-every", log_every, "Log every N steps");
  train->add_flag("-q,--quiet", quiet, "No progress output");
  overrides(train);

  SampleFlags sf;
  auto* sample = app.add_subcommand("sample", "Sample from a checkpoint");
  sample->add_option("checkpoint", sf.checkpoint, "Checkpoint file")->required();
  sample->add_option("--task", sf.task, "JointGen, JointGenRefAudio, JointContinuation, V2ADubbing, A2VSynthesis");
  sample->add_option("--s-v", sf.s_v, "Video guidance scale");
  sample->add_option("--s-a", sf.s_a, "Audio guidance scale");
  sample->add_option("--steps", sf.steps, "Euler steps");
  sample->add_option("-n,--count", sf.count, "Number of samples");
  sample->add_option("-o,--out", sf.out, "Output directory");
  sample->add_option("--shard", sf.shard, "Take conditions from a dataset shard");
  sample->add_option("--data-seed", sf.data_seed, "Seed of generated conditions");
  sample->add_flag("--dump-masks", sf.dump_masks, "Write predicted face masks");
  overrides(sample);

  bool corrupt = false;
  std::optional<double> grad_tol;
  auto* check = app.add_subcommand("check", "Run the invariant suite");
  check->add_flag("--corrupt-output-init", corrupt, "Negative control: nonzero aligner output projections");
  check->add_option("--grad-tol", grad_tol, "Relative gradient tolerance");

  std::string cells, seeds, ablate_out;
  bool write_runs = false;
  auto* ablate = app.add_subcommand("ablate", "Train the interaction ablation matrix");
  ablate->add_option("--cells", cells, "Comma-separated cells, e.g. ATI/ATI:decaying,disabled");
  ablate->add_option("--seeds", seeds, "Comma-separated seeds");
  ablate->add_option("-o,--out", ablate_out, "Output CSV");
  ablate->add_flag("--write-runs", write_runs, "Keep per-run metrics and checkpoints");
  overrides(ablate);

  std::string plot_in, plot_out, title;
  std::size_t smooth = 25;
  auto* plot = app.add_subcommand("plot", "Render a metrics or ablation CSV as SVG");
  plot->add_option("input", plot_in, "metrics.csv or ablation.csv")->required();
  plot->add_option("-o,--out", plot_out, "Output SVG");
  plot->add_option("--title", title, "Figure title");
  plot->add_option("--smooth", smooth, "Moving-average window");

  std::size_t count = 64;
  std::string shard_out = "data/shard.uavd";
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset shard");
  gen->add_option("-n,--count", count, "Number of samples");
  gen->add_option("-o,--out", shard_out, "Shard path");
  overrides(gen);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(g, resume, init, stop_after, quiet, log_every);
    if (*sample) return cmd_sample(g, sf);
    if (*check) return cmd_check(g, corrupt, grad_tol);
    if (*ablate) return cmd_ablate(g, cells, seeds, ablate_out, write_runs);
    if (*plot) return cmd_plot(plot_in, plot_out, title, smooth);
    if (*gen) return cmd_gen_data(g, count, shard_out);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
