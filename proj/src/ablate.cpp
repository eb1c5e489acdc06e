// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/ablate.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "dualdit/train.h"

namespace dualdit {

std::string AblationCell::name() const {
  if (!interaction) return "disabled";
  return std::string(to_string(a2v)) + "/" + to_string(v2a) + ":" + to_string(fam);
}

std::vector<AblationCell> ablation_matrix() {
  const std::pair<Topology, Topology> pairs[] = {{Topology::kSGI, Topology::kSGI},
                                                 {Topology::kSTI, Topology::kSTI},
                                                 {Topology::kSTI, Topology::kATI},
                                                 {Topology::kATI, Topology::kSTI},
                                                 {Topology::kATI, Topology::kATI}};
  const FamMode modes[] = {FamMode::kOff, FamMode::kUnsupervised, FamMode::kFixed, FamMode::kDecaying};
  std::vector<AblationCell> cells;
  for (const auto& [a2v, v2a] : pairs) {
    for (FamMode m : modes) cells.push_back({true, a2v, v2a, m});
  }
  AblationCell off;
  off.interaction = false;
  off.fam = FamMode::kOff;
  cells.push_back(off);
  return cells;
}

AblationCell parse_cell(const std::string& name) {
  AblationCell c;
  if (name == "disabled") {
    c.interaction = false;
    c.fam = FamMode::kOff;
    return c;
  }
  const auto slash = name.find('/');
  if (slash == std::string::npos) throw Error(ErrorCode::kConfig, "bad ablation cell '" + name + "'");
  const auto colon = name.find(':', slash);
  c.a2v = parse_topology(name.substr(0, slash));
  c.v2a = parse_topology(name.substr(slash + 1, colon == std::string::npos ? std::string::npos : colon - slash - 1));
  if (colon != std::string::npos) c.fam = parse_fam_mode(name.substr(colon + 1));
  return c;
}

std::vector<AblationCell> select_cells(const std::string& filter) {
  if (filter.empty() || filter == "all") return ablation_matrix();
  std::vector<AblationCell> cells;
  std::stringstream ss(filter);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) cells.push_back(parse_cell(item));
  }
  if (cells.empty()) throw Error(ErrorCode::kConfig, "no ablation cells selected");
  return cells;
}

RunConfig cell_config(const RunConfig& base, const AblationCell& cell, std::uint64_t seed) {
  RunConfig c = base;
  c.seed = seed;
  c.threads = 1;
  c.train.stage2_steps = base.train.total_steps();
  c.train.stage1_steps = 0;
  c.train.stage3_steps = 0;
  c.train.task = TaskKind::kJointGen;
  c.interaction.enabled = cell.interaction;
  c.interaction.a2v = cell.a2v;
  c.interaction.v2a = cell.v2a;
  c.fam = cell.interaction ? cell.fam : FamMode::kOff;
  return c;
}

std::string ablation_header() { return "cell,a2v,v2a,fam,seed,consistency,loss_video,loss_audio,seconds"; }

std::string format_ablation(const AblationRow& r) {
  std::ostringstream ss;
  ss.precision(9);
  const bool on = r.cell.interaction;
  ss << r.cell.name() << "," << (on ? to_string(r.cell.a2v) : "-") << "," << (on ? to_string(r.cell.v2a) : "-") << ","
     << to_string(r.cell.fam) << "," << r.seed << "," << r.consistency << "," << r.loss_video << "," << r.loss_audio
     << ",";
  ss.precision(4);
  ss << r.seconds;
  return ss.str();
}

std::vector<AblationRow> read_ablation(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot read ablation table '" + path + "'");
  std::string line;
  std::getline(f, line);
  if (line != ablation_header()) throw Error(ErrorCode::kFormat, "unexpected ablation header in '" + path + "'");
  std::vector<AblationRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw Error(ErrorCode::kFormat, "bad ablation row '" + line + "'");
    AblationRow r;
    r.cell = parse_cell(cells[0]);
    r.seed = std::stoull(cells[4]);
    r.consistency = std::stod(cells[5]);
    r.loss_video = std::stod(cells[6]);
    r.loss_audio = std::stod(cells[7]);
    r.seconds = std::stod(cells[8]);
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::string slug(const AblationCell& c) {
  std::string s = c.name();
  std::replace(s.begin(), s.end(), '/', '-');
  std::replace(s.begin(), s.end(), ':', '_');
  return s;
}

AblationRow run_one(const RunConfig& base, const AblationCell& cell, std::uint64_t seed, bool write) {
  RunConfig cfg = cell_config(base, cell, seed);
  if (write) {
    cfg.out_dir = (std::filesystem::path(base.out_dir) / slug(cell) / ("seed" + std::to_string(seed))).string();
  }
  TrainOptions opt;
  opt.write_files = write;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = Trainer(cfg).run(opt);
  AblationRow row;
  row.cell = cell;
  row.seed = seed;
  row.consistency = res.final_consistency;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::size_t n = res.metrics.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  for (std::size_t i = n - tail; i < n; ++i) {
    row.loss_video += double(res.metrics[i].loss_video) / double(tail);
    row.loss_audio += double(res.metrics[i].loss_audio) / double(tail);
  }
  return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& base, const AblateOptions& opt) {
  base.validate();
  struct Job {
    AblationCell cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& c : opt.cells) {
    for (std::uint64_t s : base.ablate_seeds) jobs.push_back({c, s});
  }
  std::vector<AblationRow> rows(jobs.size());
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      rows[i] = run_one(base, jobs[i].cell, jobs[i].seed, opt.write_runs);
      std::lock_guard<std::mutex> lock(mu);
      if (opt.log) {
        *opt.log << rows[i].cell.name() << " seed " << rows[i].seed << ": consistency " << rows[i].consistency << " ("
                 << rows[i].seconds << " s)" << std::endl;
      }
      if (opt.on_row) opt.on_row(rows[i]);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(base.threads, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

std::vector<CellSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<CellSummary> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    const std::string name = r.cell.name();
    auto [it, fresh] = index.try_emplace(name, out.size());
    if (fresh) out.push_back({name, 0, r.consistency, r.consistency, 0});
    CellSummary& s = out[it->second];
    s.mean += r.consistency;
    s.min = std::min(s.min, r.consistency);
    s.max = std::max(s.max, r.consistency);
    ++s.runs;
  }
  for (auto& s : out) s.mean /= double(s.runs);
  return out;
}

}  // namespace dualdit
