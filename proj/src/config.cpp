// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace dualdit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

template <typename T>
std::string num(T v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error(ErrorCode::kConfig, "cannot format number");
  return std::string(buf, end);
}

template <typename T>
T parse_num(const std::string& key, const std::string& s) {
  T v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw Error(ErrorCode::kConfig, "key '" + key + "': cannot parse '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(ErrorCode::kConfig, "key '" + key + "': expected true or false, got '" + s + "'");
}

std::string str(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += num(v[i]);
  }
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define DD_SIZE(key, field)                                                                        \
  Key {                                                                                            \
    key, [](const RunConfig& c) { return num(c.field); },                                          \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_num<std::size_t>(k, v); } \
  }
#define DD_REAL(key, field)                                                                  \
  Key {                                                                                      \
    key, [](const RunConfig& c) { return num(c.field); },                                    \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_num<Real>(k, v); } \
  }
#define DD_U64(key, field)                                                                              \
  Key {                                                                                                 \
    key, [](const RunConfig& c) { return num(c.field); },                                               \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_num<std::uint64_t>(k, v); } \
  }
#define DD_BOOL(key, field)                                                                \
  Key {                                                                                    \
    key, [](const RunConfig& c) { return str(c.field); },                                  \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); } \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      DD_U64("seed", seed),
      DD_SIZE("threads", threads),
      Key{"out_dir", [](const RunConfig& c) { return c.out_dir; },
          [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      DD_SIZE("data.frames", data.frames),
      DD_SIZE("data.video_tokens", data.video_tokens),
      DD_SIZE("data.audio_tokens", data.audio_tokens),
      DD_SIZE("data.style_vocab", data.style_vocab),
      DD_SIZE("data.symbol_vocab", data.symbol_vocab),
      DD_REAL("data.trace_rho", data.trace_rho),
      DD_REAL("data.background_rho", data.background_rho),
      DD_SIZE("model.depth", model.depth),
      DD_SIZE("model.width", model.width),
      DD_SIZE("model.audio_width", model.audio_width),
      DD_SIZE("model.heads", model.heads),
      DD_SIZE("model.ff_mult", model.ff_mult),
      DD_BOOL("interaction.enabled", interaction.enabled),
      Key{"interaction.a2v", [](const RunConfig& c) { return std::string(to_string(c.interaction.a2v)); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.interaction.a2v = parse_topology(v); }},
      Key{"interaction.v2a", [](const RunConfig& c) { return std::string(to_string(c.interaction.v2a)); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.interaction.v2a = parse_topology(v); }},
      Key{"interaction.window", [](const RunConfig& c) { return num(c.interaction.window); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.interaction.window = parse_num<int>(k, v); }},
      DD_SIZE("interaction.heads", interaction.heads),
      Key{"interaction.layers",
          [](const RunConfig& c) { return c.interaction.layers.empty() ? std::string("all") : join(c.interaction.layers, ','); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.interaction.layers.clear();
            if (v == "all") return;
            for (const auto& part : split(v, ',')) c.interaction.layers.push_back(parse_num<std::size_t>(k, part));
          }},
      Key{"interaction.fam", [](const RunConfig& c) { return std::string(to_string(c.fam)); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.fam = parse_fam_mode(v); }},
      DD_SIZE("train.stage1_steps", train.stage1_steps),
      DD_SIZE("train.stage2_steps", train.stage2_steps),
      DD_SIZE("train.stage3_steps", train.stage3_steps),
      DD_SIZE("train.batch", train.batch),
      DD_REAL("train.lr", train.optim.lr),
      DD_REAL("train.weight_decay", train.optim.weight_decay),
      DD_REAL("train.clip_norm", train.optim.clip_norm),
      DD_REAL("train.lambda0", train.lambda0),
      DD_SIZE("train.decay_span", train.decay_span),
      Key{"train.timestep",
          [](const RunConfig& c) {
            return std::string(c.train.timestep == TimestepSampling::kUniform ? "uniform" : "logit_normal");
          },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "uniform") c.train.timestep = TimestepSampling::kUniform;
            else if (v == "logit_normal") c.train.timestep = TimestepSampling::kLogitNormal;
            else throw Error(ErrorCode::kConfig, "key '" + k + "': expected uniform or logit_normal");
          }},
      Key{"train.task", [](const RunConfig& c) { return std::string(to_string(c.train.task)); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.train.task = parse_task(v); }},
      Key{"tasks.ratios",
          [](const RunConfig& c) {
            std::string out;
            for (std::size_t i = 0; i < 5; ++i) out += (i ? ":" : "") + num(c.train.ratios[i]);
            return out;
          },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            const auto parts = split(v, ':');
            if (parts.size() != 5) throw Error(ErrorCode::kConfig, "key '" + k + "': expected five ratios a:b:c:d:e");
            for (std::size_t i = 0; i < 5; ++i) c.train.ratios[i] = parse_num<unsigned>(k, parts[i]);
          }},
      DD_SIZE("train.checkpoint_every", train.checkpoint_every),
      DD_SIZE("train.probe_every", train.probe_every),
      DD_SIZE("train.probe_count", train.probe_count),
      DD_U64("train.probe_seed", train.probe_seed),
      DD_SIZE("sampler.steps", sampler.steps),
      DD_REAL("sampler.s_v", sampler.s_v),
      DD_REAL("sampler.s_a", sampler.s_a),
      Key{"ablate.seeds", [](const RunConfig& c) { return join(c.ablate_seeds, ','); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.ablate_seeds.clear();
            for (const auto& part : split(v, ',')) c.ablate_seeds.push_back(parse_num<std::uint64_t>(k, part));
          }},
  };
  return table;
}

#undef DD_SIZE
#undef DD_REAL
#undef DD_U64
#undef DD_BOOL

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.channels = data.channels;
  m.depth = model.depth;
  m.frames = data.frames;
  m.video_tokens = data.video_tokens;
  m.audio_tokens = data.audio_tokens;
  m.video.width = model.width;
  m.video.heads = model.heads;
  m.video.ff_mult = model.ff_mult;
  m.video.vocab = data.style_vocab;
  m.video.max_text = 1;
  m.audio = m.video;
  m.audio.width = model.audio_width ? model.audio_width : model.width;
  m.audio.vocab = data.symbol_vocab;
  m.audio.max_text = data.frames;
  m.interaction = interaction;
  m.interaction.fam = fam != FamMode::kOff;
  return m;
}

MaskSchedule RunConfig::mask_schedule() const {
  MaskSchedule s;
  s.lambda0 = (fam == FamMode::kFixed || fam == FamMode::kDecaying) ? train.lambda0 : Real(0);
  s.decay = fam == FamMode::kDecaying;
  const std::size_t joint = train.joint_steps();
  s.total_steps = train.decay_span ? train.decay_span : (joint > 1 ? joint - 1 : 1);
  return s;
}

void RunConfig::validate() const {
  data.validate();
  model_config().validate();
  sampler.validate();
  if (train.batch == 0) throw Error(ErrorCode::kConfig, "train.batch must be >= 1");
  if (train.total_steps() == 0) throw Error(ErrorCode::kConfig, "no training steps configured");
  if (!(train.optim.lr > 0)) throw Error(ErrorCode::kConfig, "train.lr must be positive");
  if (!(train.lambda0 >= 0)) throw Error(ErrorCode::kConfig, "train.lambda0 must be >= 0");
  if (train.probe_count == 0) throw Error(ErrorCode::kConfig, "train.probe_count must be >= 1");
  if (threads == 0) throw Error(ErrorCode::kConfig, "threads must be >= 1");
  unsigned total = 0;
  for (unsigned r : train.ratios) total += r;
  if (total == 0) throw Error(ErrorCode::kConfig, "tasks.ratios are all zero");
  if (ablate_seeds.empty()) throw Error(ErrorCode::kConfig, "ablate.seeds is empty");
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Key& k : keys()) {
    if (key == k.name) {
      k.set(cfg, key, value);
      return;
    }
  }
  throw Error(ErrorCode::kConfig, "unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfig, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw Error(ErrorCode::kConfig, "line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    }
    try {
      set_config_value(cfg, key, value);
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace dualdit
