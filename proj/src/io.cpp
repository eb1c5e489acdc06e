// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

namespace dualdit {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::kFormat, "unexpected end of file");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), std::streamsize(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (std::uint64_t(1) << 32)) throw Error(ErrorCode::kFormat, "string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), std::streamsize(n));
  if (!in) throw Error(ErrorCode::kFormat, "unexpected end of file");
  return s;
}

void put_magic(std::ostream& out, const char* magic) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char* magic) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) {
    throw Error(ErrorCode::kFormat, std::string("bad magic, expected ") + std::string(magic, 4));
  }
}

void put_values(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * sizeof(Real)));
}

void get_values(std::istream& in, Tensor& t, std::uint32_t dtype) {
  if (dtype == native_dtype()) {
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(Real)));
  } else if (dtype == kDtypeF32) {
    std::vector<float> tmp(t.size());
    in.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(tmp.size() * sizeof(float)));
    for (std::size_t i = 0; i < tmp.size(); ++i) t[i] = Real(tmp[i]);
  } else if (dtype == kDtypeF64) {
    std::vector<double> tmp(t.size());
    in.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(tmp.size() * sizeof(double)));
    for (std::size_t i = 0; i < tmp.size(); ++i) t[i] = Real(tmp[i]);
  } else {
    throw Error(ErrorCode::kFormat, "unknown dtype code " + std::to_string(dtype));
  }
  if (!in) throw Error(ErrorCode::kFormat, "truncated tensor data");
}

void put_shape(std::ostream& out, const Shape& s) {
  put<std::uint64_t>(out, s.size());
  for (auto d : s) put<std::uint64_t>(out, d);
}

Shape get_shape(std::istream& in) {
  const auto rank = get<std::uint64_t>(in);
  if (rank > 8) throw Error(ErrorCode::kFormat, "tensor rank out of range");
  Shape s(rank);
  std::uint64_t total = 1;
  for (auto& d : s) {
    d = get<std::uint64_t>(in);
    total *= d;
    if (d == 0 || total > (std::uint64_t(1) << 34)) throw Error(ErrorCode::kFormat, "tensor dims out of range");
  }
  return s;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot read '" + path + "'");
  return f;
}

void finish(std::ofstream& f, const std::string& path) {
  f.flush();
  if (!f) throw Error(ErrorCode::kIo, "write failed for '" + path + "'");
}

}  // namespace

std::uint32_t native_dtype() { return std::is_same_v<Real, float> ? kDtypeF32 : kDtypeF64; }

void write_tensor(std::ostream& out, const Tensor& t) {
  put_magic(out, "UAVT");
  put<std::uint32_t>(out, native_dtype());
  put_shape(out, t.shape());
  put_values(out, t);
}

Tensor read_tensor(std::istream& in) {
  expect_magic(in, "UAVT");
  const auto dtype = get<std::uint32_t>(in);
  Tensor t(get_shape(in));
  get_values(in, t, dtype);
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  auto f = open_out(path);
  write_tensor(f, t);
  finish(f, path);
}

Tensor load_tensor(const std::string& path) {
  auto f = open_in(path);
  return read_tensor(f);
}

void save_checkpoint(const std::string& path, const std::string& config_text, const ParameterStore& params,
                     const AdamW& optimizer, std::uint64_t step) {
  auto f = open_out(path);
  put_magic(f, "UAVG");
  put<std::uint32_t>(f, kCheckpointVersion);
  put<std::uint32_t>(f, native_dtype());
  put_string(f, config_text);
  put<std::uint64_t>(f, params.size());
  for (const auto& p : params) {
    put_string(f, p.name);
    put_shape(f, p.value.shape());
    put_values(f, p.value);
  }
  put<std::uint64_t>(f, optimizer.steps());
  const bool has_state = optimizer.first_moment().size() == params.size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    put_values(f, has_state ? optimizer.first_moment()[i] : Tensor(params[i].value.shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    put_values(f, has_state ? optimizer.second_moment()[i] : Tensor(params[i].value.shape()));
  }
  put<std::uint64_t>(f, step);
  finish(f, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto f = open_in(path);
  expect_magic(f, "UAVG");
  const auto version = get<std::uint32_t>(f);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto dtype = get<std::uint32_t>(f);
  Checkpoint ck;
  ck.config_text = get_string(f);
  const auto count = get<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(f);
    Tensor t(get_shape(f));
    get_values(f, t, dtype);
    ck.params.add(std::move(name), std::move(t));
  }
  ck.optimizer_steps = get<std::uint64_t>(f);
  for (auto* moments : {&ck.first_moment, &ck.second_moment}) {
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      Tensor t(ck.params[i].value.shape());
      get_values(f, t, dtype);
      moments->push_back(std::move(t));
    }
  }
  ck.step = get<std::uint64_t>(f);
  return ck;
}

void restore_parameters(ParameterStore& store, const ParameterStore& saved) {
  if (store.size() != saved.size()) {
    throw Error(ErrorCode::kFormat, "checkpoint has " + std::to_string(saved.size()) + " parameters, model has " +
                                        std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].name != saved[i].name || store[i].value.shape() != saved[i].value.shape()) {
      throw Error(ErrorCode::kFormat, "checkpoint parameter '" + saved[i].name + "' " +
                                          shape_str(saved[i].value.shape()) + " does not match '" + store[i].name +
                                          "' " + shape_str(store[i].value.shape()));
    }
    store[i].value = saved[i].value;
  }
}

void save_shard(const std::string& path, const std::string& config_text, const std::vector<SyntheticSample>& samples) {
  auto f = open_out(path);
  put_magic(f, "UAVD");
  put<std::uint32_t>(f, kShardVersion);
  put_string(f, config_text);
  put<std::uint64_t>(f, samples.size());
  for (const auto& s : samples) {
    for (const Tensor* t : {&s.video, &s.audio, &s.video_ref, &s.audio_ref, &s.gt_mask}) write_tensor(f, *t);
    write_tensor(f, Tensor({s.trace.size()}, s.trace));
    put<std::uint64_t>(f, s.symbols.size());
    for (int sym : s.symbols) put<std::int32_t>(f, sym);
    put<std::int32_t>(f, s.style);
  }
  finish(f, path);
}

std::vector<SyntheticSample> load_shard(const std::string& path, const DataConfig& cfg, std::string* config_text) {
  auto f = open_in(path);
  expect_magic(f, "UAVD");
  const auto version = get<std::uint32_t>(f);
  if (version != kShardVersion) throw Error(ErrorCode::kFormat, "unsupported shard version " + std::to_string(version));
  std::string text = get_string(f);
  if (config_text) *config_text = std::move(text);
  const auto count = get<std::uint64_t>(f);
  std::vector<SyntheticSample> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    SyntheticSample s;
    s.config = cfg;
    for (Tensor* t : {&s.video, &s.audio, &s.video_ref, &s.audio_ref, &s.gt_mask}) *t = read_tensor(f);
    const Tensor trace = read_tensor(f);
    s.trace.assign(trace.values().begin(), trace.values().end());
    const auto n = get<std::uint64_t>(f);
    if (n > (1u << 20)) throw Error(ErrorCode::kFormat, "symbol count out of range");
    s.symbols.resize(n);
    for (auto& sym : s.symbols) sym = get<std::int32_t>(f);
    s.style = get<std::int32_t>(f);
    const std::size_t T = cfg.frames, c = cfg.channels;
    if (s.video.shape() != Shape{T * cfg.video_tokens, c} || s.audio.shape() != Shape{T * cfg.audio_tokens, c} ||
        s.video_ref.shape() != Shape{cfg.video_tokens, c} || s.audio_ref.shape() != Shape{cfg.audio_tokens, c} ||
        s.gt_mask.size() != T * cfg.video_tokens || s.trace.size() != T || s.symbols.size() != T) {
      throw Error(ErrorCode::kLayout, "shard sample " + std::to_string(i) + " does not match the data config");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dualdit
