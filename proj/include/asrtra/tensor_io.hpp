#pragma once

// Versioned binary checkpoints.
//
// Layout (all integers little-endian):
//   magic   8 bytes  "ASRTRACK"
//   version u32
//   kind    str      (u32 length + bytes)
//   config  u32 count, then count x (str key, str value)
//   tensors u32 count, then count x (str name, u32 rank, rank x u64 dim, data as f64)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "asrtra/autodiff.hpp"
#include "asrtra/error.hpp"
#include "asrtra/model.hpp"
#include "asrtra/reward.hpp"

namespace asrtra::io {

inline constexpr char kMagic[8] = {'A', 'S', 'R', 'T', 'R', 'A', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, ad::TensorPtr>> tensors;

  const std::string& config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
      if (k == key) return v;
    throw FileError("checkpoint: missing config key '" + key + "'");
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  template <class T>
  T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FileError("checkpoint: truncated file");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  detail::Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.str(ck.kind);
  w.u32(static_cast<std::uint32_t>(ck.config.size()));
  for (const auto& [k, v] : ck.config) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (auto d : t->shape) w.u64(d);
    w.raw(t->data.data(), t->data.size() * sizeof(double));
  }
  return w.take();
}

inline Checkpoint deserialize(const std::string& bytes) {
  detail::Reader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw FileError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kVersion) throw FileError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = r.str();
  const auto nc = r.u32();
  for (std::uint32_t i = 0; i < nc; ++i) {
    auto k = r.str();
    auto v = r.str();
    ck.config.emplace_back(std::move(k), std::move(v));
  }
  const auto nt = r.u32();
  for (std::uint32_t i = 0; i < nt; ++i) {
    auto name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw FileError("checkpoint: implausible rank for tensor '" + name + "'");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      n *= d;
    }
    std::vector<double> data(n);
    r.raw(data.data(), n * sizeof(double));
    ck.tensors.emplace_back(std::move(name), ad::parameter(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FileError("checkpoint: trailing bytes");
  return ck;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("short write to " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Copies checkpoint tensors into `dst` by name, checking names and shapes.
inline void assign_tensors(const std::vector<std::pair<std::string, ad::TensorPtr>>& dst, const Checkpoint& ck) {
  if (dst.size() != ck.tensors.size())
    throw FileError("checkpoint: expected " + std::to_string(dst.size()) + " tensors, found " +
                    std::to_string(ck.tensors.size()));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto& [name, t] = dst[i];
    const auto& [cname, ct] = ck.tensors[i];
    if (name != cname) throw FileError("checkpoint: expected tensor '" + name + "', found '" + cname + "'");
    if (t->shape != ct->shape) throw FileError("checkpoint: shape mismatch for tensor '" + name + "'");
    t->data = ct->data;
  }
}

// ---------------------------------------------------------------------------
// Transcriber

inline Checkpoint to_checkpoint(const model::ModelParams& p) {
  const auto& c = p.cfg;
  Checkpoint ck;
  ck.kind = "transcriber";
  ck.config = {{"n_mels", std::to_string(c.n_mels)},       {"d_model", std::to_string(c.d_model)},
               {"n_heads", std::to_string(c.n_heads)},     {"d_ff", std::to_string(c.d_ff)},
               {"enc_layers", std::to_string(c.enc_layers)}, {"dec_layers", std::to_string(c.dec_layers)},
               {"vocab", std::to_string(c.vocab)},         {"alphabet", c.alphabet},
               {"input_range", fmt::format("{:.17g}", c.input_range)}};
  ck.tensors = p.named_tensors();
  return ck;
}

inline model::ModelParams model_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "transcriber") throw FileError("checkpoint: expected a transcriber, found '" + ck.kind + "'");
  model::ModelConfig c;
  auto num = [&](const char* k) { return static_cast<std::size_t>(std::stoull(ck.config_value(k))); };
  c.n_mels = num("n_mels");
  c.d_model = num("d_model");
  c.n_heads = num("n_heads");
  c.d_ff = num("d_ff");
  c.enc_layers = num("enc_layers");
  c.dec_layers = num("dec_layers");
  c.vocab = num("vocab");
  c.alphabet = ck.config_value("alphabet");
  c.input_range = std::stod(ck.config_value("input_range"));
  auto p = model::init_params(c, 0);
  assign_tensors(p.named_tensors(), ck);
  return p;
}

inline void save_model(const std::string& path, const model::ModelParams& p) { write_file(path, serialize(to_checkpoint(p))); }

inline model::ModelParams load_model(const std::string& path) { return model_from_checkpoint(deserialize(read_file(path))); }

// ---------------------------------------------------------------------------
// Reward model

inline Checkpoint to_checkpoint(const reward::RewardModelParams& p) {
  const auto& c = p.cfg;
  Checkpoint ck;
  ck.kind = "reward";
  ck.config = {{"n_mels", std::to_string(c.n_mels)},
               {"width", std::to_string(c.width)},
               {"n_heads", std::to_string(c.n_heads)},
               {"d_ff", std::to_string(c.d_ff)},
               {"audio_layers", std::to_string(c.audio_layers)},
               {"text_layers", std::to_string(c.text_layers)},
               {"embed_dim", std::to_string(c.embed_dim)},
               {"input_range", fmt::format("{:.17g}", c.input_range)},
               {"vocab", std::to_string(model::kVocab)},
               {"alphabet", std::string(signal::kAlphabet)}};
  ck.tensors = p.named_tensors();
  return ck;
}

inline reward::RewardModelParams reward_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "reward") throw FileError("checkpoint: expected a reward model, found '" + ck.kind + "'");
  reward::RewardModelConfig c;
  auto num = [&](const char* k) { return static_cast<std::size_t>(std::stoull(ck.config_value(k))); };
  c.n_mels = num("n_mels");
  c.width = num("width");
  c.n_heads = num("n_heads");
  c.d_ff = num("d_ff");
  c.audio_layers = num("audio_layers");
  c.text_layers = num("text_layers");
  c.embed_dim = num("embed_dim");
  c.input_range = std::stod(ck.config_value("input_range"));
  auto p = reward::init_reward_params(c, 0);
  assign_tensors(p.named_tensors(), ck);
  return p;
}

inline void save_reward(const std::string& path, const reward::RewardModelParams& p) {
  write_file(path, serialize(to_checkpoint(p)));
}

inline reward::RewardModelParams load_reward(const std::string& path) {
  return reward_from_checkpoint(deserialize(read_file(path)));
}

}  // namespace asrtra::io
