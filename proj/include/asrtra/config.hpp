#pragma once

// Experiment configuration: defaults, a TOML-subset file reader, per-leaf
// overrides, validation, and a canonical form for hashing.
//
// Supported file syntax: `[section]` headers, `key = value` lines, `#`
// comments; values are integers, floats (including inf), booleans, or
// double-quoted strings. Keys are addressed as `section.key`.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "asrtra/corpus.hpp"
#include "asrtra/error.hpp"
#include "asrtra/model.hpp"
#include "asrtra/optim.hpp"
#include "asrtra/pretrain.hpp"
#include "asrtra/reward.hpp"
#include "asrtra/rng.hpp"
#include "asrtra/signal.hpp"
#include "asrtra/tta.hpp"

namespace asrtra::config {

struct EvalConfig {
  std::size_t subset_k = 100;
  std::size_t n_seeds = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  corpus::CorpusConfig corpus;
  signal::FrontendConfig frontend;
  model::ModelConfig model;
  model::PretrainConfig pretrain;
  reward::RewardModelConfig reward_model;
  reward::ContrastiveConfig reward_train;
  reward::RewardConfig reward;
  tta::AdaptationConfig adapt;
  std::size_t prompt_len = 4;
  double prompt_std = 0.02;
  EvalConfig eval;
};

// ---------------------------------------------------------------------------
// Value parsing

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(const std::string& key, const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  if (!v.empty() && (v.front() == '"' || v.back() == '"')) throw ConfigError(key, "unterminated string");
  return v;
}

inline double parse_double(const std::string& key, const std::string& raw) {
  const auto v = unquote(key, raw);
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + raw + "'");
  }
  if (pos != v.size()) throw ConfigError(key, "expected a number, got '" + raw + "'");
  return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& raw) {
  const auto v = unquote(key, raw);
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw ConfigError(key, "expected a non-negative integer, got '" + raw + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key, "integer out of range: '" + raw + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const auto v = unquote(key, raw);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key, "expected true or false, got '" + raw + "'");
}

inline std::string fmt_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", x);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Leaf registry

struct Leaf {
  std::string key;
  std::function<std::string()> get;          // canonical text
  std::function<void(const std::string&)> set;  // from raw text
};

namespace detail {

inline Leaf size_leaf(std::string key, std::size_t& v) {
  return {key, [&v] { return std::to_string(v); },
          [&v, key](const std::string& s) { v = static_cast<std::size_t>(parse_uint(key, s)); }};
}

inline Leaf u64_leaf(std::string key, std::uint64_t& v) {
  return {key, [&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_uint(key, s); }};
}

inline Leaf double_leaf(std::string key, double& v) {
  return {key, [&v] { return fmt_double(v); }, [&v, key](const std::string& s) { v = parse_double(key, s); }};
}

inline Leaf bool_leaf(std::string key, bool& v) {
  return {key, [&v] { return v ? std::string("true") : std::string("false"); },
          [&v, key](const std::string& s) { v = parse_bool(key, s); }};
}

template <class E, class Parse, class Print>
Leaf enum_leaf(std::string key, E& v, Parse parse, Print print) {
  return {key, [&v, print] { return "\"" + std::string(print(v)) + "\""; },
          [&v, key, parse](const std::string& s) {
            try {
              v = parse(unquote(key, s));
            } catch (const ConfigError&) {
              throw;
            } catch (const std::exception& e) {
              throw ConfigError(key, e.what());
            }
          }};
}

}  // namespace detail

/// Every configurable leaf, sorted by key. Leaves reference `cfg`.
inline std::vector<Leaf> leaves(ExperimentConfig& cfg) {
  using namespace detail;
  auto noise_parse = [](const std::string& s) { return signal::parse_noise_kind(s); };
  auto noise_print = [](signal::NoiseKind k) { return signal::to_string(k); };
  auto opt_parse = [](const std::string& s) { return optim::parse_kind(s); };
  auto opt_print = [](optim::Kind k) { return optim::to_string(k); };
  auto mode_parse = [](const std::string& s) { return reward::parse_reward_mode(s); };
  auto mode_print = [](reward::RewardMode m) { return reward::to_string(m); };
  std::vector<Leaf> out{
      u64_leaf("seed", cfg.seed),
      // corpus
      size_leaf("corpus.n_train", cfg.corpus.n_train),
      size_leaf("corpus.n_test", cfg.corpus.n_test),
      size_leaf("corpus.min_len", cfg.corpus.min_len),
      size_leaf("corpus.max_len", cfg.corpus.max_len),
      enum_leaf("corpus.noise_kind", cfg.corpus.noise.kind, noise_parse, noise_print),
      double_leaf("corpus.snr_db", cfg.corpus.noise.snr_db),
      // frontend
      size_leaf("frontend.window", cfg.frontend.window),
      size_leaf("frontend.hop", cfg.frontend.hop),
      size_leaf("frontend.n_mels", cfg.frontend.n_mels),
      double_leaf("frontend.f_min", cfg.frontend.f_min),
      double_leaf("frontend.f_max", cfg.frontend.f_max),
      double_leaf("frontend.floor", cfg.frontend.floor),
      // transcriber
      size_leaf("model.d_model", cfg.model.d_model),
      size_leaf("model.n_heads", cfg.model.n_heads),
      size_leaf("model.d_ff", cfg.model.d_ff),
      size_leaf("model.enc_layers", cfg.model.enc_layers),
      size_leaf("model.dec_layers", cfg.model.dec_layers),
      double_leaf("model.input_range", cfg.model.input_range),
      // pretraining
      enum_leaf("pretrain.optimizer", cfg.pretrain.optimizer.kind, opt_parse, opt_print),
      double_leaf("pretrain.lr", cfg.pretrain.optimizer.lr),
      double_leaf("pretrain.momentum", cfg.pretrain.optimizer.momentum),
      double_leaf("pretrain.clip_norm", cfg.pretrain.optimizer.clip_norm),
      double_leaf("pretrain.lr_decay", cfg.pretrain.lr_decay),
      size_leaf("pretrain.batch_size", cfg.pretrain.batch_size),
      size_leaf("pretrain.max_epochs", cfg.pretrain.max_epochs),
      double_leaf("pretrain.target_exact_match", cfg.pretrain.target_exact_match),
      double_leaf("pretrain.prefix_prob", cfg.pretrain.prefix_prob),
      size_leaf("pretrain.prefix_len", cfg.pretrain.prefix_len),
      // reward model and its training
      size_leaf("reward.width", cfg.reward_model.width),
      size_leaf("reward.n_heads", cfg.reward_model.n_heads),
      size_leaf("reward.d_ff", cfg.reward_model.d_ff),
      size_leaf("reward.audio_layers", cfg.reward_model.audio_layers),
      size_leaf("reward.text_layers", cfg.reward_model.text_layers),
      size_leaf("reward.embed_dim", cfg.reward_model.embed_dim),
      double_leaf("reward.init_temperature", cfg.reward_model.init_temperature),
      double_leaf("reward.lr", cfg.reward_train.optimizer.lr),
      size_leaf("reward.batch_size", cfg.reward_train.batch_size),
      size_leaf("reward.max_epochs", cfg.reward_train.max_epochs),
      double_leaf("reward.noisy_fraction", cfg.reward_train.noisy_fraction),
      double_leaf("reward.target_retrieval", cfg.reward_train.target_retrieval),
      enum_leaf("reward.mode", cfg.reward.mode, mode_parse, mode_print),
      double_leaf("reward.lm_weight", cfg.reward.lm_weight),
      double_leaf("reward.empty_penalty", cfg.reward.empty_penalty),
      // adaptation
      size_leaf("adapt.n_samples", cfg.adapt.n_samples),
      double_leaf("adapt.temp_low", cfg.adapt.temp_low),
      double_leaf("adapt.temp_high", cfg.adapt.temp_high),
      double_leaf("adapt.eta1", cfg.adapt.eta1),
      double_leaf("adapt.eta2", cfg.adapt.eta2),
      size_leaf("adapt.steps", cfg.adapt.steps),
      bool_leaf("adapt.include_baseline_decode_in_mean", cfg.adapt.include_baseline_decode_in_mean),
      bool_leaf("adapt.include_baseline_decode_in_loss", cfg.adapt.include_baseline_decode_in_loss),
      bool_leaf("adapt.use_prompt", cfg.adapt.use_prompt),
      bool_leaf("adapt.finetune", cfg.adapt.finetune),
      bool_leaf("adapt.freeze_encoder", cfg.adapt.freeze_encoder),
      size_leaf("adapt.max_len", cfg.adapt.max_len),
      size_leaf("adapt.prompt_len", cfg.prompt_len),
      double_leaf("adapt.prompt_std", cfg.prompt_std),
      // evaluation
      size_leaf("eval.subset_k", cfg.eval.subset_k),
      size_leaf("eval.n_seeds", cfg.eval.n_seeds),
  };
  std::sort(out.begin(), out.end(), [](const Leaf& a, const Leaf& b) { return a.key < b.key; });
  return out;
}

/// Sets one leaf by key; unknown keys are rejected.
inline void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
  for (auto& leaf : leaves(cfg))
    if (leaf.key == key) {
      leaf.set(raw);
      return;
    }
  throw ConfigError(key, "unknown configuration key");
}

/// Parses the TOML subset into ordered (key, raw value) pairs.
inline std::vector<std::pair<std::string, std::string>> parse_toml(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where, "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where, "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where, "expected key = value");
    out.emplace_back(section.empty() ? key : section + "." + key, value);
  }
  return out;
}

inline void apply_toml(ExperimentConfig& cfg, const std::string& text) {
  for (const auto& [k, v] : parse_toml(text)) set_value(cfg, k, v);
}

inline void load_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_toml(cfg, ss.str());
}

/// Canonical TOML rendering: top-level leaves, then one block per section
/// in name order, leaves in declaration order.
inline std::string canonical(const ExperimentConfig& cfg) {
  auto copy = cfg;
  std::map<std::string, std::string> sections;
  for (auto& leaf : leaves(copy)) {
    const auto dot = leaf.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : leaf.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? leaf.key : leaf.key.substr(dot + 1);
    sections[sec] += name + " = " + leaf.get() + "\n";
  }
  std::string out;
  for (const auto& [sec, body] : sections) out += sec.empty() ? body : "\n[" + sec + "]\n" + body;
  return out;
}

inline std::string config_hash(const ExperimentConfig& cfg) { return fmt::format("{:016x}", fnv1a(canonical(cfg))); }

/// Propagates shared settings and derives per-module seeds from the global seed.
inline void resolve(ExperimentConfig& cfg) {
  cfg.model.n_mels = cfg.frontend.n_mels;
  cfg.reward_model.n_mels = cfg.frontend.n_mels;
  cfg.model.vocab = model::kVocab;
  cfg.corpus.seed = cfg.seed;
  cfg.corpus.noise.seed = derive_seed(cfg.seed, "noise");
  cfg.pretrain.seed = derive_seed(cfg.seed, "pretrain");
  cfg.pretrain.max_len = cfg.adapt.max_len;
  cfg.pretrain.prefix_std = cfg.prompt_std;
  cfg.reward_train.seed = derive_seed(cfg.seed, "reward-train");
  cfg.adapt.reward = cfg.reward;
  cfg.adapt.seed = derive_seed(cfg.seed, "adapt");
}

inline void validate(const ExperimentConfig& cfg) {
  auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (cfg.corpus.n_train < 1) throw ConfigError("corpus.n_train", "must be >= 1");
  if (cfg.corpus.n_test < 1) throw ConfigError("corpus.n_test", "must be >= 1");
  if (cfg.corpus.min_len < 1 || cfg.corpus.min_len > cfg.corpus.max_len)
    throw ConfigError("corpus.min_len", "must satisfy 1 <= min_len <= max_len");
  if (cfg.corpus.max_len > 24) throw ConfigError("corpus.max_len", "must be <= 24");
  if (cfg.corpus.max_len + 1 > cfg.adapt.max_len) throw ConfigError("adapt.max_len", "must exceed corpus.max_len");
  if (std::isnan(cfg.corpus.noise.snr_db)) throw ConfigError("corpus.snr_db", "must be a number");
  if (cfg.frontend.window < 2 || (cfg.frontend.window & (cfg.frontend.window - 1)) != 0)
    throw ConfigError("frontend.window", "must be a power of two >= 2");
  if (cfg.frontend.hop < 1 || cfg.frontend.hop > cfg.frontend.window)
    throw ConfigError("frontend.hop", "must lie in [1, frontend.window]");
  if (cfg.frontend.n_mels < 1) throw ConfigError("frontend.n_mels", "must be >= 1");
  if (!(cfg.frontend.f_min >= 0.0 && cfg.frontend.f_min < cfg.frontend.f_max &&
        cfg.frontend.f_max <= signal::kSampleRate / 2.0))
    throw ConfigError("frontend.f_max", "need 0 <= f_min < f_max <= 4000");
  if (!(cfg.frontend.floor > 0.0)) throw ConfigError("frontend.floor", "must be > 0");
  auto m = cfg.model;
  m.n_mels = cfg.frontend.n_mels;
  model::validate(m);
  if (!(cfg.model.input_range > 0.0)) throw ConfigError("model.input_range", "must be > 0");
  if (!(cfg.pretrain.optimizer.lr > 0.0)) throw ConfigError("pretrain.lr", "must be > 0");
  if (!in01(cfg.pretrain.optimizer.momentum) || cfg.pretrain.optimizer.momentum == 1.0)
    throw ConfigError("pretrain.momentum", "must lie in [0, 1)");
  if (!(cfg.pretrain.lr_decay > 0.0 && cfg.pretrain.lr_decay <= 1.0))
    throw ConfigError("pretrain.lr_decay", "must lie in (0, 1]");
  if (cfg.pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size", "must be >= 1");
  if (cfg.pretrain.max_epochs < 1) throw ConfigError("pretrain.max_epochs", "must be >= 1");
  if (!in01(cfg.pretrain.target_exact_match)) throw ConfigError("pretrain.target_exact_match", "must lie in [0, 1]");
  if (!in01(cfg.pretrain.prefix_prob)) throw ConfigError("pretrain.prefix_prob", "must lie in [0, 1]");
  if (cfg.reward_model.width % cfg.reward_model.n_heads != 0 || cfg.reward_model.n_heads < 1)
    throw ConfigError("reward.n_heads", "must divide reward.width");
  if (cfg.reward_model.embed_dim < 1) throw ConfigError("reward.embed_dim", "must be >= 1");
  if (!(cfg.reward_model.init_temperature > 0.0)) throw ConfigError("reward.init_temperature", "must be > 0");
  if (!(cfg.reward_train.optimizer.lr > 0.0)) throw ConfigError("reward.lr", "must be > 0");
  if (cfg.reward_train.batch_size < 2) throw ConfigError("reward.batch_size", "must be >= 2");
  if (cfg.reward_train.batch_size > cfg.corpus.n_train)
    throw ConfigError("reward.batch_size", "must not exceed corpus.n_train");
  if (cfg.reward_train.max_epochs < 1) throw ConfigError("reward.max_epochs", "must be >= 1");
  if (!in01(cfg.reward_train.noisy_fraction)) throw ConfigError("reward.noisy_fraction", "must lie in [0, 1]");
  if (!in01(cfg.reward_train.target_retrieval)) throw ConfigError("reward.target_retrieval", "must lie in [0, 1]");
  reward::validate(cfg.reward);
  auto a = cfg.adapt;
  a.reward = cfg.reward;
  tta::validate(a);
  if (cfg.prompt_len < 1) throw ConfigError("adapt.prompt_len", "must be >= 1");
  if (!(cfg.prompt_std >= 0.0)) throw ConfigError("adapt.prompt_std", "must be >= 0");
  if (cfg.eval.n_seeds < 1) throw ConfigError("eval.n_seeds", "must be >= 1");
  if (cfg.eval.subset_k < 1) throw ConfigError("eval.subset_k", "must be >= 1");
}

}  // namespace asrtra::config
