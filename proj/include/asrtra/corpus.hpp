#pragma once

// Corpus assembly and the JSON-lines corpus file format.

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "asrtra/error.hpp"
#include "asrtra/rng.hpp"
#include "asrtra/signal.hpp"

namespace asrtra::corpus {

using signal::NoiseKind;
using signal::NoiseSpec;
using signal::Waveform;

/// Fixed first-order Markov "language" over the alphabet. Each symbol has
/// four preferred successors; 10% of transitions are uniform. Shared by all
/// corpora so that train and test texts come from one distribution.
class TextModel {
 public:
  static constexpr std::uint64_t kLanguageSeed = 0x7a0e5eedULL;
  static constexpr double kUniformMix = 0.1;

  TextModel() {
    const std::size_t n = signal::kAlphabet.size();
    Rng rng(kLanguageSeed);
    constexpr std::array<double, 4> weights = {0.4, 0.3, 0.2, 0.1};
    for (std::size_t a = 0; a < n; ++a) {
      std::vector<int> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
      for (std::size_t i = n - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
      for (std::size_t b = 0; b < n; ++b) transition_[a][b] = kUniformMix / static_cast<double>(n);
      for (std::size_t r = 0; r < weights.size(); ++r)
        transition_[a][static_cast<std::size_t>(order[r])] += (1.0 - kUniformMix) * weights[r];
    }
  }

  double transition(int from, int to) const {
    return transition_[static_cast<std::size_t>(from)][static_cast<std::size_t>(to)];
  }

  std::string sample(Rng& rng, std::size_t length) const {
    std::string s;
    int prev = static_cast<int>(rng.uniform_int(0, 15));
    s.push_back(signal::kAlphabet[static_cast<std::size_t>(prev)]);
    while (s.size() < length) {
      const double u = rng.uniform();
      double cum = 0.0;
      int next = 15;
      for (int b = 0; b < 16; ++b) {
        cum += transition(prev, b);
        if (u < cum) {
          next = b;
          break;
        }
      }
      s.push_back(signal::kAlphabet[static_cast<std::size_t>(next)]);
      prev = next;
    }
    return s;
  }

 private:
  std::array<std::array<double, 16>, 16> transition_{};
};

struct Utterance {
  std::string id;
  std::string text;
  Waveform clean;
  std::optional<Waveform> noisy;
  NoiseKind noise_kind = NoiseKind::none;
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;  // voice seed

  bool operator==(const Utterance&) const = default;
};

struct Corpus {
  std::vector<Utterance> train;
  std::vector<Utterance> test;
};

struct CorpusConfig {
  std::size_t n_train = 2000;
  std::size_t n_test = 200;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  NoiseSpec noise{NoiseKind::gaussian, 10.0, 1};
  std::uint64_t seed = 1;
};

inline std::string utterance_id(std::string_view split, std::size_t i) {
  return fmt::format("{}-{:05d}", split, i);
}

/// Quantizes to the 9 significant digits used on disk so that in-memory
/// corpora and reloaded corpora are identical.
inline double quantize9(double v) {
  return std::strtod(fmt::format("{:.9g}", v).c_str(), nullptr);
}

inline void quantize(Waveform& w) {
  for (auto& v : w.samples) v = quantize9(v);
}

/// Noise seed used for one test utterance, given the corpus-level noise seed.
inline std::uint64_t utterance_noise_seed(std::uint64_t noise_seed, const std::string& id) {
  return derive_seed(noise_seed, id, "noise");
}

/// Sets the noisy waveform of `u` from its clean waveform under `noise`,
/// with a per-utterance noise seed; a clean spec clears it.
inline void apply_noise(Utterance& u, const NoiseSpec& noise) {
  u.noise_kind = noise.kind;
  u.snr_db = noise.snr_db;
  if (noise.is_clean()) {
    u.noise_kind = NoiseKind::none;
    u.snr_db = std::numeric_limits<double>::infinity();
    u.noisy.reset();
    return;
  }
  NoiseSpec spec = noise;
  spec.seed = utterance_noise_seed(noise.seed, u.id);
  u.noisy = signal::add_noise(u.clean, spec);
  quantize(*u.noisy);
}

/// Copy of `split` re-corrupted under `noise`.
inline std::vector<Utterance> with_noise(std::vector<Utterance> split, const NoiseSpec& noise) {
  for (auto& u : split) apply_noise(u, noise);
  return split;
}

/// Generates train (clean) and test (clean + noisy) splits.
/// Test texts never occur among the train texts.
inline Corpus build_corpus(const CorpusConfig& cfg) {
  if (cfg.n_train < 1 || cfg.n_test < 1) throw InputError("build_corpus: counts must be >= 1");
  if (cfg.min_len < 1 || cfg.max_len > 24 || cfg.min_len > cfg.max_len)
    throw InputError("build_corpus: text length range must lie within [1, 24]");
  const TextModel lang;
  Corpus c;
  std::set<std::string> train_texts;
  Rng text_rng(derive_seed(cfg.seed, "train-text"));
  for (std::size_t i = 0; i < cfg.n_train; ++i) {
    Utterance u;
    u.id = utterance_id("train", i);
    const auto len = static_cast<std::size_t>(text_rng.uniform_int(
        static_cast<std::int64_t>(cfg.min_len), static_cast<std::int64_t>(cfg.max_len)));
    u.text = lang.sample(text_rng, len);
    u.seed = derive_seed(cfg.seed, u.id, "voice");
    u.clean = signal::synthesize(u.text, u.seed);
    quantize(u.clean);
    train_texts.insert(u.text);
    c.train.push_back(std::move(u));
  }
  Rng test_rng(derive_seed(cfg.seed, "test-text"));
  for (std::size_t i = 0; i < cfg.n_test; ++i) {
    Utterance u;
    u.id = utterance_id("test", i);
    std::size_t attempts = 0;
    do {
      if (++attempts > 10000) throw InputError("build_corpus: cannot draw a test text disjoint from train");
      const auto len = static_cast<std::size_t>(test_rng.uniform_int(
          static_cast<std::int64_t>(cfg.min_len), static_cast<std::int64_t>(cfg.max_len)));
      u.text = lang.sample(test_rng, len);
    } while (train_texts.contains(u.text));
    u.seed = derive_seed(cfg.seed, u.id, "voice");
    u.clean = signal::synthesize(u.text, u.seed);
    quantize(u.clean);
    apply_noise(u, cfg.noise);
    c.test.push_back(std::move(u));
  }
  return c;
}

// ---------------------------------------------------------------------------
// File format: one flat JSON object per line.

namespace detail {
inline void append_samples(std::string& out, const std::vector<double>& xs) {
  out.push_back('[');
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out.push_back(',');
    fmt::format_to(std::back_inserter(out), "{:.9g}", xs[i]);
  }
  out.push_back(']');
}
}  // namespace detail

inline std::string to_json_line(const Utterance& u) {
  std::string out;
  out.reserve(16 * (u.clean.size() + (u.noisy ? u.noisy->size() : 0)) + 256);
  out += "{\"id\":" + nlohmann::json(u.id).dump();
  out += ",\"text\":" + nlohmann::json(u.text).dump();
  out += fmt::format(",\"sample_rate\":{}", u.clean.sample_rate);
  out += ",\"clean\":";
  detail::append_samples(out, u.clean.samples);
  out += ",\"noisy\":";
  if (u.noisy) detail::append_samples(out, u.noisy->samples);
  else out += "null";
  out += ",\"noise_kind\":\"" + std::string(signal::to_string(u.noise_kind)) + "\"";
  out += ",\"snr_db\":";
  out += std::isfinite(u.snr_db) ? fmt::format("{:.9g}", u.snr_db) : std::string("null");
  out += fmt::format(",\"seed\":{}", u.seed);
  out += "}";
  return out;
}

inline Utterance from_json_line(const std::string& line) {
  Utterance u;
  try {
    const auto j = nlohmann::json::parse(line);
    u.id = j.at("id").get<std::string>();
    u.text = j.at("text").get<std::string>();
    const int sr = j.at("sample_rate").get<int>();
    u.clean.samples = j.at("clean").get<std::vector<double>>();
    u.clean.sample_rate = sr;
    if (!j.at("noisy").is_null()) u.noisy = Waveform{j.at("noisy").get<std::vector<double>>(), sr};
    u.noise_kind = signal::parse_noise_kind(j.at("noise_kind").get<std::string>());
    u.snr_db = j.at("snr_db").is_null() ? std::numeric_limits<double>::infinity()
                                        : j.at("snr_db").get<double>();
    u.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FileError(std::string("corpus record: ") + e.what());
  }
  if (!signal::valid_text(u.text) || u.text.size() > 24)
    throw FileError("corpus record " + u.id + ": text outside the alphabet or length range");
  return u;
}

inline void write_split(const std::filesystem::path& path, const std::vector<Utterance>& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  for (const auto& u : split) out << to_json_line(u) << '\n';
  if (!out) throw FileError("write failed: " + path.string());
}

inline std::vector<Utterance> read_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  std::vector<Utterance> split;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) split.push_back(from_json_line(line));
  return split;
}

inline void write_corpus(const std::filesystem::path& dir, const Corpus& c) {
  std::filesystem::create_directories(dir);
  write_split(dir / "train.jsonl", c.train);
  write_split(dir / "test.jsonl", c.test);
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
  return Corpus{read_split(dir / "train.jsonl"), read_split(dir / "test.jsonl")};
}

}  // namespace asrtra::corpus
