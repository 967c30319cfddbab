#pragma once

// Reward models: a miniature contrastive audio-text embedder scored by
// cosine similarity, a character trigram language model, and their blend.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "asrtra/autodiff.hpp"
#include "asrtra/corpus.hpp"
#include "asrtra/model.hpp"
#include "asrtra/optim.hpp"
#include "asrtra/signal.hpp"

namespace asrtra::reward {

using ad::Tape;
using ad::TensorPtr;
using model::Attention;
using model::Linear;
using model::Norm;

struct RewardModelConfig {
  std::size_t n_mels = 26;
  std::size_t width = 32;
  std::size_t n_heads = 2;
  std::size_t d_ff = 64;
  std::size_t audio_layers = 2;
  std::size_t text_layers = 1;
  std::size_t embed_dim = 32;
  double input_range = 8.0;
  double init_temperature = 0.07;  // logit scale starts at 1 / 0.07

  bool operator==(const RewardModelConfig&) const = default;
};

struct TowerLayer {
  Norm ln_attn;
  Attention attn;
  Norm ln_ff;
  Linear ff_in, ff_out;
};

struct RewardModelParams {
  RewardModelConfig cfg;
  Linear audio_input;
  std::vector<TowerLayer> audio_layers;
  Norm audio_norm;
  Linear audio_proj;
  TensorPtr char_embedding;  // [vocab x width]
  std::vector<TowerLayer> text_layers;
  Norm text_norm;
  Linear text_proj;
  TensorPtr log_scale;  // scalar, ln(logit scale)

  std::vector<std::pair<std::string, TensorPtr>> named_tensors() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    auto lin = [&](const std::string& n, const Linear& l) {
      out.emplace_back(n + ".w", l.w);
      out.emplace_back(n + ".b", l.b);
    };
    auto norm = [&](const std::string& n, const Norm& l) {
      out.emplace_back(n + ".gain", l.gain);
      out.emplace_back(n + ".bias", l.bias);
    };
    auto layers = [&](const std::string& prefix, const std::vector<TowerLayer>& ls) {
      for (std::size_t i = 0; i < ls.size(); ++i) {
        const auto p = prefix + "." + std::to_string(i);
        norm(p + ".ln_attn", ls[i].ln_attn);
        lin(p + ".attn.q", ls[i].attn.q);
        lin(p + ".attn.k", ls[i].attn.k);
        lin(p + ".attn.v", ls[i].attn.v);
        lin(p + ".attn.o", ls[i].attn.o);
        norm(p + ".ln_ff", ls[i].ln_ff);
        lin(p + ".ff_in", ls[i].ff_in);
        lin(p + ".ff_out", ls[i].ff_out);
      }
    };
    lin("audio.input", audio_input);
    layers("audio", audio_layers);
    norm("audio.norm", audio_norm);
    lin("audio.proj", audio_proj);
    out.emplace_back("text.embedding", char_embedding);
    layers("text", text_layers);
    norm("text.norm", text_norm);
    lin("text.proj", text_proj);
    out.emplace_back("log_scale", log_scale);
    return out;
  }

  std::vector<TensorPtr> tensors() const {
    std::vector<TensorPtr> out;
    for (auto& [n, t] : named_tensors()) out.push_back(t);
    return out;
  }
};

inline RewardModelParams init_reward_params(const RewardModelConfig& cfg, std::uint64_t seed) {
  if (cfg.width % cfg.n_heads != 0) throw ConfigError("reward.width", "must be a multiple of reward.n_heads");
  Rng rng(derive_seed(seed, "reward-init"));
  auto layer = [&](std::size_t w) {
    TowerLayer l;
    l.ln_attn = model::detail::make_norm(w);
    l.attn = model::detail::make_attention(rng, w);
    l.ln_ff = model::detail::make_norm(w);
    l.ff_in = model::detail::make_linear(rng, w, cfg.d_ff);
    l.ff_out = model::detail::make_linear(rng, cfg.d_ff, w);
    return l;
  };
  RewardModelParams p;
  p.cfg = cfg;
  p.audio_input = model::detail::make_linear(rng, cfg.n_mels, cfg.width);
  for (std::size_t i = 0; i < cfg.audio_layers; ++i) p.audio_layers.push_back(layer(cfg.width));
  p.audio_norm = model::detail::make_norm(cfg.width);
  p.audio_proj = model::detail::make_linear(rng, cfg.width, cfg.embed_dim);
  std::vector<double> emb(model::kVocab * cfg.width);
  for (auto& v : emb) v = rng.normal(0.0, 1.0);
  p.char_embedding = ad::parameter({model::kVocab, cfg.width}, std::move(emb));
  for (std::size_t i = 0; i < cfg.text_layers; ++i) p.text_layers.push_back(layer(cfg.width));
  p.text_norm = model::detail::make_norm(cfg.width);
  p.text_proj = model::detail::make_linear(rng, cfg.width, cfg.embed_dim);
  p.log_scale = ad::parameter({1}, {std::log(1.0 / cfg.init_temperature)});
  return p;
}

// ---------------------------------------------------------------------------
// Towers

namespace detail {

inline TensorPtr run_layers(Tape& tape, TensorPtr x, const std::vector<TowerLayer>& layers, std::size_t heads) {
  for (const auto& l : layers) {
    auto a = model::norm(tape, x, l.ln_attn);
    auto q = model::linear(tape, a, l.attn.q);
    auto k = model::linear(tape, a, l.attn.k);
    auto v = model::linear(tape, a, l.attn.v);
    x = tape.add(x, model::attend(tape, q, k, v, heads, -1, l.attn.o));
    x = tape.add(x, model::feed_forward(tape, model::norm(tape, x, l.ln_ff), l.ff_in, l.ff_out));
  }
  return x;
}

}  // namespace detail

/// Differentiable unit-norm audio embedding, [1 x e].
inline TensorPtr audio_embedding(Tape& tape, const signal::LogMelSpectrogram& s, const RewardModelParams& rp) {
  const auto& cfg = rp.cfg;
  if (s.n_mels != cfg.n_mels)
    throw ShapeError("embed_audio: spectrogram has " + std::to_string(s.n_mels) + " mel bins, expected " +
                     std::to_string(cfg.n_mels));
  const std::size_t t = s.n_frames;
  auto x = ad::constant({t, cfg.n_mels}, model::normalize_input(s, cfg.input_range));
  auto h = model::linear(tape, x, rp.audio_input);
  h = tape.add(h, ad::constant({t, cfg.width}, model::sinusoidal_positions(t, cfg.width)));
  h = model::norm(tape, detail::run_layers(tape, h, rp.audio_layers, cfg.n_heads), rp.audio_norm);
  return tape.normalize_rows(model::linear(tape, tape.mean_rows(h), rp.audio_proj));
}

/// Differentiable unit-norm text embedding, [1 x e]. Empty text is an error
/// here; callers handle it via the empty-text penalty.
inline TensorPtr text_embedding(Tape& tape, std::string_view text, const RewardModelParams& rp) {
  if (text.empty()) throw InputError("embed_text: empty text");
  const auto& cfg = rp.cfg;
  const auto ids = model::encode_text(text);
  auto h = tape.gather_rows(rp.char_embedding, ids);
  h = tape.add(h, ad::constant({ids.size(), cfg.width}, model::sinusoidal_positions(ids.size(), cfg.width)));
  h = model::norm(tape, detail::run_layers(tape, h, rp.text_layers, cfg.n_heads), rp.text_norm);
  return tape.normalize_rows(model::linear(tape, tape.mean_rows(h), rp.text_proj));
}

/// Unit-norm embedding vector.
struct Embedding {
  std::vector<double> vector;

  double dot(const Embedding& o) const {
    double s = 0.0;
    for (std::size_t i = 0; i < vector.size(); ++i) s += vector[i] * o.vector[i];
    return s;
  }
};

inline Embedding embed_audio(const signal::LogMelSpectrogram& s, const RewardModelParams& rp) {
  auto tape = Tape::inference();
  return {audio_embedding(tape, s, rp)->data};
}

inline Embedding embed_text(std::string_view text, const RewardModelParams& rp) {
  auto tape = Tape::inference();
  return {text_embedding(tape, text, rp)->data};
}

inline double cosine(const Embedding& a, const Embedding& b) { return std::clamp(a.dot(b), -1.0, 1.0); }

inline constexpr double kDefaultEmptyPenalty = -1.0;

/// Cosine similarity of audio and transcript embeddings; empty text scores
/// `empty_penalty` without running either tower.
inline double clap_reward(const signal::LogMelSpectrogram& s, std::string_view text, const RewardModelParams& rp,
                          double empty_penalty = kDefaultEmptyPenalty) {
  if (text.empty()) return empty_penalty;
  return cosine(embed_audio(s, rp), embed_text(text, rp));
}

// ---------------------------------------------------------------------------
// Contrastive training

struct ContrastiveConfig {
  optim::OptimizerConfig optimizer{optim::Kind::adam, 2e-3, 0.9, 0.999, 1e-8, 1.0};
  std::size_t batch_size = 32;
  std::size_t max_epochs = 60;
  double noisy_fraction = 0.3;
  double noisy_snr_min = 5.0;
  double noisy_snr_max = 20.0;
  double target_retrieval = 0.85;
  double max_log_scale = std::log(100.0);
  std::uint64_t seed = 1;
};

struct ContrastiveEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  double heldout_retrieval = 0.0;
  double seconds = 0.0;
};

struct ContrastiveResult {
  bool converged = false;
  double initial_loss = 0.0;  // per direction, first batch
  std::vector<ContrastiveEpoch> curve;
  double final_retrieval = 0.0;
};

/// A paired training item: clean spectrogram, an optional noisy copy, text.
struct PairedExample {
  std::string id;
  signal::LogMelSpectrogram clean;
  std::optional<signal::LogMelSpectrogram> noisy;
  std::string text;
};

/// Builds paired examples; each gets one noisy copy with a random noise
/// family and SNR drawn from the configured range.
inline std::vector<PairedExample> paired_examples(const std::vector<corpus::Utterance>& split,
                                                  const ContrastiveConfig& cfg,
                                                  const signal::FrontendConfig& fe = {}) {
  std::vector<PairedExample> out;
  out.reserve(split.size());
  for (const auto& u : split) {
    PairedExample ex{u.id, signal::log_mel(u.clean, fe), std::nullopt, u.text};
    if (cfg.noisy_fraction > 0) {
      Rng rng(derive_seed(cfg.seed, u.id, "reward-noise"));
      signal::NoiseSpec spec;
      spec.kind = signal::kNoiseKinds[static_cast<std::size_t>(rng.uniform_int(0, 2))];
      spec.snr_db = rng.uniform(cfg.noisy_snr_min, cfg.noisy_snr_max);
      spec.seed = rng.next_u64();
      ex.noisy = signal::log_mel(signal::add_noise(u.clean, spec), fe);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

/// Symmetric cross-entropy over the scaled cosine-similarity matrix of a
/// batch: audio->text rows plus text->audio rows, averaged.
inline TensorPtr contrastive_loss(Tape& tape, const std::vector<const signal::LogMelSpectrogram*>& audio,
                                  const std::vector<std::string>& texts, const RewardModelParams& rp,
                                  double* per_direction = nullptr) {
  const std::size_t b = audio.size();
  if (b < 2 || texts.size() != b) throw InputError("contrastive_loss: batch size must be >= 2 and aligned");
  std::vector<TensorPtr> a, t;
  for (std::size_t i = 0; i < b; ++i) {
    a.push_back(audio_embedding(tape, *audio[i], rp));
    t.push_back(text_embedding(tape, texts[i], rp));
  }
  auto A = tape.concat_rows(a);
  auto T = tape.concat_rows(t);
  auto scale = tape.exp(rp.log_scale);
  auto logits_at = tape.scale_by(tape.matmul_nt(A, T), scale);
  auto logits_ta = tape.scale_by(tape.matmul_nt(T, A), scale);
  std::vector<std::size_t> diag(b);
  std::iota(diag.begin(), diag.end(), 0);
  auto l1 = tape.mean(tape.pick(tape.log_softmax_rows(logits_at), diag, diag));
  auto l2 = tape.mean(tape.pick(tape.log_softmax_rows(logits_ta), diag, diag));
  if (per_direction) *per_direction = -(l1->item() + l2->item()) / 2.0;
  return tape.scale(tape.add(l1, l2), -0.5);
}

/// Fraction of held-out audio clips whose best-matching text among all
/// held-out texts is their own transcript.
inline double retrieval_at_1(const std::vector<PairedExample>& heldout, const RewardModelParams& rp,
                             bool use_noisy = false) {
  if (heldout.empty()) return 0.0;
  std::vector<Embedding> a, t;
  for (const auto& ex : heldout) {
    a.push_back(embed_audio(use_noisy && ex.noisy ? *ex.noisy : ex.clean, rp));
    t.push_back(embed_text(ex.text, rp));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double s = a[i].dot(t[j]);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    hits += heldout[best].text == heldout[i].text;
  }
  return static_cast<double>(hits) / static_cast<double>(a.size());
}

inline ContrastiveResult train_contrastive(RewardModelParams& rp, const std::vector<PairedExample>& train,
                                           const std::vector<PairedExample>& heldout, const ContrastiveConfig& cfg,
                                           const std::function<void(const ContrastiveEpoch&)>& on_epoch = {}) {
  if (cfg.batch_size < 2) throw ConfigError("reward.batch_size", "must be >= 2");
  if (train.size() < cfg.batch_size) throw InputError("train_contrastive: fewer examples than one batch");
  ContrastiveResult result;
  optim::Optimizer opt(rp.tensors(), cfg.optimizer);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(derive_seed(cfg.seed, "contrastive-epoch", std::to_string(epoch)));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b + cfg.batch_size <= order.size(); b += cfg.batch_size) {
      std::vector<const signal::LogMelSpectrogram*> audio;
      std::vector<std::string> texts;
      for (std::size_t i = b; i < b + cfg.batch_size; ++i) {
        const auto& ex = train[order[i]];
        const bool noisy = ex.noisy && rng.uniform() < cfg.noisy_fraction;
        audio.push_back(noisy ? &*ex.noisy : &ex.clean);
        texts.push_back(ex.text);
      }
      opt.zero_grad();
      Tape tape;
      double per_dir = 0.0;
      auto loss = contrastive_loss(tape, audio, texts, rp, &per_dir);
      if (epoch == 1 && batches == 0) result.initial_loss = per_dir;
      loss_sum += loss->item();
      tape.backward(loss);
      opt.step();
      rp.log_scale->data[0] = std::min(rp.log_scale->data[0], cfg.max_log_scale);
      ++batches;
    }
    ContrastiveEpoch st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    st.heldout_retrieval = retrieval_at_1(heldout, rp);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.curve.push_back(st);
    result.final_retrieval = st.heldout_retrieval;
    if (on_epoch) on_epoch(st);
    if (st.heldout_retrieval >= cfg.target_retrieval) {
      result.converged = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Character trigram language model

/// Trigram counts over the alphabet with '^' as start padding and '$' as end.
class TrigramLm {
 public:
  static constexpr char kStart = '^';
  static constexpr char kEnd = '$';
  static constexpr double kSmoothing = 0.1;

  static TrigramLm train(const std::vector<std::string>& texts) {
    TrigramLm lm;
    for (const auto& t : texts) {
      const std::string s = std::string(2, kStart) + t + kEnd;
      for (std::size_t i = 2; i < s.size(); ++i) lm.add(s.substr(i - 2, 3), 1);
    }
    return lm;
  }

  /// Mean log-probability per predicted symbol (text symbols plus end).
  double mean_log_prob(std::string_view text) const {
    const std::string s = std::string(2, kStart) + std::string(text) + kEnd;
    double total = 0.0;
    for (std::size_t i = 2; i < s.size(); ++i) {
      const auto tri = s.substr(i - 2, 3);
      const auto c3 = counts_.find(tri);
      const auto c2 = context_.find(tri.substr(0, 2));
      const double num = (c3 == counts_.end() ? 0.0 : static_cast<double>(c3->second)) + kSmoothing;
      const double den = (c2 == context_.end() ? 0.0 : static_cast<double>(c2->second)) + kSmoothing * kOutcomes;
      total += std::log(num / den);
    }
    return total / static_cast<double>(s.size() - 2);
  }

  /// tanh(mean_log_prob / 4 + 1.5), in (-1, 1); empty text scores the penalty.
  double score(std::string_view text, double empty_penalty = kDefaultEmptyPenalty) const {
    if (text.empty()) return empty_penalty;
    return std::tanh(mean_log_prob(text) / 4.0 + 1.5);
  }

  /// Sorted "trigram<TAB>count" lines.
  std::string serialize() const {
    std::string out;
    for (const auto& [tri, n] : counts_) out += tri + "\t" + std::to_string(n) + "\n";
    return out;
  }

  static TrigramLm deserialize(const std::string& text) {
    TrigramLm lm;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab != 3) throw FileError("trigram LM: malformed line '" + line + "'");
      lm.add(line.substr(0, 3), std::stoull(line.substr(4)));
    }
    return lm;
  }

  std::size_t size() const { return counts_.size(); }
  bool operator==(const TrigramLm&) const = default;

 private:
  static constexpr double kOutcomes = signal::kAlphabet.size() + 1;  // symbols + end

  void add(const std::string& tri, std::uint64_t n) {
    counts_[tri] += n;
    context_[tri.substr(0, 2)] += n;
  }

  std::map<std::string, std::uint64_t> counts_;
  std::map<std::string, std::uint64_t> context_;
};

inline double lm_score(std::string_view text, const TrigramLm& lm, double empty_penalty = kDefaultEmptyPenalty) {
  return lm.score(text, empty_penalty);
}

// ---------------------------------------------------------------------------
// Combined reward

enum class RewardMode { clap, lm, clap_plus_lm };

inline RewardMode parse_reward_mode(std::string_view s) {
  if (s == "clap") return RewardMode::clap;
  if (s == "lm") return RewardMode::lm;
  if (s == "clap_plus_lm") return RewardMode::clap_plus_lm;
  throw ConfigError("reward.mode", "unknown reward mode '" + std::string(s) + "'");
}

inline std::string to_string(RewardMode m) {
  switch (m) {
    case RewardMode::clap: return "clap";
    case RewardMode::lm: return "lm";
    case RewardMode::clap_plus_lm: return "clap_plus_lm";
  }
  return "clap";
}

struct RewardConfig {
  RewardMode mode = RewardMode::clap;
  double lm_weight = 0.5;
  double empty_penalty = kDefaultEmptyPenalty;
};

inline void validate(const RewardConfig& cfg) {
  if (!(cfg.lm_weight >= 0.0 && cfg.lm_weight <= 1.0)) throw ConfigError("reward.lm_weight", "must lie in [0, 1]");
}

/// Frozen reward models for one utterance; the audio embedding is computed
/// once and reused for every candidate transcript.
class RewardScorer {
 public:
  RewardScorer(const signal::LogMelSpectrogram& s, const RewardModelParams* rp, const TrigramLm* lm,
               RewardConfig cfg)
      : rp_(rp), lm_(lm), cfg_(cfg) {
    validate(cfg_);
    if (cfg_.mode != RewardMode::lm && !rp_) throw ConfigError("reward.mode", "mode needs the audio-text model");
    if (cfg_.mode != RewardMode::clap && !lm_) throw ConfigError("reward.mode", "mode needs the language model");
    if (rp_) audio_ = embed_audio(s, *rp_);
  }

  double clap(std::string_view text) const {
    if (text.empty()) return cfg_.empty_penalty;
    return cosine(*audio_, embed_text(text, *rp_));
  }

  double lm(std::string_view text) const { return lm_->score(text, cfg_.empty_penalty); }

  double operator()(std::string_view text) const {
    switch (cfg_.mode) {
      case RewardMode::clap: return clap(text);
      case RewardMode::lm: return lm(text);
      case RewardMode::clap_plus_lm: return (1.0 - cfg_.lm_weight) * clap(text) + cfg_.lm_weight * lm(text);
    }
    return clap(text);
  }

 private:
  const RewardModelParams* rp_;
  const TrigramLm* lm_;
  RewardConfig cfg_;
  std::optional<Embedding> audio_;
};

inline double combined_reward(const signal::LogMelSpectrogram& s, std::string_view text, const RewardModelParams* rp,
                              const TrigramLm* lm, const RewardConfig& cfg) {
  return RewardScorer(s, rp, lm, cfg)(text);
}

}  // namespace asrtra::reward
