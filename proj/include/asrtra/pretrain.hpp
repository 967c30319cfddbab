#pragma once

// Supervised teacher-forced training of the transcriber.

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "asrtra/corpus.hpp"
#include "asrtra/model.hpp"
#include "asrtra/optim.hpp"
#include "asrtra/signal.hpp"

namespace asrtra::model {

/// A transcribed spectrogram.
struct Example {
  std::string id;
  signal::LogMelSpectrogram mel;
  std::string text;
};

inline std::vector<Example> clean_examples(const std::vector<corpus::Utterance>& split,
                                           const signal::FrontendConfig& fe = {}) {
  std::vector<Example> out;
  out.reserve(split.size());
  for (const auto& u : split) out.push_back({u.id, signal::log_mel(u.clean, fe), u.text});
  return out;
}

inline std::vector<Example> noisy_examples(const std::vector<corpus::Utterance>& split,
                                           const signal::FrontendConfig& fe = {}) {
  std::vector<Example> out;
  out.reserve(split.size());
  for (const auto& u : split) {
    if (!u.noisy) throw InputError("utterance " + u.id + " has no noisy waveform");
    out.push_back({u.id, signal::log_mel(*u.noisy, fe), u.text});
  }
  return out;
}

/// Summed negative log-likelihood of `text` + eos under teacher forcing.
inline TensorPtr teacher_forced_nll(Tape& tape, const ModelParams& params, const Example& ex,
                                    const SoftPrompt* prompt = nullptr) {
  auto enc = encode_state(tape, ex.mel, params);
  const auto targets = target_tokens(ex.text);
  return tape.scale(sequence_log_prob(tape, enc, targets, prompt, params), -1.0);
}

/// Mean per-token cross-entropy over `examples` (no gradients).
inline double mean_token_nll(const ModelParams& params, const std::vector<Example>& examples) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    auto tape = Tape::inference();
    total += teacher_forced_nll(tape, params, ex)->item();
    tokens += ex.text.size() + 1;
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

/// Fraction of examples whose greedy transcription equals the reference.
inline double exact_match(const ModelParams& params, const std::vector<Example>& examples,
                          const SoftPrompt* prompt = nullptr, std::size_t max_len = 32) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : examples) hits += greedy_decode(ex.mel, prompt, params, max_len).text() == ex.text;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

struct PretrainConfig {
  optim::OptimizerConfig optimizer{.kind = optim::Kind::adam, .lr = 2e-3};
  std::size_t batch_size = 16;
  double lr_decay = 0.93;  // per-epoch multiplicative learning-rate decay
  std::size_t max_epochs = 200;
  double target_exact_match = 0.9;
  // Fraction of training examples decoded behind a random soft prefix, so
  // the decoder tolerates a prepended prompt and the position shift it causes.
  double prefix_prob = 0.5;
  std::size_t prefix_len = 4;
  double prefix_std = 0.02;
  std::size_t max_len = 32;
  std::uint64_t seed = 1;
};

enum class TrainStatus { converged, cap_reached };

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double heldout_exact_match = 0.0;
  double seconds = 0.0;
};

struct PretrainResult {
  TrainStatus status = TrainStatus::cap_reached;
  double initial_loss = 0.0;
  std::vector<EpochStats> curve;
  double final_exact_match = 0.0;
};

/// Teacher-forced cross-entropy training until the held-out exact-match
/// reaches the target or the epoch cap is hit.
inline PretrainResult pretrain(ModelParams& params, const std::vector<Example>& train,
                               const std::vector<Example>& heldout, const PretrainConfig& cfg,
                               const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (train.empty()) throw InputError("pretrain: empty training split");
  if (cfg.batch_size < 1) throw ConfigError("pretrain.batch_size", "must be >= 1");
  PretrainResult result;
  {
    const std::size_t probe = std::min<std::size_t>(train.size(), 64);
    result.initial_loss = mean_token_nll(params, {train.begin(), train.begin() + static_cast<long>(probe)});
  }
  optim::Optimizer opt(params.tensors(), cfg.optimizer);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t d = params.cfg.d_model;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    opt.set_lr(cfg.optimizer.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch - 1)));
    Rng rng(derive_seed(cfg.seed, "pretrain-epoch", std::to_string(epoch)));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);

    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t i = b; i < end; ++i) batch_tokens += train[order[i]].text.size() + 1;
      opt.zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        const auto& ex = train[order[i]];
        std::optional<SoftPrompt> prefix;
        if (cfg.prefix_len > 0 && rng.uniform() < cfg.prefix_prob) {
          std::vector<double> v(cfg.prefix_len * d);
          for (auto& x : v) x = rng.normal(0.0, cfg.prefix_std);
          prefix = SoftPrompt{ad::constant({cfg.prefix_len, d}, std::move(v))};
        }
        Tape tape;
        auto nll = teacher_forced_nll(tape, params, ex, prefix ? &*prefix : nullptr);
        epoch_loss += nll->item();
        tape.backward(tape.scale(nll, 1.0 / static_cast<double>(batch_tokens)));
      }
      epoch_tokens += batch_tokens;
      opt.step();
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
    st.heldout_exact_match = exact_match(params, heldout, nullptr, cfg.max_len);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.curve.push_back(st);
    result.final_exact_match = st.heldout_exact_match;
    if (on_epoch) on_epoch(st);
    if (st.heldout_exact_match >= cfg.target_exact_match) {
      result.status = TrainStatus::converged;
      break;
    }
  }
  return result;
}

}  // namespace asrtra::model
