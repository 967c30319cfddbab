#pragma once

// Episodic test-time adaptation: reward-driven policy-gradient updates of
// the transcriber and a soft prompt, followed by exact restoration.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "asrtra/autodiff.hpp"
#include "asrtra/error.hpp"
#include "asrtra/model.hpp"
#include "asrtra/optim.hpp"
#include "asrtra/reward.hpp"
#include "asrtra/rng.hpp"

namespace asrtra::tta {

using ad::Tape;
using ad::TensorPtr;
using model::Hypothesis;
using model::ModelParams;
using model::SoftPrompt;

struct AdaptationConfig {
  std::size_t n_samples = 4;
  double temp_low = 0.4;
  double temp_high = 0.6;
  double eta1 = 1e-3;  // model learning rate
  double eta2 = 1e-1;  // prompt learning rate, 100 x eta1
  std::size_t steps = 1;
  bool include_baseline_decode_in_mean = true;
  bool include_baseline_decode_in_loss = false;
  bool use_prompt = true;      // inject the soft prompt
  bool finetune = true;        // update model parameters
  bool freeze_encoder = false;
  std::size_t max_len = 32;
  reward::RewardConfig reward;
  std::uint64_t seed = 0;
};

/// Learning rates may be zero (null-update runs); negative rates are rejected.
inline void validate(const AdaptationConfig& cfg) {
  if (cfg.n_samples < 2) throw ConfigError("adapt.n_samples", "must be >= 2");
  if (!(cfg.temp_low > 0.0)) throw ConfigError("adapt.temp_low", "must be > 0");
  if (!(cfg.temp_high >= cfg.temp_low)) throw ConfigError("adapt.temp_high", "must be >= adapt.temp_low");
  if (!(cfg.eta1 >= 0.0) || !std::isfinite(cfg.eta1)) throw ConfigError("adapt.eta1", "must be finite and >= 0");
  if (!(cfg.eta2 >= 0.0) || !std::isfinite(cfg.eta2)) throw ConfigError("adapt.eta2", "must be finite and >= 0");
  if (cfg.steps < 1) throw ConfigError("adapt.steps", "must be >= 1");
  if (cfg.max_len < 1) throw ConfigError("adapt.max_len", "must be >= 1");
  reward::validate(cfg.reward);
}

// ---------------------------------------------------------------------------
// Snapshot

/// Exact copy of all trainable state plus an optional generator state.
class Snapshot {
 public:
  static Snapshot take(const ModelParams& params, const SoftPrompt* prompt, const Rng* rng = nullptr) {
    Snapshot s;
    s.tensors_ = params.tensors();
    if (prompt && prompt->p) s.tensors_.push_back(prompt->p);
    for (const auto& t : s.tensors_) {
      s.shapes_.push_back(t->shape);
      s.values_.push_back(t->data);
    }
    if (rng) s.rng_ = *rng;
    return s;
  }

  /// Writes the saved values back; gradients are cleared.
  void restore(Rng* rng = nullptr) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      auto& t = *tensors_[i];
      if (t.shape != shapes_[i] || t.data.size() != values_[i].size())
        throw StateError("restore: tensor " + std::to_string(i) + " changed shape from " +
                         ad::shape_str(shapes_[i]) + " to " + ad::shape_str(t.shape));
      t.data = values_[i];
      t.grad.clear();
    }
    if (rng && rng_) *rng = *rng_;
  }

  /// Number of scalars that differ bitwise from the snapshot, split into
  /// model parameters (first) and prompt (second, zero without a prompt).
  std::pair<std::size_t, std::size_t> changed(std::size_t n_model_tensors) const {
    std::size_t m = 0, p = 0;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      const auto& a = tensors_[i]->data;
      const auto& b = values_[i];
      std::size_t c = 0;
      for (std::size_t j = 0; j < a.size(); ++j) c += std::memcmp(&a[j], &b[j], sizeof(double)) != 0;
      (i < n_model_tensors ? m : p) += c;
    }
    return {m, p};
  }

  /// L2 distance from the snapshot, split as in `changed`.
  std::pair<double, double> distance(std::size_t n_model_tensors) const {
    double m = 0.0, p = 0.0;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      const auto& a = tensors_[i]->data;
      const auto& b = values_[i];
      double ss = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) ss += (a[j] - b[j]) * (a[j] - b[j]);
      (i < n_model_tensors ? m : p) += ss;
    }
    return {std::sqrt(m), std::sqrt(p)};
  }

 private:
  std::vector<TensorPtr> tensors_;
  std::vector<std::vector<std::size_t>> shapes_;
  std::vector<std::vector<double>> values_;
  std::optional<Rng> rng_;
};

// ---------------------------------------------------------------------------
// Advantages and loss

struct Advantages {
  double mean = 0.0;
  std::vector<double> values;  // aligned with the input rewards
};

/// `rewards[0]` is the baseline decode's reward when `has_baseline`; the
/// mean excludes it unless `include_baseline`. The mean is accumulated as
/// r_first + mean(r_j - r_first) so identical rewards give exact zeros.
inline Advantages compute_advantages(const std::vector<double>& rewards, bool has_baseline = false,
                                     bool include_baseline = true) {
  if (rewards.size() < 2) throw InputError("compute_advantages: need at least 2 rewards");
  const std::size_t first = has_baseline && !include_baseline ? 1 : 0;
  if (rewards.size() - first < 2) throw InputError("compute_advantages: need at least 2 rewards in the mean set");
  const double anchor = rewards[first];
  double dev = 0.0;
  for (std::size_t i = first; i < rewards.size(); ++i) dev += rewards[i] - anchor;
  Advantages a;
  a.mean = anchor + dev / static_cast<double>(rewards.size() - first);
  a.values.reserve(rewards.size());
  for (double r : rewards) a.values.push_back(r - a.mean);
  return a;
}

/// L = -(1/N) * sum_i adv_i * log_probs_i, advantages held constant.
inline TensorPtr policy_gradient_loss(Tape& tape, const std::vector<TensorPtr>& log_probs,
                                      const std::vector<double>& advantages) {
  if (log_probs.size() != advantages.size())
    throw InputError("policy_gradient_loss: " + std::to_string(log_probs.size()) + " log-probs but " +
                     std::to_string(advantages.size()) + " advantages");
  if (log_probs.empty()) throw InputError("policy_gradient_loss: empty hypothesis set");
  const double n = static_cast<double>(log_probs.size());
  std::vector<double> coeffs;
  coeffs.reserve(advantages.size());
  for (double a : advantages) coeffs.push_back(-a / n);
  return tape.linear_combination(log_probs, coeffs);
}

/// Sequence-level form over decoded hypotheses.
inline TensorPtr policy_gradient_loss(Tape& tape, const std::vector<Hypothesis>& hyps,
                                      const std::vector<double>& advantages, const model::EncoderState& enc,
                                      const SoftPrompt* prompt, const ModelParams& params) {
  if (hyps.size() != advantages.size()) throw InputError("policy_gradient_loss: hypotheses and advantages differ");
  std::vector<TensorPtr> lps;
  lps.reserve(hyps.size());
  for (const auto& h : hyps) lps.push_back(model::sequence_log_prob(tape, enc, h.tokens, prompt, params));
  return policy_gradient_loss(tape, lps, advantages);
}

// ---------------------------------------------------------------------------
// Episodes

enum class EpisodeStatus { ok, aborted_nonfinite };

inline std::string to_string(EpisodeStatus s) { return s == EpisodeStatus::ok ? "ok" : "aborted_nonfinite"; }

struct Timings {
  double decode = 0.0;
  double sample = 0.0;
  double reward = 0.0;
  double update = 0.0;

  double total() const { return decode + sample + reward + update; }
};

struct StepRecord {
  std::vector<Hypothesis> sampled;
  std::vector<double> temperatures;
  std::vector<double> rewards;     // sampled candidates only
  double mean_reward = 0.0;
  std::vector<double> advantages;  // baseline decode first, then candidates
  double loss = 0.0;
  double model_grad_norm = 0.0;
  double prompt_grad_norm = 0.0;
};

struct Episode {
  std::string id;
  std::string method;
  Hypothesis baseline;
  double baseline_reward = 0.0;
  double confidence = 0.0;  // mean token log-prob of the baseline decode
  std::vector<StepRecord> steps;
  Hypothesis adapted;
  std::size_t model_values_changed = 0;
  std::size_t prompt_values_changed = 0;
  double model_update_norm = 0.0;
  double prompt_update_norm = 0.0;
  Timings timings;
  EpisodeStatus status = EpisodeStatus::ok;
  std::string message;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

inline std::vector<TensorPtr> trainable_model_tensors(const ModelParams& params, bool freeze_encoder) {
  if (!freeze_encoder) return params.tensors();
  const auto enc = params.encoder_tensors();
  std::vector<TensorPtr> out;
  for (const auto& t : params.tensors())
    if (std::find(enc.begin(), enc.end(), t) == enc.end()) out.push_back(t);
  return out;
}

}  // namespace detail

/// One full adaptation episode. Parameters and prompt are restored before
/// returning, whatever the outcome.
inline Episode adapt_one(const signal::LogMelSpectrogram& s, ModelParams& params, SoftPrompt& prompt,
                         const reward::RewardModelParams* rp, const reward::TrigramLm* lm,
                         const AdaptationConfig& cfg, std::string id = {}) {
  validate(cfg);
  using detail::Clock;
  Episode ep;
  ep.id = std::move(id);
  ep.method = "asr_tra";
  const SoftPrompt* active = cfg.use_prompt && prompt.p ? &prompt : nullptr;
  const std::size_t n_model = params.tensors().size();
  const auto snapshot = Snapshot::take(params, active);

  auto t0 = Clock::now();
  model::EncoderState frozen_enc;
  {
    auto tape = Tape::inference();
    frozen_enc = model::encode_state(tape, s, params);
  }
  ep.baseline = model::greedy_decode(frozen_enc, nullptr, params, cfg.max_len);
  ep.confidence = model::confidence(ep.baseline);
  ep.timings.decode += detail::since(t0);

  t0 = Clock::now();
  const reward::RewardScorer scorer(s, rp, lm, cfg.reward);
  ep.baseline_reward = scorer(ep.baseline.text());
  ep.baseline.reward = ep.baseline_reward;
  ep.timings.reward += detail::since(t0);

  Rng temps(derive_seed(cfg.seed, "temperatures"));
  const auto model_tensors = detail::trainable_model_tensors(params, cfg.freeze_encoder);
  const bool update_model = cfg.finetune;

  try {
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      StepRecord rec;
      model::EncoderState enc_now = frozen_enc;
      if (step > 0) {
        auto tape = Tape::inference();
        enc_now = model::encode_state(tape, s, params);
      }
      t0 = Clock::now();
      for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        const double t = temps.uniform(cfg.temp_low, cfg.temp_high);
        model::DecodeConfig dc{t, cfg.max_len, derive_seed(cfg.seed, "sample", std::to_string(step * 1000 + i))};
        rec.temperatures.push_back(t);
        rec.sampled.push_back(model::sample_decode(enc_now, active, params, dc));
      }
      ep.timings.sample += detail::since(t0);

      t0 = Clock::now();
      for (auto& h : rec.sampled) {
        h.reward = scorer(h.text());
        rec.rewards.push_back(*h.reward);
      }
      ep.timings.reward += detail::since(t0);

      t0 = Clock::now();
      std::vector<double> all{ep.baseline_reward};
      all.insert(all.end(), rec.rewards.begin(), rec.rewards.end());
      const auto adv = compute_advantages(all, true, cfg.include_baseline_decode_in_mean);
      rec.mean_reward = adv.mean;
      rec.advantages = adv.values;

      std::vector<Hypothesis> loss_set;
      std::vector<double> loss_adv;
      if (cfg.include_baseline_decode_in_loss) {
        loss_set.push_back(ep.baseline);
        loss_adv.push_back(adv.values[0]);
      }
      for (std::size_t i = 0; i < rec.sampled.size(); ++i) {
        loss_set.push_back(rec.sampled[i]);
        loss_adv.push_back(adv.values[i + 1]);
      }

      params.zero_grad();
      if (active) active->p->zero_grad();
      Tape tape;
      model::EncoderState enc;
      if (update_model && !cfg.freeze_encoder) {
        enc = model::encode_state(tape, s, params);
      } else {
        auto inf = Tape::inference();
        enc = model::prepare_cross(tape, model::encode(inf, s, params), params);
      }
      auto loss = policy_gradient_loss(tape, loss_set, loss_adv, enc, active, params);
      rec.loss = loss->item();
      tape.backward(loss);

      rec.model_grad_norm = optim::grad_norm(model_tensors);
      rec.prompt_grad_norm = active ? optim::grad_norm({active->p}) : 0.0;
      const bool finite = std::isfinite(rec.loss) && optim::grads_finite(model_tensors) &&
                          (!active || optim::grads_finite({active->p}));
      ep.steps.push_back(std::move(rec));
      if (!finite) {
        ep.status = EpisodeStatus::aborted_nonfinite;
        ep.message = "non-finite loss or gradient at step " + std::to_string(step + 1);
        ep.timings.update += detail::since(t0);
        break;
      }
      if (update_model) optim::sgd_step(model_tensors, cfg.eta1);
      if (active) optim::sgd_step({active->p}, cfg.eta2);
      ep.timings.update += detail::since(t0);
    }

    t0 = Clock::now();
    const auto changed = snapshot.changed(n_model);
    ep.model_values_changed = changed.first;
    ep.prompt_values_changed = changed.second;
    const auto dist = snapshot.distance(n_model);
    ep.model_update_norm = dist.first;
    ep.prompt_update_norm = dist.second;
    ep.timings.update += detail::since(t0);

    t0 = Clock::now();
    if (ep.status == EpisodeStatus::ok) {
      ep.adapted = model::greedy_decode(s, active, params, cfg.max_len);
    } else {
      ep.adapted = ep.baseline;
    }
    ep.timings.decode += detail::since(t0);
  } catch (...) {
    snapshot.restore();
    throw;
  }

  t0 = Clock::now();
  snapshot.restore();
  ep.timings.update += detail::since(t0);
  return ep;
}

/// Unadapted greedy decode wrapped as an episode.
inline Episode baseline_episode(const signal::LogMelSpectrogram& s, const ModelParams& params,
                                std::size_t max_len = 32, std::string id = {}) {
  Episode ep;
  ep.id = std::move(id);
  ep.method = "none";
  const auto t0 = detail::Clock::now();
  ep.baseline = model::greedy_decode(s, nullptr, params, max_len);
  ep.timings.decode = detail::since(t0);
  ep.confidence = model::confidence(ep.baseline);
  ep.adapted = ep.baseline;
  return ep;
}

// ---------------------------------------------------------------------------
// Entropy-minimization comparator

/// Mean over rows of the entropy of softmax(logits), differentiable.
inline TensorPtr mean_row_entropy(Tape& tape, const TensorPtr& logits) {
  auto p = tape.softmax_rows(logits);
  auto lp = tape.log_softmax_rows(logits);
  return tape.scale(tape.sum(tape.mul(p, lp)), -1.0 / static_cast<double>(logits->rows()));
}

/// Simplified comparator: one gradient step (rate eta1, all model
/// parameters) on the mean per-step entropy along the greedy path, then a
/// greedy decode and restore. No prompt is involved.
inline Episode entropy_min_adapt(const signal::LogMelSpectrogram& s, ModelParams& params, const AdaptationConfig& cfg,
                                 std::string id = {}) {
  validate(cfg);
  using detail::Clock;
  Episode ep;
  ep.id = std::move(id);
  ep.method = "entropy_min";
  const std::size_t n_model = params.tensors().size();
  const auto snapshot = Snapshot::take(params, nullptr);
  auto t0 = Clock::now();
  ep.baseline = model::greedy_decode(s, nullptr, params, cfg.max_len);
  ep.confidence = model::confidence(ep.baseline);
  ep.timings.decode += detail::since(t0);
  try {
    t0 = Clock::now();
    StepRecord rec;
    params.zero_grad();
    Tape tape;
    auto enc = model::encode_state(tape, s, params);
    std::vector<int> input{model::kBos};
    input.insert(input.end(), ep.baseline.tokens.begin(), ep.baseline.tokens.end() - 1);
    auto loss = mean_row_entropy(tape, model::decoder_logits(tape, enc, input, nullptr, params));
    rec.loss = loss->item();
    tape.backward(loss);
    const auto tensors = params.tensors();
    rec.model_grad_norm = optim::grad_norm(tensors);
    const bool finite = std::isfinite(rec.loss) && optim::grads_finite(tensors);
    ep.steps.push_back(std::move(rec));
    if (finite) {
      optim::sgd_step(tensors, cfg.eta1);
    } else {
      ep.status = EpisodeStatus::aborted_nonfinite;
      ep.message = "non-finite entropy or gradient";
    }
    const auto changed = snapshot.changed(n_model);
    ep.model_values_changed = changed.first;
    ep.model_update_norm = snapshot.distance(n_model).first;
    ep.timings.update += detail::since(t0);

    t0 = Clock::now();
    ep.adapted = finite ? model::greedy_decode(s, nullptr, params, cfg.max_len) : ep.baseline;
    ep.timings.decode += detail::since(t0);
  } catch (...) {
    snapshot.restore();
    throw;
  }
  t0 = Clock::now();
  snapshot.restore();
  ep.timings.update += detail::since(t0);
  return ep;
}

// ---------------------------------------------------------------------------
// Bandit check

struct BanditResult {
  std::vector<double> probabilities;
  std::vector<double> best_arm_trajectory;  // P(best arm) after each iteration
};

/// Softmax policy over arms trained with the same advantage, loss and
/// gradient-step code the episodes use.
inline BanditResult reinforce_bandit_check(const std::vector<double>& arms, double lr, std::size_t iterations,
                                           std::size_t samples_per_step = 4, std::uint64_t seed = 0) {
  if (arms.size() < 2) throw InputError("reinforce_bandit_check: need at least 2 arms");
  const std::size_t k = arms.size();
  const std::size_t best =
      static_cast<std::size_t>(std::distance(arms.begin(), std::max_element(arms.begin(), arms.end())));
  auto logits = ad::parameter({1, k}, std::vector<double>(k, 0.0));
  Rng rng(derive_seed(seed, "bandit"));
  BanditResult res;
  auto probs_now = [&] { return model::tempered_probs(logits->data, 1.0); };
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto probs = probs_now();
    std::vector<std::size_t> picks;
    std::vector<double> rewards;
    for (std::size_t i = 0; i < samples_per_step; ++i) {
      const auto a = static_cast<std::size_t>(model::sample_index(probs, rng.uniform()));
      picks.push_back(a);
      rewards.push_back(arms[a]);
    }
    const auto adv = compute_advantages(rewards);
    logits->zero_grad();
    Tape tape;
    auto lp = tape.log_softmax_rows(logits);
    std::vector<TensorPtr> lps;
    const std::vector<std::size_t> row{0};
    for (auto a : picks) {
      const std::vector<std::size_t> col{a};
      lps.push_back(tape.pick(lp, row, col));
    }
    tape.backward(policy_gradient_loss(tape, lps, adv.values));
    optim::sgd_step({logits}, lr);
    res.best_arm_trajectory.push_back(probs_now()[best]);
  }
  res.probabilities = probs_now();
  return res;
}

}  // namespace asrtra::tta
