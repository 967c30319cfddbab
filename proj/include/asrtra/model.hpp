#pragma once

// Miniature encoder-decoder transformer over log-mel frames with an
// autoregressive character decoder and soft-prompt injection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "asrtra/autodiff.hpp"
#include "asrtra/error.hpp"
#include "asrtra/rng.hpp"
#include "asrtra/signal.hpp"

namespace asrtra::model {

using ad::Tape;
using ad::TensorPtr;

// Vocabulary: alphabet symbols first, then specials.
inline constexpr int kNumSymbols = 16;
inline constexpr int kBos = 16;
inline constexpr int kEos = 17;
inline constexpr int kPad = 18;
inline constexpr int kUnk = 19;
inline constexpr int kVocab = 20;

inline std::vector<int> encode_text(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) {
    const int k = signal::symbol_index(c);
    ids.push_back(k >= 0 && k < kNumSymbols ? k : kUnk);
  }
  return ids;
}

/// Renders token ids as text, stopping at eos. Specials other than unk
/// ('?') are dropped.
inline std::string decode_text(const std::vector<int>& ids) {
  std::string s;
  for (int id : ids) {
    if (id == kEos) break;
    if (id >= 0 && id < kNumSymbols) s.push_back(signal::kAlphabet[static_cast<std::size_t>(id)]);
    else if (id == kUnk) s.push_back('?');
  }
  return s;
}

struct ModelConfig {
  std::size_t n_mels = 26;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t vocab = kVocab;
  double input_range = 8.0;  // dynamic range (nats) kept below the utterance peak
  std::string alphabet = std::string(signal::kAlphabet);

  bool operator==(const ModelConfig&) const = default;
};

struct Linear {
  TensorPtr w;  // [in x out]
  TensorPtr b;  // [out]
};

struct Norm {
  TensorPtr gain;
  TensorPtr bias;
};

struct Attention {
  Linear q, k, v, o;
};

struct EncoderLayer {
  Norm ln_attn;
  Attention attn;
  Norm ln_ff;
  Linear ff_in, ff_out;
};

struct DecoderLayer {
  Norm ln_self;
  Attention self_attn;
  Norm ln_cross;
  Attention cross_attn;
  Norm ln_ff;
  Linear ff_in, ff_out;
};

/// Trainable state of the transcriber. The output projection is the
/// transposed token embedding table (one tensor, two roles).
struct ModelParams {
  ModelConfig cfg;
  Linear input;
  std::vector<EncoderLayer> encoder;
  Norm encoder_norm;
  TensorPtr embedding;  // [vocab x d]
  std::vector<DecoderLayer> decoder;
  Norm decoder_norm;

  /// Every trainable tensor with a stable name, in a fixed order.
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
    auto attn = [&](const std::string& n, const Attention& a) {
      lin(n + ".q", a.q);
      lin(n + ".k", a.k);
      lin(n + ".v", a.v);
      lin(n + ".o", a.o);
    };
    lin("enc.input", input);
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      const auto p = "enc." + std::to_string(i);
      norm(p + ".ln_attn", encoder[i].ln_attn);
      attn(p + ".attn", encoder[i].attn);
      norm(p + ".ln_ff", encoder[i].ln_ff);
      lin(p + ".ff_in", encoder[i].ff_in);
      lin(p + ".ff_out", encoder[i].ff_out);
    }
    norm("enc.norm", encoder_norm);
    out.emplace_back("dec.embedding", embedding);
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      const auto p = "dec." + std::to_string(i);
      norm(p + ".ln_self", decoder[i].ln_self);
      attn(p + ".self", decoder[i].self_attn);
      norm(p + ".ln_cross", decoder[i].ln_cross);
      attn(p + ".cross", decoder[i].cross_attn);
      norm(p + ".ln_ff", decoder[i].ln_ff);
      lin(p + ".ff_in", decoder[i].ff_in);
      lin(p + ".ff_out", decoder[i].ff_out);
    }
    norm("dec.norm", decoder_norm);
    return out;
  }

  std::vector<TensorPtr> tensors() const {
    std::vector<TensorPtr> out;
    for (auto& [name, t] : named_tensors()) out.push_back(t);
    return out;
  }

  /// Encoder-side tensors (input projection, encoder layers, encoder norm).
  std::vector<TensorPtr> encoder_tensors() const {
    std::vector<TensorPtr> out;
    for (auto& [name, t] : named_tensors())
      if (name.starts_with("enc.")) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& t : tensors()) n += t->size();
    return n;
  }

  void zero_grad() const {
    for (auto& t : tensors()) t->zero_grad();
  }

  /// Independent deep copy.
  ModelParams clone() const;
};

namespace detail {

inline Linear make_linear(Rng& rng, std::size_t in, std::size_t out) {
  std::vector<double> w(in * out);
  const double std = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w) v = rng.normal(0.0, std);
  return {ad::parameter({in, out}, std::move(w)), ad::parameter({out}, std::vector<double>(out, 0.0))};
}

inline Norm make_norm(std::size_t d) {
  return {ad::parameter({d}, std::vector<double>(d, 1.0)), ad::parameter({d}, std::vector<double>(d, 0.0))};
}

inline Attention make_attention(Rng& rng, std::size_t d) {
  return {make_linear(rng, d, d), make_linear(rng, d, d), make_linear(rng, d, d), make_linear(rng, d, d)};
}

}  // namespace detail

inline void validate(const ModelConfig& cfg) {
  if (cfg.d_model == 0 || cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0)
    throw ConfigError("model.d_model", "must be a positive multiple of model.n_heads");
  if (cfg.vocab != kVocab) throw ConfigError("model.vocab", "must be 20");
  if (cfg.n_mels == 0) throw ConfigError("model.n_mels", "must be positive");
  if (!(cfg.input_range > 0)) throw ConfigError("model.input_range", "must be positive");
}

/// Random initialization; embeddings use std 0.02, projections 1/sqrt(fan_in).
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(derive_seed(seed, "model-init"));
  ModelParams p;
  p.cfg = cfg;
  const std::size_t d = cfg.d_model;
  p.input = detail::make_linear(rng, cfg.n_mels, d);
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    EncoderLayer l;
    l.ln_attn = detail::make_norm(d);
    l.attn = detail::make_attention(rng, d);
    l.ln_ff = detail::make_norm(d);
    l.ff_in = detail::make_linear(rng, d, cfg.d_ff);
    l.ff_out = detail::make_linear(rng, cfg.d_ff, d);
    p.encoder.push_back(std::move(l));
  }
  p.encoder_norm = detail::make_norm(d);
  std::vector<double> emb(cfg.vocab * d);
  for (auto& v : emb) v = rng.normal(0.0, 0.02);
  p.embedding = ad::parameter({cfg.vocab, d}, std::move(emb));
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    DecoderLayer l;
    l.ln_self = detail::make_norm(d);
    l.self_attn = detail::make_attention(rng, d);
    l.ln_cross = detail::make_norm(d);
    l.cross_attn = detail::make_attention(rng, d);
    l.ln_ff = detail::make_norm(d);
    l.ff_in = detail::make_linear(rng, d, cfg.d_ff);
    l.ff_out = detail::make_linear(rng, cfg.d_ff, d);
    p.decoder.push_back(std::move(l));
  }
  p.decoder_norm = detail::make_norm(d);
  return p;
}

inline ModelParams ModelParams::clone() const {
  ModelParams c = init_params(cfg, 0);
  auto src = named_tensors();
  auto dst = c.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].second->data = src[i].second->data;
    dst[i].second->requires_grad = src[i].second->requires_grad;
  }
  return c;
}

/// Learnable prefix of L rows in decoder input-embedding space. L may be 0.
struct SoftPrompt {
  TensorPtr p;  // [L x d]

  std::size_t length() const { return p ? p->rows() : 0; }
};

inline SoftPrompt make_prompt(std::size_t length, std::size_t d, std::uint64_t seed, double stddev = 0.02) {
  Rng rng(derive_seed(seed, "prompt-init"));
  std::vector<double> v(length * d);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return SoftPrompt{ad::parameter({length, d}, std::move(v))};
}

/// Number of scalars added by a length-L prompt in a d-dimensional decoder.
constexpr std::size_t count_prompt_params(std::size_t length, std::size_t d) {
  if (length < 1 || d < 1) throw InputError("count_prompt_params: L and d must be >= 1");
  return length * d;
}

struct DecodeConfig {
  double temperature = 0.0;  // 0 selects greedy decoding
  std::size_t max_len = 32;
  std::uint64_t seed = 0;
};

struct Hypothesis {
  std::vector<int> tokens;              // ends with eos unless truncated at max_len
  std::vector<double> token_log_probs;  // temperature-1 log-probabilities
  double temperature = 0.0;
  std::optional<double> reward;

  std::string text() const { return decode_text(tokens); }
  double log_prob() const {
    double s = 0.0;
    for (double v : token_log_probs) s += v;
    return s;
  }
  bool operator==(const Hypothesis&) const = default;
};

// ---------------------------------------------------------------------------
// Forward pass

inline std::vector<double> sinusoidal_positions(std::size_t n, std::size_t d, std::size_t offset = 0) {
  std::vector<double> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos + offset) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = std::sin(angle);
      if (i + 1 < d) pe[pos * d + i + 1] = std::cos(angle);
    }
  return pe;
}

/// Clamps to the top `range` nats below the utterance peak and maps to [-1, 1].
inline std::vector<double> normalize_input(const signal::LogMelSpectrogram& s, double range) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : s.values) peak = std::max(peak, v);
  std::vector<double> out(s.values.size());
  const double half = range / 2.0;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (std::max(s.values[i], peak - range) - peak + half) / half;
  return out;
}

inline TensorPtr linear(Tape& tape, const TensorPtr& x, const Linear& l) {
  return tape.add_row(tape.matmul(x, l.w), l.b);
}

inline TensorPtr norm(Tape& tape, const TensorPtr& x, const Norm& n) {
  return tape.layer_norm(x, n.gain, n.bias);
}

/// Multi-head attention of queries `xq` over precomputed keys/values.
inline TensorPtr attend(Tape& tape, const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                        std::size_t n_heads, long causal_offset, const Linear& out_proj) {
  const std::size_t d = q->cols(), dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<TensorPtr> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    auto qh = tape.slice_cols(q, h * dh, dh);
    auto kh = tape.slice_cols(k, h * dh, dh);
    auto vh = tape.slice_cols(v, h * dh, dh);
    auto scores = tape.scale(tape.matmul_nt(qh, kh), scale);
    heads.push_back(tape.matmul(tape.softmax_rows(scores, causal_offset), vh));
  }
  return linear(tape, n_heads == 1 ? heads.front() : tape.concat_cols(heads), out_proj);
}

inline TensorPtr feed_forward(Tape& tape, const TensorPtr& x, const Linear& in, const Linear& out) {
  return linear(tape, tape.gelu(linear(tape, x, in)), out);
}

/// Encoder output plus the per-layer cross-attention keys and values.
struct EncoderState {
  TensorPtr hidden;  // [T x d]
  std::vector<std::pair<TensorPtr, TensorPtr>> cross_kv;
};

/// Encodes a log-mel spectrogram into one hidden vector per frame.
inline TensorPtr encode(Tape& tape, const signal::LogMelSpectrogram& s, const ModelParams& params) {
  const auto& cfg = params.cfg;
  if (s.n_mels != cfg.n_mels)
    throw ShapeError("encode: spectrogram has " + std::to_string(s.n_mels) + " mel bins, model expects " +
                     std::to_string(cfg.n_mels));
  if (s.n_frames == 0) throw ShapeError("encode: spectrogram has no frames");
  const std::size_t t = s.n_frames, d = cfg.d_model;
  auto x = ad::constant({t, cfg.n_mels}, normalize_input(s, cfg.input_range));
  auto h = linear(tape, x, params.input);
  h = tape.add(h, ad::constant({t, d}, sinusoidal_positions(t, d)));
  for (const auto& layer : params.encoder) {
    auto a = norm(tape, h, layer.ln_attn);
    auto q = linear(tape, a, layer.attn.q);
    auto k = linear(tape, a, layer.attn.k);
    auto v = linear(tape, a, layer.attn.v);
    h = tape.add(h, attend(tape, q, k, v, cfg.n_heads, -1, layer.attn.o));
    h = tape.add(h, feed_forward(tape, norm(tape, h, layer.ln_ff), layer.ff_in, layer.ff_out));
  }
  return norm(tape, h, params.encoder_norm);
}

inline EncoderState prepare_cross(Tape& tape, TensorPtr hidden, const ModelParams& params) {
  EncoderState st;
  st.hidden = std::move(hidden);
  for (const auto& layer : params.decoder)
    st.cross_kv.emplace_back(linear(tape, st.hidden, layer.cross_attn.k),
                             linear(tape, st.hidden, layer.cross_attn.v));
  return st;
}

inline EncoderState encode_state(Tape& tape, const signal::LogMelSpectrogram& s, const ModelParams& params) {
  return prepare_cross(tape, encode(tape, s, params), params);
}

/// Runs the decoder over [prompt rows; embeddings of `tokens`] and returns
/// logits for every position, [L + n x vocab]. Prompt rows occupy
/// positions 0..L-1 and text positions are shifted by L.
inline TensorPtr decoder_logits(Tape& tape, const EncoderState& enc, std::span<const int> tokens,
                                const SoftPrompt* prompt, const ModelParams& params) {
  const auto& cfg = params.cfg;
  const std::size_t d = cfg.d_model;
  auto tok = tape.scale(tape.gather_rows(params.embedding, tokens), std::sqrt(static_cast<double>(d)));
  TensorPtr x = tok;
  if (prompt && prompt->p) {
    if (prompt->p->cols() != d)
      throw ShapeError("prompt width " + std::to_string(prompt->p->cols()) + " != d_model " + std::to_string(d));
    x = tape.concat_rows({prompt->p, tok});
  }
  const std::size_t n = x->rows();
  x = tape.add(x, ad::constant({n, d}, sinusoidal_positions(n, d)));
  for (std::size_t i = 0; i < params.decoder.size(); ++i) {
    const auto& layer = params.decoder[i];
    auto a = norm(tape, x, layer.ln_self);
    auto q = linear(tape, a, layer.self_attn.q);
    auto k = linear(tape, a, layer.self_attn.k);
    auto v = linear(tape, a, layer.self_attn.v);
    x = tape.add(x, attend(tape, q, k, v, cfg.n_heads, 0, layer.self_attn.o));
    auto c = linear(tape, norm(tape, x, layer.ln_cross), layer.cross_attn.q);
    x = tape.add(x, attend(tape, c, enc.cross_kv[i].first, enc.cross_kv[i].second, cfg.n_heads, -1,
                           layer.cross_attn.o));
    x = tape.add(x, feed_forward(tape, norm(tape, x, layer.ln_ff), layer.ff_in, layer.ff_out));
  }
  x = norm(tape, x, params.decoder_norm);
  return tape.matmul_nt(x, params.embedding);
}

inline void check_prefix(std::span<const int> prefix) {
  if (prefix.empty() || prefix.front() != kBos) throw InputError("decoder prefix must begin with bos");
  for (int t : prefix)
    if (t < 0 || t >= kVocab) throw InputError("decoder prefix holds an out-of-vocabulary id");
}

/// Next-token logits after `prefix` (which starts with bos).
inline std::vector<double> decode_logits(const EncoderState& enc, std::span<const int> prefix,
                                         const SoftPrompt* prompt, const ModelParams& params) {
  check_prefix(prefix);
  auto tape = Tape::inference();
  auto logits = decoder_logits(tape, enc, prefix, prompt, params);
  const std::size_t v = logits->cols(), last = logits->rows() - 1;
  return {logits->data.begin() + static_cast<long>(last * v), logits->data.begin() + static_cast<long>((last + 1) * v)};
}

// ---------------------------------------------------------------------------
// Token distributions

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

/// P_t(y) proportional to exp(log P(y) / t), for t > 0.
inline std::vector<double> tempered_probs(std::span<const double> logits, double temperature) {
  if (!(temperature > 0)) throw InputError("tempered_probs: temperature must be > 0");
  const auto lp = log_softmax(logits);
  const double mx = *std::max_element(lp.begin(), lp.end());
  std::vector<double> p(lp.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) sum += (p[i] = std::exp((lp[i] - mx) / temperature));
  for (auto& v : p) v /= sum;
  return p;
}

/// Index of the maximum; ties go to the lowest index.
inline int argmax(std::span<const double> xs) {
  int best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

/// Inverse-CDF draw over ids in ascending order with one uniform variate.
inline int sample_index(std::span<const double> probs, double u) {
  double cum = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) last_positive = static_cast<int>(i);
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  return last_positive;
}

// ---------------------------------------------------------------------------
// Decoding

/// Greedy (cfg.temperature == 0) or temperature sampling (cfg.temperature > 0).
inline Hypothesis generate(const EncoderState& enc, const SoftPrompt* prompt, const ModelParams& params,
                           const DecodeConfig& cfg) {
  if (cfg.temperature < 0) throw InputError("decode: temperature must be >= 0");
  if (cfg.max_len < 1) throw InputError("decode: max_len must be >= 1");
  Rng rng(derive_seed(cfg.seed, "sample-decode"));
  Hypothesis h;
  h.temperature = cfg.temperature;
  std::vector<int> prefix{kBos};
  while (h.tokens.size() < cfg.max_len) {
    const auto logits = decode_logits(enc, prefix, prompt, params);
    const auto lp = log_softmax(logits);
    int tok;
    if (cfg.temperature == 0.0) {
      tok = argmax(logits);
    } else {
      tok = sample_index(tempered_probs(logits, cfg.temperature), rng.uniform());
    }
    h.tokens.push_back(tok);
    h.token_log_probs.push_back(lp[static_cast<std::size_t>(tok)]);
    if (tok == kEos) break;
    prefix.push_back(tok);
  }
  return h;
}

inline Hypothesis greedy_decode(const EncoderState& enc, const SoftPrompt* prompt, const ModelParams& params,
                                std::size_t max_len = 32) {
  return generate(enc, prompt, params, DecodeConfig{0.0, max_len, 0});
}

inline Hypothesis greedy_decode(const signal::LogMelSpectrogram& s, const SoftPrompt* prompt,
                                const ModelParams& params, std::size_t max_len = 32) {
  auto tape = Tape::inference();
  return greedy_decode(encode_state(tape, s, params), prompt, params, max_len);
}

inline Hypothesis sample_decode(const EncoderState& enc, const SoftPrompt* prompt, const ModelParams& params,
                                const DecodeConfig& cfg) {
  if (!(cfg.temperature > 0)) throw InputError("sample_decode: temperature must be > 0");
  return generate(enc, prompt, params, cfg);
}

inline Hypothesis sample_decode(const signal::LogMelSpectrogram& s, const SoftPrompt* prompt,
                                const ModelParams& params, const DecodeConfig& cfg) {
  auto tape = Tape::inference();
  return sample_decode(encode_state(tape, s, params), prompt, params, cfg);
}

/// Differentiable log P(tokens | s, prompt) at temperature 1. `tokens` are
/// the emitted ids (bos is prepended internally).
inline TensorPtr sequence_log_prob(Tape& tape, const EncoderState& enc, std::span<const int> tokens,
                                   const SoftPrompt* prompt, const ModelParams& params) {
  if (tokens.empty()) throw InputError("sequence_log_prob: empty token sequence");
  std::vector<int> input{kBos};
  input.insert(input.end(), tokens.begin(), tokens.end() - 1);
  auto logits = decoder_logits(tape, enc, input, prompt, params);
  const std::size_t offset = prompt ? prompt->length() : 0;
  auto rows = tape.slice_rows(logits, offset, tokens.size());
  auto lp = tape.log_softmax_rows(rows);
  std::vector<std::size_t> r(tokens.size()), c(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    r[i] = i;
    c[i] = static_cast<std::size_t>(tokens[i]);
  }
  return tape.sum(tape.pick(lp, r, c));
}

/// Teacher-forced targets for a transcript: its symbols followed by eos.
inline std::vector<int> target_tokens(std::string_view text) {
  auto ids = encode_text(text);
  ids.push_back(kEos);
  return ids;
}

/// Mean per-token log-probability of a hypothesis.
inline double confidence(const Hypothesis& h) {
  return h.tokens.empty() ? 0.0 : h.log_prob() / static_cast<double>(h.tokens.size());
}

}  // namespace asrtra::model
