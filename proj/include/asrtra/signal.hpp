#pragma once

// Synthetic tone-speech: waveform synthesis, additive noise at a target SNR,
// and the log-mel frontend.

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asrtra/error.hpp"
#include "asrtra/rng.hpp"

namespace asrtra::signal {

inline constexpr int kSampleRate = 8000;
inline constexpr std::size_t kSymbolSamples = 640;  // 80 ms at 8 kHz
inline constexpr std::string_view kAlphabet = "abcdefghijklmnop";
inline constexpr double kMinToneHz = 200.0;
inline constexpr double kMaxToneHz = 2800.0;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const noexcept { return samples.size(); }
  bool operator==(const Waveform&) const = default;
};

/// F x T log-energies, stored frame-major (`frames * n_mels`), i.e. each
/// frame is a contiguous row of mel bins.
struct LogMelSpectrogram {
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  std::vector<double> values;

  double at(std::size_t mel, std::size_t frame) const { return values[frame * n_mels + mel]; }
  bool operator==(const LogMelSpectrogram&) const = default;
};

enum class NoiseKind { none, gaussian, tonal_babble, impulse_bursts };

inline std::string_view to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::tonal_babble: return "tonal_babble";
    case NoiseKind::impulse_bursts: return "impulse_bursts";
  }
  return "none";
}

inline NoiseKind parse_noise_kind(std::string_view s) {
  if (s == "none") return NoiseKind::none;
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "tonal_babble") return NoiseKind::tonal_babble;
  if (s == "impulse_bursts") return NoiseKind::impulse_bursts;
  throw InputError("unknown noise kind '" + std::string(s) + "'");
}

inline constexpr std::array<NoiseKind, 3> kNoiseKinds = {
    NoiseKind::gaussian, NoiseKind::tonal_babble, NoiseKind::impulse_bursts};

/// snr_db == +infinity means "no noise".
struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double snr_db = 10.0;
  std::uint64_t seed = 0;

  bool is_clean() const { return kind == NoiseKind::none || std::isinf(snr_db); }
};

// ---------------------------------------------------------------------------
// Alphabet

inline int symbol_index(char c) {
  const auto pos = kAlphabet.find(c);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

inline bool valid_text(std::string_view text) {
  return !text.empty() &&
         std::all_of(text.begin(), text.end(), [](char c) { return symbol_index(c) >= 0; });
}

/// Base frequency of symbol k, evenly spaced in log frequency over 200-2800 Hz.
inline double symbol_frequency(int k) {
  const double steps = static_cast<double>(kAlphabet.size() - 1);
  return kMinToneHz * std::pow(kMaxToneHz / kMinToneHz, static_cast<double>(k) / steps);
}

// ---------------------------------------------------------------------------
// Synthesis

inline void peak_normalize(std::vector<double>& x) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : x) v /= peak;
}

/// Voice-dependent frequency multiplier drawn from [0.9, 1.1].
inline double voice_multiplier(std::uint64_t voice_seed) {
  Rng rng(derive_seed(voice_seed, "voice-multiplier"));
  return rng.uniform(0.9, 1.1);
}

/// Renders `text` as consecutive 80 ms tones, one per symbol.
///
/// The voice seed fixes a per-utterance frequency multiplier and per-segment
/// amplitude and phase. Segments get 10 ms raised-cosine edges.
inline Waveform synthesize(std::string_view text, std::uint64_t voice_seed) {
  if (text.empty()) throw InputError("synthesize: empty text");
  for (char c : text)
    if (symbol_index(c) < 0)
      throw InputError(std::string("synthesize: symbol '") + c + "' not in alphabet");

  const double mult = voice_multiplier(voice_seed);
  Rng rng(derive_seed(voice_seed, "voice-envelope"));
  constexpr std::size_t ramp = 80;
  Waveform w;
  w.samples.resize(text.size() * kSymbolSamples);
  for (std::size_t s = 0; s < text.size(); ++s) {
    const double f = symbol_frequency(symbol_index(text[s])) * mult;
    const double amp = rng.uniform(0.55, 1.0);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (std::size_t i = 0; i < kSymbolSamples; ++i) {
      double env = 1.0;
      if (i < ramp) env = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i) / ramp);
      if (i >= kSymbolSamples - ramp)
        env = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(kSymbolSamples - 1 - i) / ramp);
      const double t = static_cast<double>(i) / kSampleRate;
      w.samples[s * kSymbolSamples + i] = amp * env * std::sin(2.0 * M_PI * f * t + phase);
    }
  }
  peak_normalize(w.samples);
  return w;
}

// ---------------------------------------------------------------------------
// Noise

inline double mean_power(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

/// Unscaled noise of the given family; deterministic in (kind, length, seed).
inline std::vector<double> make_noise(NoiseKind kind, std::size_t length, std::uint64_t seed) {
  std::vector<double> n(length, 0.0);
  Rng rng(derive_seed(seed, to_string(kind)));
  switch (kind) {
    case NoiseKind::none:
      break;
    case NoiseKind::gaussian:
      for (auto& v : n) v = rng.normal();
      break;
    case NoiseKind::tonal_babble: {
      // Six competing tones wandering in frequency with syllable-rate
      // amplitude modulation.
      for (int voice = 0; voice < 6; ++voice) {
        const double f0 = kMinToneHz * std::pow(kMaxToneHz / kMinToneHz, rng.uniform());
        const double drift_rate = rng.uniform(0.5, 3.0);
        const double drift_phase = rng.uniform(0.0, 2.0 * M_PI);
        const double depth = rng.uniform(0.05, 0.25);
        const double am_rate = rng.uniform(2.0, 6.0);
        const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
        const double amp = rng.uniform(0.4, 1.0);
        double phase = rng.uniform(0.0, 2.0 * M_PI);
        for (std::size_t i = 0; i < length; ++i) {
          const double t = static_cast<double>(i) / kSampleRate;
          const double f = f0 * std::exp(depth * std::sin(2.0 * M_PI * drift_rate * t + drift_phase));
          phase += 2.0 * M_PI * f / kSampleRate;
          const double am = 0.6 + 0.4 * std::sin(2.0 * M_PI * am_rate * t + am_phase);
          n[i] += amp * am * std::sin(phase);
        }
      }
      break;
    }
    case NoiseKind::impulse_bursts: {
      // Decaying broadband bursts at ~8 events per second over a faint floor.
      for (auto& v : n) v = 0.02 * rng.normal();
      const double rate = 8.0 / kSampleRate;
      std::size_t i = 0;
      while (true) {
        const double gap = -std::log(1.0 - rng.uniform()) / rate;
        i += static_cast<std::size_t>(gap) + 1;
        if (i >= length) break;
        const double amp = rng.uniform(0.3, 1.0);
        const double tau = rng.uniform(0.005, 0.02) * kSampleRate;
        const auto span = static_cast<std::size_t>(5.0 * tau);
        for (std::size_t j = 0; j < span && i + j < length; ++j)
          n[i + j] += amp * std::exp(-static_cast<double>(j) / tau) * rng.normal();
      }
      break;
    }
  }
  if (kind != NoiseKind::none && mean_power(n) == 0.0) n[0] = 1e-3;
  return n;
}

/// The scaled noise component and the un-normalized mixture.
struct NoiseMix {
  std::vector<double> noise;
  std::vector<double> mixture;
};

inline NoiseMix mix_noise(const Waveform& clean, const NoiseSpec& spec) {
  if (clean.samples.empty()) throw InputError("add_noise: empty waveform");
  if (!std::isfinite(spec.snr_db) && !std::isinf(spec.snr_db))
    throw InputError("add_noise: snr_db is NaN");
  const double ps = mean_power(clean.samples);
  if (ps == 0.0) throw InputError("add_noise: clean signal has zero power");
  NoiseMix mix;
  mix.noise.assign(clean.size(), 0.0);
  if (!spec.is_clean()) {
    mix.noise = make_noise(spec.kind, clean.size(), spec.seed);
    const double pn = mean_power(mix.noise);
    const double gain = std::sqrt(ps / (pn * std::pow(10.0, spec.snr_db / 10.0)));
    for (auto& v : mix.noise) v *= gain;
  }
  mix.mixture.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) mix.mixture[i] = clean.samples[i] + mix.noise[i];
  return mix;
}

/// Adds noise so that 10 log10(Ps / Pn) equals `spec.snr_db`, then
/// re-normalizes the peak. A clean spec returns the input unchanged.
inline Waveform add_noise(const Waveform& clean, const NoiseSpec& spec) {
  if (spec.is_clean()) {
    if (clean.samples.empty()) throw InputError("add_noise: empty waveform");
    return clean;
  }
  auto mix = mix_noise(clean, spec);
  peak_normalize(mix.mixture);
  return Waveform{std::move(mix.mixture), clean.sample_rate};
}

// ---------------------------------------------------------------------------
// Log-mel frontend

struct FrontendConfig {
  std::size_t window = 256;
  std::size_t hop = 128;
  std::size_t n_mels = 26;
  double f_min = 0.0;
  double f_max = 4000.0;
  double floor = 1e-10;
  int sample_rate = kSampleRate;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Center frequencies (Hz) of the triangular filters.
inline std::vector<double> mel_centers(const FrontendConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> c(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m)
    c[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(cfg.n_mels + 1));
  return c;
}

/// n_mels x (window/2 + 1) triangular weights over FFT bin frequencies.
inline std::vector<double> mel_filterbank(const FrontendConfig& cfg) {
  const std::size_t n_bins = cfg.window / 2 + 1;
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  std::vector<double> fb(cfg.n_mels * n_bins, 0.0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.window);
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb[m * n_bins + k] = w;
    }
  }
  return fb;
}

inline std::size_t frame_count(std::size_t n_samples, const FrontendConfig& cfg) {
  if (n_samples < cfg.window) return 0;
  return 1 + (n_samples - cfg.window) / cfg.hop;
}

namespace detail {

// FFTW planning is not thread-safe; execution with new-array calls is.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    std::lock_guard lock(planner_mutex());
    auto* in = fftw_alloc_real(n);
    auto* out = fftw_alloc_complex(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }

  /// Writes |X_k|^2 for k = 0..n/2 into `power`.
  void power_spectrum(std::span<const double> frame, std::span<double> power) const {
    auto* in = fftw_alloc_real(n_);
    auto* out = fftw_alloc_complex(n_ / 2 + 1);
    std::copy(frame.begin(), frame.end(), in);
    fftw_execute_dft_r2c(plan_, in, out);
    for (std::size_t k = 0; k <= n_ / 2; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    fftw_free(in);
    fftw_free(out);
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }
  std::size_t n_;
  fftw_plan plan_;
};

}  // namespace detail

/// Hann-windowed STFT -> power -> triangular mel filterbank -> ln(E + floor).
inline LogMelSpectrogram log_mel(const Waveform& wave, const FrontendConfig& cfg = {}) {
  if (wave.size() < cfg.window)
    throw InputError("log_mel: waveform of " + std::to_string(wave.size()) +
                     " samples is shorter than one window (" + std::to_string(cfg.window) + ")");
  static thread_local std::optional<detail::RealFft> fft;
  static thread_local std::size_t fft_size = 0;
  if (!fft || fft_size != cfg.window) {
    fft.reset();
    fft.emplace(cfg.window);
    fft_size = cfg.window;
  }
  const std::size_t n_bins = cfg.window / 2 + 1;
  const auto fb = mel_filterbank(cfg);
  std::vector<double> hann(cfg.window);
  for (std::size_t i = 0; i < cfg.window; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(cfg.window));

  LogMelSpectrogram out;
  out.n_mels = cfg.n_mels;
  out.n_frames = frame_count(wave.size(), cfg);
  out.values.resize(out.n_mels * out.n_frames);
  std::vector<double> frame(cfg.window), power(n_bins);
  for (std::size_t t = 0; t < out.n_frames; ++t) {
    for (std::size_t i = 0; i < cfg.window; ++i) frame[i] = wave.samples[t * cfg.hop + i] * hann[i];
    fft->power_spectrum(frame, power);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += fb[m * n_bins + k] * power[k];
      out.values[t * cfg.n_mels + m] = std::log(e + cfg.floor);
    }
  }
  return out;
}

}  // namespace asrtra::signal
