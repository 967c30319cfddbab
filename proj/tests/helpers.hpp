#pragma once

#include <cstdint>
#include <vector>

#include "asrtra/autodiff.hpp"
#include "asrtra/rng.hpp"

namespace asrtra::testing {

inline std::vector<double> uniform_values(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline ad::TensorPtr random_param(Rng& rng, std::size_t rows, std::size_t cols, double lo = -2.0, double hi = 2.0) {
  return ad::parameter({rows, cols}, uniform_values(rng, rows * cols, lo, hi));
}

inline ad::TensorPtr random_const(Rng& rng, std::size_t rows, std::size_t cols, double lo = -2.0, double hi = 2.0) {
  return ad::constant({rows, cols}, uniform_values(rng, rows * cols, lo, hi));
}

/// Scalar readout with fixed random weights, so gradients are not uniform.
inline ad::TensorPtr readout(ad::Tape& tape, const ad::TensorPtr& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto w = ad::constant(y->shape, uniform_values(rng, y->size(), -1.0, 1.0));
  return tape.sum(tape.mul(y, w));
}

}  // namespace asrtra::testing

#include "asrtra/model.hpp"
#include "asrtra/signal.hpp"

namespace asrtra::testing {

inline model::ModelConfig tiny_model_config() {
  model::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  return cfg;
}

inline signal::LogMelSpectrogram test_mel(const std::string& text, std::uint64_t seed, double snr_db = 10.0) {
  auto w = signal::synthesize(text, seed);
  w = signal::add_noise(w, signal::NoiseSpec{signal::NoiseKind::gaussian, snr_db, seed});
  return signal::log_mel(w);
}

}  // namespace asrtra::testing
