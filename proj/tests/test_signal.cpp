#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "asrtra/signal.hpp"

using namespace asrtra;
using namespace asrtra::signal;

TEST(Synthesis, LengthAndPeak) {
  const auto w = synthesize("abc", 7);
  EXPECT_EQ(w.size(), 3 * kSymbolSamples);
  EXPECT_EQ(w.sample_rate, kSampleRate);
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 1.0, 1e-12);
}

TEST(Synthesis, DeterministicInSeed) {
  EXPECT_EQ(synthesize("hello", 3), synthesize("hello", 3));
  EXPECT_NE(synthesize("hello", 3), synthesize("hello", 4));
}

TEST(Synthesis, RejectsBadText) {
  EXPECT_THROW(synthesize("", 1), InputError);
  EXPECT_THROW(synthesize("abz", 1), InputError);
}

TEST(Synthesis, SymbolFrequenciesSpanTheBand) {
  EXPECT_NEAR(symbol_frequency(0), kMinToneHz, 1e-9);
  EXPECT_NEAR(symbol_frequency(15), kMaxToneHz, 1e-9);
  for (int k = 1; k < 16; ++k) EXPECT_GT(symbol_frequency(k), symbol_frequency(k - 1));
}

TEST(Noise, NoneKindParsesAndRoundTrips) {
  for (auto k : {NoiseKind::none, NoiseKind::gaussian, NoiseKind::tonal_babble, NoiseKind::impulse_bursts})
    EXPECT_EQ(parse_noise_kind(to_string(k)), k);
  EXPECT_THROW(parse_noise_kind("pink"), InputError);
}

class SnrCalibration : public ::testing::TestWithParam<std::tuple<NoiseKind, double>> {};

TEST_P(SnrCalibration, MixtureHitsTargetSnr) {
  const auto [kind, snr] = GetParam();
  const auto clean = synthesize("abcdefgh", 11);
  const auto mix = mix_noise(clean, NoiseSpec{kind, snr, 5});
  const double measured = 10.0 * std::log10(mean_power(clean.samples) / mean_power(mix.noise));
  EXPECT_NEAR(measured, snr, 1e-9);
}

INSTANTIATE_TEST_SUITE_P(KindsAndLevels, SnrCalibration,
                         ::testing::Combine(::testing::ValuesIn(kNoiseKinds), ::testing::Values(-5.0, 0.0, 10.0, 20.0)),
                         [](const auto& info) {
                           const double db = std::get<1>(info.param);
                           return std::string(to_string(std::get<0>(info.param))) + "_" +
                                  (db < 0 ? "minus" + std::to_string(static_cast<int>(-db)) : std::to_string(static_cast<int>(db))) + "dB";
                         });

TEST(Noise, CleanSpecIsIdentity) {
  const auto clean = synthesize("abc", 2);
  EXPECT_EQ(add_noise(clean, NoiseSpec{NoiseKind::gaussian, INFINITY, 1}), clean);
  EXPECT_EQ(add_noise(clean, NoiseSpec{NoiseKind::none, 10.0, 1}), clean);
}

TEST(Noise, ZeroPowerSignalIsRejected) {
  Waveform silent{std::vector<double>(1000, 0.0)};
  EXPECT_THROW(add_noise(silent, NoiseSpec{NoiseKind::gaussian, 10.0, 1}), InputError);
  EXPECT_THROW(add_noise(Waveform{}, NoiseSpec{}), InputError);
}

TEST(Noise, DeterministicInSeed) {
  EXPECT_EQ(make_noise(NoiseKind::tonal_babble, 500, 9), make_noise(NoiseKind::tonal_babble, 500, 9));
  EXPECT_NE(make_noise(NoiseKind::impulse_bursts, 4000, 9), make_noise(NoiseKind::impulse_bursts, 4000, 10));
}

TEST(Frontend, FrameCount) {
  FrontendConfig cfg;
  EXPECT_EQ(frame_count(255, cfg), 0u);
  EXPECT_EQ(frame_count(256, cfg), 1u);
  EXPECT_EQ(frame_count(640, cfg), 4u);
  const auto m = log_mel(synthesize("abcd", 1), cfg);
  EXPECT_EQ(m.n_frames, frame_count(4 * kSymbolSamples, cfg));
  EXPECT_EQ(m.n_mels, 26u);
  EXPECT_EQ(m.values.size(), m.n_frames * m.n_mels);
}

TEST(Frontend, ShortInputThrows) {
  EXPECT_THROW(log_mel(Waveform{std::vector<double>(100, 0.1)}), InputError);
}

TEST(Frontend, SilenceIsFiniteFloor) {
  const auto m = log_mel(Waveform{std::vector<double>(1024, 0.0)});
  for (double v : m.values) EXPECT_DOUBLE_EQ(v, std::log(1e-10));
}

TEST(Frontend, FilterbankIsNonNegativeAndPeaksAtCenters) {
  FrontendConfig cfg;
  const auto fb = mel_filterbank(cfg);
  const std::size_t n_bins = cfg.window / 2 + 1;
  for (double w : fb) {
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
  }
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    double row = 0.0;
    for (std::size_t k = 0; k < n_bins; ++k) row += fb[m * n_bins + k];
    EXPECT_GT(row, 0.0) << "empty filter " << m;
  }
}

TEST(Frontend, PowerSpectrumMatchesDirectDft) {
  const std::size_t n = 64;
  Rng rng(4);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal();
  std::vector<double> power(n / 2 + 1);
  detail::RealFft fft(n);
  fft.power_spectrum(x, power);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> s = 0.0;
    for (std::size_t t = 0; t < n; ++t)
      s += x[t] * std::polar(1.0, -2.0 * M_PI * static_cast<double>(k * t) / static_cast<double>(n));
    EXPECT_NEAR(power[k], std::norm(s), 1e-9 * (1.0 + std::norm(s)));
  }
}

TEST(Frontend, ToneEnergyPeaksInNearestBand) {
  FrontendConfig cfg;
  const auto centers = mel_centers(cfg);
  for (double f : {300.0, 800.0, 1500.0, 2500.0}) {
    Waveform w;
    w.samples.resize(2048);
    for (std::size_t i = 0; i < w.size(); ++i) w.samples[i] = std::sin(2.0 * M_PI * f * static_cast<double>(i) / kSampleRate);
    const auto m = log_mel(w, cfg);
    std::size_t best = 0;
    for (std::size_t b = 1; b < cfg.n_mels; ++b)
      if (m.at(b, 2) > m.at(best, 2)) best = b;
    std::size_t nearest = 0;
    for (std::size_t b = 1; b < cfg.n_mels; ++b)
      if (std::abs(centers[b] - f) < std::abs(centers[nearest] - f)) nearest = b;
    EXPECT_LE(std::abs(static_cast<long>(best) - static_cast<long>(nearest)), 1) << f << " Hz";
  }
}

TEST(Frontend, MelScaleRoundTrips) {
  for (double hz : {0.0, 100.0, 1000.0, 3999.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
}
