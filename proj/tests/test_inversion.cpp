#include <chrono>

#include "stemgan/inversion.hpp"
#include "test_util.hpp"

using namespace stemgan;

namespace {

Waveform three_sines(double seconds, int rate = 22050) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    w.samples[i] = 0.5 * std::sin(2 * std::numbers::pi * 220.0 * t) +
                   0.3 * std::sin(2 * std::numbers::pi * 660.0 * t + 0.4) +
                   0.2 * std::sin(2 * std::numbers::pi * 1760.0 * t + 1.1);
  }
  return w;
}

MelSpectrogram mel_of(const RealMatrix& values) {
  MelSpectrogram m;
  m.values = values;
  return m;
}

}  // namespace

TEST(Istft, InvertsStftOnRandomSignals) {
  std::mt19937_64 rng(7);
  const StftParams p;
  for (int trial = 0; trial < 5; ++trial) {
    Waveform w;
    w.samples = testutil::random_signal(2 * 22050, rng);
    const auto back = istft(stft(w, p));
    // Sample 0 sits under the single zero of the periodic Hann window.
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 1; i < back.samples.size(); ++i) {
      err += std::pow(back.samples[i] - w.samples[i], 2);
      ref += w.samples[i] * w.samples[i];
    }
    EXPECT_LT(std::sqrt(err / ref), 1e-6);
  }
}

TEST(Istft, ZeroAndSingleFrame) {
  ComplexSpectrogram z;
  z.values = ComplexMatrix::Zero(1025, 4);
  for (double s : istft(z).samples) EXPECT_EQ(s, 0.0);

  Waveform w;
  w.samples.resize(2048);
  for (int i = 0; i < 2048; ++i) w.samples[i] = std::sin(0.05 * i);
  const auto back = istft(stft(w));
  ASSERT_EQ(back.samples.size(), 2048u);
  for (int i = 1; i < 2048; ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1e-9);
}

TEST(Istft, RejectsBadWindowHopPairs) {
  ComplexSpectrogram s;
  s.params = {2048, 2048, WindowKind::hann};
  s.values = ComplexMatrix::Zero(1025, 3);
  EXPECT_THROW(istft(s), Error);
  s.params = {16, 17, WindowKind::rectangular};
  s.values = ComplexMatrix::Zero(9, 3);
  EXPECT_THROW(istft(s), Error);
  s.params = {16, 16, WindowKind::rectangular};
  EXPECT_NO_THROW(istft(s));
}

TEST(MelToLinear, IdentityFilterbankIsExact) {
  FilterBank fb;
  fb.weights = RealMatrix::Identity(5, 5);
  std::mt19937_64 rng(8);
  const RealMatrix y = RealMatrix::NullaryExpr(5, 3, [&] { return std::uniform_real_distribution<>(0, 1)(rng); });
  const auto r = mel_to_linear(mel_of(y), fb);
  EXPECT_LT((r.linear.values - y).norm(), 1e-12);
  EXPECT_LT(r.relative_residual, 1e-12);
}

TEST(MelToLinear, ZeroMelGivesZero) {
  const auto fb = mel_filterbank({32, 256});
  const auto r = mel_to_linear(mel_of(RealMatrix::Zero(32, 4)), fb);
  EXPECT_EQ(r.linear.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MelToLinear, ConsistentInstancesProperty) {
  const auto fb = mel_filterbank({});
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    Waveform w;
    w.samples = testutil::random_signal(22050, rng);
    const RealMatrix y = power(stft(w)).values;
    const auto r = mel_to_linear(mel_of(fb.weights * y), fb);
    EXPECT_LT(r.relative_residual, 1e-3);
    EXPECT_GE(r.linear.values.minCoeff(), 0.0);
    for (std::size_t i = 1; i < r.residual_history.size(); ++i)
      EXPECT_LE(r.residual_history[i], r.residual_history[i - 1] * (1 + 1e-12));
  }
}

TEST(MelToLinear, ShapeMismatchAndNonFinite) {
  const auto fb = mel_filterbank({32, 256});
  EXPECT_THROW(mel_to_linear(mel_of(RealMatrix::Zero(31, 2)), fb), Error);
  RealMatrix bad = RealMatrix::Zero(32, 2);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(mel_to_linear(mel_of(bad), fb), Error);
}

TEST(GriffinLim, SineConvergesAndIsMonotone) {
  Waveform w;
  w.samples.resize(22050);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = std::sin(2 * std::numbers::pi * 440.0 * i / 22050.0);
  const RealMatrix mag = stft(w).values.cwiseAbs();
  const auto r = griffin_lim(mag, StftParams{}, 22050, 60);
  ASSERT_EQ(r.convergence.size(), 60u);
  // Frozen from an independent numpy implementation of the same iteration
  // (zero initial phase, WOLA inverse, no centering).
  EXPECT_NEAR(r.convergence.back(), 0.17408108525980476, 1e-9);
  EXPECT_LT(r.convergence.back(), r.convergence.front());
  for (std::size_t i = 1; i < r.convergence.size(); ++i)
    EXPECT_LE(r.convergence[i], r.convergence[i - 1] + 1e-9);
}

TEST(GriffinLim, ZeroMagnitudeIsSilent) {
  const auto r = griffin_lim(RealMatrix::Zero(1025, 5), StftParams{}, 22050, 3);
  for (double s : r.signal.samples) EXPECT_EQ(s, 0.0);
}

TEST(Pipeline, ThreeSineMixtureMelToAudio) {
  const auto start = std::chrono::steady_clock::now();
  const auto w = three_sines(2.0);
  const auto fb = mel_filterbank({});
  const RealMatrix mag = stft(w).values.cwiseAbs();
  const auto mel = mel_project(power(stft(w)), fb);
  const auto lin = mel_to_linear(mel, fb);
  EXPECT_LT(lin.relative_residual, 1e-3);
  const RealMatrix amp = lin.linear.values.cwiseSqrt();
  const auto gl = griffin_lim(amp, StftParams{}, 22050, 60);
  for (std::size_t i = 1; i < gl.convergence.size(); ++i) EXPECT_LE(gl.convergence[i], gl.convergence[i - 1] + 1e-9);
  const double against_source = spectral_convergence(stft(gl.signal), mag);
  std::printf("mel residual %.3g, GL SC %.4f, SC vs source %.4f\n", lin.relative_residual, gl.convergence.back(),
              against_source);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
}

TEST(Pipeline, ChunksBackToWaveform) {
  const SpectralConfig cfg;
  const auto fb = cfg.filterbank();
  Waveform w = three_sines(6.1);
  const auto levels = mel_levels(w, fb, cfg.stft, cfg.floor_db);
  const auto chunks = chunk(levels, cfg.geometry, "s");
  ASSERT_EQ(chunks.size(), 1u);
  const InversionConfig inv;
  const auto out = mel_chunks_to_waveform(chunks, fb, cfg, inv);
  EXPECT_EQ(out.signal.samples.size(), static_cast<std::size_t>(255 * 512 + 2048));
  EXPECT_THROW(mel_chunks_to_waveform({}, fb, cfg, inv), Error);

  // Round trip through the levels: mean log-spectral distance in the mel domain.
  const auto again = mel_levels(out.signal, fb, cfg.stft, cfg.floor_db);
  const auto a = dequantize(levels.leftCols(again.cols()), cfg.floor_db);
  const auto b = dequantize(again, cfg.floor_db);
  const double lsd = (a - b).cwiseAbs().mean();
  std::printf("mean mel dB distance %.3f\n", lsd);
  EXPECT_LT(lsd, 3.0);
}

TEST(NormalizePeak, ScalesAndLeavesSilence) {
  Waveform w;
  w.samples = {0.1, -0.5, 0.2};
  EXPECT_NEAR(normalize_peak(w).samples[1], -0.95, 1e-15);
  Waveform z;
  z.samples = {0.0, 0.0};
  EXPECT_EQ(normalize_peak(z).samples, z.samples);
}
