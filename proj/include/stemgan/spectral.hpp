#pragma once

// Forward time-frequency transforms: STFT, power spectrogram, mel filterbank,
// dB compression and 8-bit quantization.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "stemgan/audio_io.hpp"
#include "stemgan/error.hpp"

namespace stemgan {

using RealMatrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::MatrixXcd;
using LevelMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class WindowKind { hann, rectangular };

struct StftParams {
  int window_len = 2048;
  int hop = 512;
  WindowKind window = WindowKind::hann;
};

/// Bins x frames, one-sided (window_len / 2 + 1 rows).
struct ComplexSpectrogram {
  ComplexMatrix values;
  StftParams params;
  int sample_rate = 22050;

  Eigen::Index bins() const { return values.rows(); }
  Eigen::Index frames() const { return values.cols(); }
};

struct MagnitudeSpectrogram {
  RealMatrix values;
  StftParams params;
  int sample_rate = 22050;
};

struct FilterBank {
  RealMatrix weights;  // n_mels x bins
  double fmin = 0.0;
  double fmax = 0.0;
  int sample_rate = 22050;
  int window_len = 2048;

  Eigen::Index n_mels() const { return weights.rows(); }
};

struct MelSpectrogram {
  RealMatrix values;  // n_mels x frames
  StftParams params;
  int sample_rate = 22050;
};

/// Periodic window, so that Hann at hop N/4 satisfies constant overlap-add.
inline std::vector<double> make_window(WindowKind kind, int n) {
  std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  if (kind == WindowKind::hann)
    for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

/// Number of frames M + 1 for a signal of `length` samples; frames start at
/// sample 0 and only complete windows count.
inline Eigen::Index frame_count(std::size_t length, int window_len, int hop) {
  if (length < static_cast<std::size_t>(window_len)) return 0;
  return static_cast<Eigen::Index>((length - window_len) / hop) + 1;
}

inline ComplexSpectrogram stft(const Waveform& w, const StftParams& p = {}) {
  require(w.channels == 1, Errc::invalid_argument, "stft expects mono audio");
  require(p.hop >= 1 && p.window_len >= 2 && p.window_len % 2 == 0, Errc::invalid_argument,
          "stft needs an even window length and a positive hop");
  require(w.samples.size() >= static_cast<std::size_t>(p.window_len), Errc::invalid_argument,
          "signal shorter than one window");
  const int n = p.window_len;
  const Eigen::Index frames = frame_count(w.samples.size(), n, p.hop);
  const auto window = make_window(p.window, n);

  ComplexSpectrogram out;
  out.params = p;
  out.sample_rate = w.sample_rate;
  out.values.resize(n / 2 + 1, frames);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> bins;
  for (Eigen::Index m = 0; m < frames; ++m) {
    const std::size_t start = static_cast<std::size_t>(m) * p.hop;
    for (int i = 0; i < n; ++i) frame[i] = w.samples[start + i] * window[i];
    fft.fwd(bins, frame);
    for (int k = 0; k <= n / 2; ++k) out.values(k, m) = bins[k];
  }
  return out;
}

inline MagnitudeSpectrogram power(const ComplexSpectrogram& spec) {
  MagnitudeSpectrogram out;
  out.params = spec.params;
  out.sample_rate = spec.sample_rate;
  out.values = spec.values.unaryExpr([](const std::complex<double>& z) { return std::norm(z); });
  return out;
}

inline double hz_to_mel(double f) {
  require(f >= 0.0, Errc::invalid_argument, "negative frequency");
  return 2595.0 * std::log10(1.0 + f / 700.0);
}

inline double mel_to_hz(double m) {
  require(m >= 0.0, Errc::invalid_argument, "negative mel value");
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

struct MelParams {
  int n_mels = 256;
  int window_len = 2048;
  int sample_rate = 22050;
  double fmin = 0.0;
  double fmax = -1.0;  // negative means sample_rate / 2
};

/// Triangular filters with unit peak. Filter i rises from mel point i to
/// point i + 1 and falls to point i + 2; the n_mels + 2 points are equally
/// spaced on the mel axis between fmin and fmax.
inline FilterBank mel_filterbank(const MelParams& p = {}) {
  const double nyquist = p.sample_rate / 2.0;
  const double fmax = p.fmax < 0.0 ? nyquist : p.fmax;
  require(p.n_mels >= 1, Errc::invalid_argument, "n_mels must be at least 1");
  require(fmax <= nyquist, Errc::invalid_argument, "fmax above Nyquist");
  require(p.fmin >= 0.0 && p.fmin < fmax, Errc::invalid_argument, "need 0 <= fmin < fmax");

  const double mel_lo = hz_to_mel(p.fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(p.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (p.n_mels + 1));

  const int bins = p.window_len / 2 + 1;
  FilterBank fb;
  fb.fmin = p.fmin;
  fb.fmax = fmax;
  fb.sample_rate = p.sample_rate;
  fb.window_len = p.window_len;
  fb.weights = RealMatrix::Zero(p.n_mels, bins);
  for (int m = 0; m < p.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * p.sample_rate / p.window_len;
      double v = 0.0;
      if (f > left && f <= center) v = (f - left) / (center - left);
      else if (f > center && f < right) v = (right - f) / (right - center);
      fb.weights(m, k) = v;
    }
  }
  return fb;
}

inline MelSpectrogram mel_project(const MagnitudeSpectrogram& y, const FilterBank& fb) {
  require(fb.weights.cols() == y.values.rows(), Errc::shape_mismatch,
          "filterbank has " + std::to_string(fb.weights.cols()) + " columns, spectrogram " +
              std::to_string(y.values.rows()) + " bins");
  MelSpectrogram out;
  out.params = y.params;
  out.sample_rate = y.sample_rate;
  out.values.noalias() = fb.weights * y.values;
  return out;
}

inline constexpr double kPowerFloor = 1e-10;

/// 10 log10(v / max), clipped to [floor_db, 0]. A matrix with no energy
/// maps entirely to floor_db.
inline RealMatrix power_to_db(const RealMatrix& m, double floor_db = -80.0) {
  const double peak = m.size() ? m.maxCoeff() : 0.0;
  if (peak <= kPowerFloor) return RealMatrix::Constant(m.rows(), m.cols(), floor_db);
  return m.unaryExpr([&](double v) {
    const double db = 10.0 * std::log10(std::max(v, kPowerFloor) / peak);
    return std::clamp(db, floor_db, 0.0);
  });
}

/// Relative power with the peak at 1.
inline RealMatrix db_to_power(const RealMatrix& db) {
  return db.unaryExpr([](double v) { return std::pow(10.0, v / 10.0); });
}

/// floor_db -> 0, 0 dB -> 255, round half to even.
inline LevelMatrix quantize(const RealMatrix& db, double floor_db = -80.0) {
  return db.unaryExpr([&](double v) {
    const double x = std::clamp(v, floor_db, 0.0);
    const double level = std::nearbyint((x - floor_db) / -floor_db * 255.0);
    return static_cast<std::uint8_t>(level);
  });
}

inline RealMatrix dequantize(const LevelMatrix& levels, double floor_db = -80.0) {
  return levels.cast<double>().unaryExpr(
      [&](double l) { return floor_db * (1.0 - l / 255.0); });
}

/// Full analysis chain for one mono waveform: STFT, power, mel projection,
/// dB compression and quantization.
inline LevelMatrix mel_levels(const Waveform& w, const FilterBank& fb, const StftParams& p,
                              double floor_db) {
  const auto mel = mel_project(power(stft(w, p)), fb);
  return quantize(power_to_db(mel.values, floor_db), floor_db);
}

}  // namespace stemgan
