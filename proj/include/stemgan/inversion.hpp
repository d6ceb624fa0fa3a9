#pragma once

// Mel-spectrogram to waveform: non-negative least-squares mel -> linear
// inversion, overlap-add ISTFT and Griffin-Lim phase reconstruction.

#include <Eigen/Sparse>
#include <cmath>
#include <limits>
#include <vector>

#include "stemgan/dataset.hpp"
#include "stemgan/spectral.hpp"

namespace stemgan {

struct InversionConfig {
  int max_iters = 500;
  double step_size = 1.0;  // first trial step of the backtracking search
  double tol = 1e-5;       // stop when the relative objective decrease falls below this
  int gl_iters = 60;

  void validate() const {
    require(max_iters >= 1, Errc::invalid_argument, "max_iters must be at least 1");
    require(step_size > 0.0, Errc::invalid_argument, "step_size must be positive");
    require(tol >= 0.0 && gl_iters >= 0, Errc::invalid_argument, "tol and gl_iters must be non-negative");
  }
};

struct MelInversion {
  MagnitudeSpectrogram linear;            // power, bins x frames
  double relative_residual = 0.0;         // ||Mel - fb Y|| / ||Mel||
  int iterations = 0;
  std::vector<double> residual_history;   // relative residual per iterate, starting at Y0
};

/// Projected gradient descent on 0.5 ||Mel - fb Y||_F^2 over Y >= 0, starting
/// from fb^T Mel. Each step backtracks until the projected-step sufficient
/// decrease condition holds, so the objective never increases.
inline MelInversion mel_to_linear(const MelSpectrogram& mel, const FilterBank& fb,
                                  const InversionConfig& cfg = {}) {
  cfg.validate();
  require(fb.weights.rows() == mel.values.rows(), Errc::shape_mismatch,
          "filterbank has " + std::to_string(fb.weights.rows()) + " rows, mel spectrogram " +
              std::to_string(mel.values.rows()) + " bins");
  require(mel.values.allFinite(), Errc::non_finite, "mel spectrogram has non-finite entries");

  const Eigen::SparseMatrix<double> a = fb.weights.sparseView();
  const Eigen::SparseMatrix<double> at = a.transpose();
  const RealMatrix& target = mel.values;
  const double target_norm = target.norm();

  MelInversion out;
  out.linear.params = mel.params;
  out.linear.sample_rate = mel.sample_rate;
  RealMatrix y = (at * target).cwiseMax(0.0);
  RealMatrix resid = a * y - target;
  double f = 0.5 * resid.squaredNorm();
  auto relative = [&](double obj) { return target_norm > 0 ? std::sqrt(2.0 * obj) / target_norm : 0.0; };
  out.residual_history.push_back(relative(f));

  double step = cfg.step_size;
  for (int it = 0; it < cfg.max_iters && f > 0.0; ++it) {
    const RealMatrix grad = at * resid;
    RealMatrix y_new, resid_new;
    double f_new = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      y_new = (y - step * grad).cwiseMax(0.0);
      const RealMatrix delta = y_new - y;
      resid_new = a * y_new - target;
      f_new = 0.5 * resid_new.squaredNorm();
      if (!std::isfinite(f_new))
        throw Error(Errc::non_finite, "mel inversion diverged; reduce step_size");
      const double bound = f + (grad.array() * delta.array()).sum() + delta.squaredNorm() / (2.0 * step);
      if (f_new <= bound || delta.squaredNorm() == 0.0) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || f_new > f) break;
    const double improvement = (f - f_new) / f;
    y.swap(y_new);
    resid.swap(resid_new);
    f = f_new;
    ++out.iterations;
    out.residual_history.push_back(relative(f));
    if (improvement < cfg.tol) break;
    step *= 2.0;  // let the search grow again after a successful step
  }
  out.relative_residual = relative(f);
  out.linear.values = std::move(y);
  return out;
}

namespace detail {

// Sum over frames of w^2(n - m hop), the overlap-add normalizer.
inline std::vector<double> window_energy(const std::vector<double>& window, int hop, Eigen::Index frames) {
  const auto n = static_cast<Eigen::Index>(window.size());
  std::vector<double> e(static_cast<std::size_t>((frames - 1) * hop + n), 0.0);
  for (Eigen::Index m = 0; m < frames; ++m)
    for (Eigen::Index i = 0; i < n; ++i) e[static_cast<std::size_t>(m * hop + i)] += window[i] * window[i];
  return e;
}

// Steady-state check that sum_m w^2(n - m hop) has no zeros.
inline void check_cola(const std::vector<double>& window, int hop) {
  const int n = static_cast<int>(window.size());
  require(hop >= 1 && hop <= n, Errc::invalid_argument,
          "hop " + std::to_string(hop) + " leaves gaps between windows of length " + std::to_string(n));
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (int r = 0; r < hop; ++r) {
    double s = 0.0;
    for (int i = r; i < n; i += hop) s += window[i] * window[i];
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  require(hi > 0.0 && lo > 1e-8 * hi, Errc::invalid_argument,
          "window/hop pair violates the overlap-add condition");
}

}  // namespace detail

/// Weighted overlap-add inverse with the analysis window as synthesis
/// window, normalized by sum_m w^2(n - m hop). Positions where that sum
/// vanishes (the outer edge of a Hann window) come out as zero.
inline Waveform istft(const ComplexSpectrogram& spec) {
  const StftParams& p = spec.params;
  const int n = p.window_len;
  require(spec.bins() == n / 2 + 1, Errc::shape_mismatch, "spectrogram bin count does not match window");
  require(spec.frames() >= 1, Errc::empty_input, "spectrogram has no frames");
  const auto window = make_window(p.window, n);
  detail::check_cola(window, p.hop);

  const auto energy = detail::window_energy(window, p.hop, spec.frames());
  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.assign(energy.size(), 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> bins(static_cast<std::size_t>(n / 2 + 1));
  std::vector<double> frame;
  for (Eigen::Index m = 0; m < spec.frames(); ++m) {
    for (int k = 0; k <= n / 2; ++k) bins[k] = spec.values(k, m);
    fft.inv(frame, bins, n);
    const std::size_t start = static_cast<std::size_t>(m) * p.hop;
    for (int i = 0; i < n; ++i) out.samples[start + i] += frame[i] * window[i];
  }
  for (std::size_t i = 0; i < energy.size(); ++i)
    out.samples[i] = energy[i] > 0.0 ? out.samples[i] / energy[i] : 0.0;
  return out;
}

/// ||  |S| - mag ||_F / ||mag||_F
inline double spectral_convergence(const ComplexSpectrogram& s, const RealMatrix& mag) {
  const double denom = mag.norm();
  if (denom == 0.0) return s.values.cwiseAbs().norm() == 0.0 ? 0.0 : 1.0;
  return (s.values.cwiseAbs() - mag).norm() / denom;
}

struct GriffinLimResult {
  Waveform signal;
  std::vector<double> convergence;  // spectral convergence after each iteration
};

/// Alternating projections starting from zero phase. `mag` holds STFT
/// amplitudes (not power) on the given STFT grid.
inline GriffinLimResult griffin_lim(const RealMatrix& mag, const StftParams& params, int sample_rate,
                                    int iterations) {
  require((mag.array() >= 0.0).all(), Errc::invalid_argument, "magnitudes must be non-negative");
  require(mag.allFinite(), Errc::non_finite, "magnitudes must be finite");
  ComplexSpectrogram current;
  current.params = params;
  current.sample_rate = sample_rate;
  current.values = mag.cast<std::complex<double>>();

  GriffinLimResult result;
  for (int it = 0; it < iterations; ++it) {
    const Waveform x = istft(current);
    const ComplexSpectrogram rebuilt = stft(x, params);
    result.convergence.push_back(spectral_convergence(rebuilt, mag));
    current.values = rebuilt.values.binaryExpr(mag, [](const std::complex<double>& z, double a) {
      const double r = std::abs(z);
      return r > 0.0 ? z * (a / r) : std::complex<double>(a, 0.0);
    });
  }
  result.signal = istft(current);
  return result;
}

inline GriffinLimResult griffin_lim(const MagnitudeSpectrogram& mag, const InversionConfig& cfg = {}) {
  return griffin_lim(mag.values, mag.params, mag.sample_rate, cfg.gl_iters);
}

struct ChunkInversion {
  Waveform signal;
  double mel_residual = 0.0;
  double spectral_convergence = 0.0;
};

/// Generated chunks back to audio: assemble the levels, dequantize to dB,
/// convert to relative power, invert the mel projection, take the square
/// root and run Griffin-Lim.
inline ChunkInversion mel_chunks_to_waveform(const std::vector<Chunk>& chunks, const FilterBank& fb,
                                             const SpectralConfig& spectral,
                                             const InversionConfig& cfg = {}) {
  require(!chunks.empty(), Errc::empty_input, "no chunks to invert");
  const LevelMatrix levels = assemble(chunks, spectral.geometry.overlap);
  MelSpectrogram mel;
  mel.params = spectral.stft;
  mel.sample_rate = spectral.sample_rate;
  mel.values = db_to_power(dequantize(levels, spectral.floor_db));
  const MelInversion lin = mel_to_linear(mel, fb, cfg);
  const RealMatrix amplitude = lin.linear.values.cwiseSqrt();
  GriffinLimResult gl = griffin_lim(amplitude, spectral.stft, spectral.sample_rate, cfg.gl_iters);
  ChunkInversion out;
  out.signal = std::move(gl.signal);
  out.mel_residual = lin.relative_residual;
  out.spectral_convergence = gl.convergence.empty() ? 0.0 : gl.convergence.back();
  return out;
}

/// Scales a waveform so its peak sits at `peak` (silence is left alone).
inline Waveform normalize_peak(Waveform w, double peak = 0.95) {
  double m = 0.0;
  for (double s : w.samples) m = std::max(m, std::abs(s));
  if (m > 0.0)
    for (double& s : w.samples) s *= peak / m;
  return w;
}

}  // namespace stemgan
