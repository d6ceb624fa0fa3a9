#pragma once

// Synthetic two-domain image sets for exercising the training loops without
// audio: sinusoidal stripes varying along columns (bass side) or rows (drums
// side), random period and phase per image.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "stemgan/audio_io.hpp"
#include "stemgan/dataset.hpp"

namespace stemgan::models {

enum class StripeOrientation { vertical, horizontal };

inline LevelMatrix stripe_image(int size, StripeOrientation o, double period, double phase) {
  LevelMatrix m(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double t = o == StripeOrientation::vertical ? c : r;
      const double v = 127.5 + 110.0 * std::sin(2.0 * std::numbers::pi * (t + phase) / period);
      m(r, c) = static_cast<std::uint8_t>(std::lround(v));
    }
  return m;
}

/// `count` chunks with offsets 0..count-1 under song id "stripes".
inline std::vector<Chunk> stripe_chunks(StripeOrientation o, int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> period(4.0, 16.0), phase(0.0, 16.0);
  std::vector<Chunk> out;
  const Domain d = o == StripeOrientation::vertical ? Domain::bass : Domain::drums;
  for (int i = 0; i < count; ++i) {
    const double p = period(rng);
    out.push_back({stripe_image(size, o, p, phase(rng)), "stripes", i, d});
  }
  return out;
}

/// Writes <root>/song<k>/{bass,drums}.wav: a bass line of sine notes and a
/// drum track of decaying noise hits on a steady pulse. Draws use raw engine
/// output only, so the files are identical across standard libraries.
inline void write_synthetic_stems(const std::filesystem::path& root, int songs, double seconds,
                                  std::uint64_t seed, int sample_rate = 22050) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  const auto n = static_cast<std::size_t>(seconds * sample_rate);
  for (int s = 0; s < songs; ++s) {
    const auto dir = root / ("song" + std::to_string(s));
    std::filesystem::create_directories(dir);
    Waveform bass{std::vector<double>(n), sample_rate, 1};
    Waveform drums{std::vector<double>(n), sample_rate, 1};
    const auto note_len = static_cast<std::size_t>(sample_rate * (0.25 + 0.25 * uniform()));
    double freq = 0.0, phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % note_len == 0) freq = 40.0 + 80.0 * uniform();
      phase += 2.0 * std::numbers::pi * freq / sample_rate;
      bass.samples[i] = 0.5 * std::sin(phase);
    }
    const auto beat = static_cast<std::size_t>(sample_rate * (0.3 + 0.2 * uniform()));
    const double decay = 0.01 + 0.03 * uniform();
    for (std::size_t start = 0; start < n; start += beat) {
      const double gain = 0.3 + 0.5 * uniform();
      for (std::size_t i = start; i < n && i < start + beat; ++i)
        drums.samples[i] = gain * (2.0 * uniform() - 1.0) *
                           std::exp(-static_cast<double>(i - start) / (decay * sample_rate));
    }
    write_wav(dir / "bass.wav", bass);
    write_wav(dir / "drums.wav", drums);
  }
}

}  // namespace stemgan::models
