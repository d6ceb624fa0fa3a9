#pragma once

// PCM WAV reading/writing, down-mixing and band-limited resampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "stemgan/error.hpp"

namespace stemgan {

/// Interleaved samples in [-1, 1]. Mono unless produced by read_wav from a
/// stereo file.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 22050;
  int channels = 1;

  std::size_t frames() const { return channels > 0 ? samples.size() / channels : 0; }
  double duration() const { return static_cast<double>(frames()) / sample_rate; }
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error(Errc::malformed_header, path.string() + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::size_t size = read_u32(hdr + 4);
    std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Some writers leave a bogus data size; clamp to what is present.
      if (std::memcmp(hdr, "data", 4) == 0) size = bytes.size() - body;
      else throw Error(Errc::malformed_header, path.string() + ": truncated chunk");
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) throw Error(Errc::malformed_header, path.string() + ": short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (format == 0xFFFE && size >= 26) format = read_u16(f + 24);  // extensible
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt || data == nullptr)
    throw Error(Errc::malformed_header, path.string() + ": missing fmt or data chunk");
  if (rate == 0 || channels == 0)
    throw Error(Errc::malformed_header, path.string() + ": zero rate or channel count");
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw Error(Errc::unsupported_encoding, path.string() + ": format " +
                                                std::to_string(format) + ", " +
                                                std::to_string(bits) + " bits");
  if (channels > 2)
    throw Error(Errc::unsupported_encoding,
                path.string() + ": " + std::to_string(channels) + " channels");

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.channels = channels;
  const std::size_t width = bits / 8;
  const std::size_t count = data_size / width / channels * channels;
  w.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = data + i * width;
    if (pcm16) {
      w.samples[i] = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    } else {
      std::uint32_t u = read_u32(p);
      float f;
      std::memcpy(&f, &u, sizeof f);
      w.samples[i] = std::isfinite(f) ? f : 0.0;
    }
  }
  return w;
}

/// Writes 16-bit PCM. Samples outside [-1, 1] are clipped.
inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  require(w.sample_rate > 0 && w.channels >= 1, Errc::invalid_argument, "invalid waveform");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, static_cast<std::uint16_t>(w.channels));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate * w.channels * 2));
  detail::put_u16(out, static_cast<std::uint16_t>(w.channels * 2));
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double s : w.samples) {
    double c = std::clamp(std::isfinite(s) ? s : 0.0, -1.0, 1.0);
    long q = std::lround(c * 32768.0);
    q = std::clamp(q, -32768L, 32767L);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(Errc::io_failure, "write failed: " + path.string());
}

/// Channel mean. Mono input is returned unchanged.
inline Waveform to_mono(const Waveform& w) {
  if (w.channels == 1) return w;
  require(w.channels == 2, Errc::invalid_argument,
          "to_mono supports 1 or 2 channels, got " + std::to_string(w.channels));
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(w.frames());
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] = 0.5 * (w.samples[2 * i] + w.samples[2 * i + 1]);
  return out;
}

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace detail

/// Windowed-sinc interpolation with a 64-tap Kaiser window (beta 8.6). The
/// cutoff follows the lower of the two Nyquist rates.
inline Waveform resample(const Waveform& w, int target_rate) {
  require(target_rate > 0, Errc::invalid_argument, "target rate must be positive");
  require(w.channels == 1, Errc::invalid_argument, "resample expects mono audio");
  if (target_rate == w.sample_rate) return w;

  constexpr int kHalfTaps = 32;
  constexpr double kBeta = 8.6;
  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  constexpr int kTable = 8192;
  std::vector<double> kaiser(kTable + 2);
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);
  for (int i = 0; i <= kTable + 1; ++i) {
    const double r = std::min(1.0, static_cast<double>(i) / kTable);
    kaiser[i] = std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
  }
  const auto n_in = static_cast<long>(w.samples.size());
  const auto n_out = static_cast<std::size_t>(std::llround(n_in * ratio));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (std::size_t j = 0; j < n_out; ++j) {
    const double t = static_cast<double>(j) / ratio;
    const auto base = static_cast<long>(std::floor(t));
    double acc = 0.0;
    for (long k = base - kHalfTaps + 1; k <= base + kHalfTaps; ++k) {
      if (k < 0 || k >= n_in) continue;
      const double tau = t - static_cast<double>(k);
      const double r = std::abs(tau) / kHalfTaps;
      if (r >= 1.0) continue;
      const double pos = r * kTable;
      const auto idx = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(idx);
      const double window = kaiser[idx] + frac * (kaiser[idx + 1] - kaiser[idx]);
      acc += w.samples[static_cast<std::size_t>(k)] * cutoff * detail::sinc(cutoff * tau) * window;
    }
    out.samples[j] = acc;
  }
  return out;
}

}  // namespace stemgan
