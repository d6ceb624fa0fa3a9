#include <cmath>
#include <cstdint>
#include <fstream>

#include "stemgan/audio_io.hpp"
#include "stemgan/spectral.hpp"
#include "test_util.hpp"

using namespace stemgan;

namespace {

void write_raw_wav(const std::filesystem::path& p, std::uint16_t format, std::uint16_t channels,
                   std::uint16_t bits, const std::string& payload, std::uint32_t rate = 22050) {
  std::string out = "RIFF";
  detail::put_u32(out, 36 + static_cast<std::uint32_t>(payload.size()));
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, format);
  detail::put_u16(out, channels);
  detail::put_u32(out, rate);
  detail::put_u32(out, rate * channels * bits / 8);
  detail::put_u16(out, static_cast<std::uint16_t>(channels * bits / 8));
  detail::put_u16(out, bits);
  out += "data";
  detail::put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out += payload;
  std::ofstream(p, std::ios::binary) << out;
}

}  // namespace

TEST(ReadWav, MaxScaleSample) {
  testutil::TempDir dir("wav");
  std::string payload;
  detail::put_u16(payload, 32767);
  write_raw_wav(dir / "max.wav", 1, 1, 16, payload);
  const Waveform w = read_wav(dir / "max.wav");
  ASSERT_EQ(w.samples.size(), 1u);
  EXPECT_NEAR(w.samples[0], 0.99997, 1e-5);
}

TEST(ReadWav, ZerosKeepHeaderRate) {
  testutil::TempDir dir("wav");
  write_raw_wav(dir / "z.wav", 1, 1, 16, std::string(200, '\0'), 44100);
  const Waveform w = read_wav(dir / "z.wav");
  EXPECT_EQ(w.samples.size(), 100u);
  EXPECT_EQ(w.sample_rate, 44100);
  for (double s : w.samples) EXPECT_EQ(s, 0.0);
}

TEST(ReadWav, FloatStereoIsNotDownmixed) {
  testutil::TempDir dir("wav");
  std::string payload;
  for (float f : {0.5f, -0.5f, 0.25f, 0.75f}) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    detail::put_u32(payload, u);
  }
  write_raw_wav(dir / "f.wav", 3, 2, 32, payload);
  const Waveform w = read_wav(dir / "f.wav");
  EXPECT_EQ(w.channels, 2);
  ASSERT_EQ(w.samples.size(), 4u);
  EXPECT_EQ(w.samples[1], -0.5);
  const Waveform m = to_mono(w);
  EXPECT_EQ(m.samples, (std::vector<double>{0.0, 0.5}));
}

TEST(ReadWav, DistinctErrors) {
  testutil::TempDir dir("wav");
  auto code_of = [](const std::filesystem::path& p) {
    try {
      read_wav(p);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::invalid_argument;
  };
  EXPECT_EQ(code_of(dir / "nope.wav"), Errc::missing_file);
  std::ofstream(dir / "junk.wav") << "definitely not audio";
  EXPECT_EQ(code_of(dir / "junk.wav"), Errc::malformed_header);
  write_raw_wav(dir / "pcm24.wav", 1, 1, 24, std::string(6, '\0'));
  EXPECT_EQ(code_of(dir / "pcm24.wav"), Errc::unsupported_encoding);
  write_raw_wav(dir / "quad.wav", 1, 4, 16, std::string(16, '\0'));
  EXPECT_EQ(code_of(dir / "quad.wav"), Errc::unsupported_encoding);
}

TEST(WriteWav, ZerosAndClipping) {
  testutil::TempDir dir("wav");
  Waveform z;
  z.samples.assign(1000, 0.0);
  write_wav(dir / "z.wav", z);
  const Waveform back = read_wav(dir / "z.wav");
  EXPECT_EQ(back.samples, z.samples);
  EXPECT_EQ(std::filesystem::file_size(dir / "z.wav"), 44u + 2000u);

  Waveform loud;
  loud.samples = {1.7, -3.0, 0.5};
  write_wav(dir / "loud.wav", loud);
  const Waveform clipped = read_wav(dir / "loud.wav");
  EXPECT_NEAR(clipped.samples[0], 1.0, 1.0 / 32768);
  EXPECT_EQ(clipped.samples[1], -1.0);
  EXPECT_EQ(clipped.samples[2], 0.5);
}

TEST(WriteWav, RoundTripWithinOneStepProperty) {
  testutil::TempDir dir("wav");
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Waveform w;
    w.samples = testutil::random_signal(500 + trial * 37, rng, 1.0);
    w.samples.push_back(1.0);
    w.samples.push_back(-1.0);
    write_wav(dir / "r.wav", w);
    const Waveform back = read_wav(dir / "r.wav");
    ASSERT_EQ(back.samples.size(), w.samples.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      worst = std::max(worst, std::abs(back.samples[i] - w.samples[i]));
    EXPECT_LE(worst, 1.0 / 32768);
  }
}

TEST(ToMono, ChannelMean) {
  Waveform s;
  s.channels = 2;
  s.samples = {0.5, -0.5, 0.2, 0.4};
  const Waveform m = to_mono(s);
  EXPECT_EQ(m.channels, 1);
  EXPECT_DOUBLE_EQ(m.samples[0], 0.0);
  EXPECT_DOUBLE_EQ(m.samples[1], 0.3);

  Waveform mono;
  mono.samples = {0.1, 0.2};
  EXPECT_EQ(to_mono(mono).samples, mono.samples);

  Waveform three;
  three.channels = 3;
  three.samples.assign(6, 0.0);
  EXPECT_THROW(to_mono(three), Error);
}

TEST(Resample, LengthAndIdentity) {
  std::mt19937_64 rng(3);
  Waveform w;
  w.sample_rate = 44100;
  w.samples = testutil::random_signal(1000, rng);
  EXPECT_EQ(resample(w, 22050).samples.size(), 500u);
  EXPECT_EQ(resample(w, 44100).samples, w.samples);
  EXPECT_THROW(resample(w, 0), Error);
}

TEST(Resample, DurationPreservedWithinOneSample) {
  std::mt19937_64 rng(5);
  for (int rate : {8000, 16000, 22050, 32000, 48000}) {
    Waveform w;
    w.sample_rate = 44100;
    w.samples = testutil::random_signal(4410 + rate % 97, rng);
    const Waveform r = resample(w, rate);
    EXPECT_NEAR(r.duration(), w.duration(), 1.0 / rate);
  }
}

TEST(Resample, ToneKeepsItsBin) {
  Waveform w;
  w.sample_rate = 44100;
  w.samples.resize(44100);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * i / 44100.0);
  const Waveform r = resample(w, 22050);
  const auto p = power(stft(r, {2048, 512, WindowKind::hann}));
  const Eigen::VectorXd spectrum = p.values.rowwise().sum();
  Eigen::Index peak;
  spectrum.maxCoeff(&peak);
  const double bin_hz = 22050.0 / 2048;
  EXPECT_NEAR(peak * bin_hz, 440.0, bin_hz);
  // Energy outside the Hann main lobe stays below 1% of the main lobe.
  double lobe = 0.0, rest = 0.0;
  for (Eigen::Index k = 0; k < spectrum.size(); ++k)
    (std::abs(k - peak) <= 3 ? lobe : rest) += spectrum[k];
  EXPECT_LT(rest, 0.01 * lobe);
}
