#include <fstream>
#include <set>
#include <sstream>

#include "stemgan/dataset.hpp"
#include "test_util.hpp"

using namespace stemgan;

namespace {

LevelMatrix random_levels(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 255);
  return LevelMatrix::NullaryExpr(rows, cols, [&] { return static_cast<std::uint8_t>(u(rng)); });
}

// Brute-force sliding window: every start s with s % stride == 0 and
// s + width <= T.
std::size_t naive_chunk_count(std::size_t t, int width, int stride) {
  std::size_t n = 0;
  for (std::size_t s = 0; s + width <= t; ++s)
    if (s % stride == 0) ++n;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_tone(const std::filesystem::path& p, double seconds, double freq, int rate = 22050) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.3 * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate) *
                   (0.6 + 0.4 * std::sin(static_cast<double>(i) / rate * 3.0));
  write_wav(p, w);
}

}  // namespace

TEST(Chunk, FullSizeStrideCounts) {
  std::mt19937_64 rng(1);
  const ChunkGeometry g;
  EXPECT_EQ(g.stride(), 206);
  auto offsets = [&](Eigen::Index t) {
    std::vector<int> o;
    for (const auto& c : chunk(random_levels(4, t, rng), g)) o.push_back(c.offset);
    return o;
  };
  EXPECT_EQ(offsets(256), (std::vector<int>{0}));
  EXPECT_EQ(offsets(462), (std::vector<int>{0, 206}));
  EXPECT_EQ(offsets(461), (std::vector<int>{0}));
  EXPECT_EQ(chunk_count(2557, g), 12u);
  EXPECT_THROW(chunk(random_levels(4, 255, rng), g), Error);
}

TEST(Chunk, CountMatchesSlidingWindowOracleProperty) {
  for (int width : {8, 64, 256})
    for (int overlap : {0, 3, width / 5, width - 1}) {
      const ChunkGeometry g{width, overlap};
      for (std::size_t t = width; t < static_cast<std::size_t>(width) * 6; t += 7)
        EXPECT_EQ(chunk_count(t, g), naive_chunk_count(t, width, g.stride())) << width << "/" << overlap << "/" << t;
    }
}

TEST(Assemble, SingleChunkIsIdentity) {
  std::mt19937_64 rng(2);
  const auto m = random_levels(16, 256, rng);
  EXPECT_EQ(assemble(chunk(m)), m);
}

TEST(Assemble, RoundTripOutsideCrossfadeProperty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const ChunkGeometry g{32, 7};
    const auto m = random_levels(6, 32 + 25 * (trial + 1), rng);
    const auto chunks = chunk(m, g, "song");
    const auto back = assemble(chunks, g.overlap);
    ASSERT_EQ(back.rows(), m.rows());
    ASSERT_EQ(back.cols(), static_cast<Eigen::Index>((chunks.size() - 1) * g.stride() + g.width));
    // Original content agrees on both sides of every overlap, so the blend
    // of two equal values reproduces it everywhere.
    EXPECT_EQ(back, m.leftCols(back.cols()));
  }
}

TEST(Assemble, CrossfadeBlendsDifferingContentWithinRange) {
  const ChunkGeometry g{8, 3};
  Chunk a{LevelMatrix::Constant(2, 8, 0), "s", 0, Domain::drums};
  Chunk b{LevelMatrix::Constant(2, 8, 200), "s", 5, Domain::drums};
  const auto m = assemble({b, a}, g.overlap);
  ASSERT_EQ(m.cols(), 13);
  EXPECT_EQ(m(0, 4), 0);
  EXPECT_EQ(m(0, 5), 50);   // w = 1/4
  EXPECT_EQ(m(0, 6), 100);  // w = 2/4
  EXPECT_EQ(m(0, 7), 150);  // w = 3/4
  EXPECT_EQ(m(0, 8), 200);
}

TEST(Assemble, RejectsGapsAndDuplicates) {
  Chunk a{LevelMatrix::Zero(2, 8), "s", 0, Domain::bass};
  Chunk gap{LevelMatrix::Zero(2, 8), "s", 10, Domain::bass};
  Chunk dup{LevelMatrix::Zero(2, 8), "s", 0, Domain::bass};
  EXPECT_THROW(assemble({a, gap}, 3), Error);
  EXPECT_THROW(assemble({a, dup}, 3), Error);
  EXPECT_THROW(assemble({}, 3), Error);
}

TEST(Pgm, RoundTripAndHeader) {
  testutil::TempDir dir("pgm");
  std::mt19937_64 rng(4);
  const auto m = random_levels(256, 256, rng);
  write_pgm(dir / "c.pgm", m);
  EXPECT_EQ(read_pgm(dir / "c.pgm"), m);
  const std::string bytes = slurp(dir / "c.pgm");
  EXPECT_EQ(bytes.substr(0, 15), "P5\n256 256\n255\n");
  EXPECT_EQ(bytes.size(), 15u + 256u * 256u);
  std::ofstream(dir / "bad.pgm") << "P2\n1 1\n255\n0";
  EXPECT_THROW(read_pgm(dir / "bad.pgm"), Error);
}

TEST(Ingest, SkipsIncompleteSongs) {
  testutil::TempDir dir("ingest");
  for (std::string s : {"a", "b", "c", "d"}) {
    std::filesystem::create_directories(dir / s);
    write_tone(dir.path() / s / "bass.wav", 0.1, 110);
    if (s != "c") write_tone(dir.path() / s / "drums.wav", 0.1, 220);
  }
  const auto report = ingest_stems(dir.path());
  ASSERT_EQ(report.manifest.entries.size(), 3u);
  EXPECT_EQ(report.manifest.entries[2].song_id, "d");
  ASSERT_EQ(report.skipped.size(), 1u);
  EXPECT_NE(report.skipped[0].find("c: missing drums.wav"), std::string::npos);

  write_manifest(dir / "m.tsv", report.manifest);
  const auto back = read_manifest(dir / "m.tsv");
  ASSERT_EQ(back.entries.size(), 3u);
  EXPECT_EQ(back.entries[1].drums, report.manifest.entries[1].drums);
  EXPECT_EQ(back.fingerprint, report.manifest.fingerprint);
}

TEST(Ingest, EmptyDirectoryWarns) {
  testutil::TempDir dir("ingest");
  const auto report = ingest_stems(dir.path());
  EXPECT_TRUE(report.manifest.entries.empty());
  EXPECT_EQ(report.warnings.size(), 1u);
  EXPECT_THROW(ingest_stems(dir / "missing"), Error);
}

TEST(Ingest, MusdbStyleSplit) {
  testutil::TempDir dir("ingest");
  for (int i = 0; i < 150; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "song%03d", i);
    std::filesystem::create_directories(dir / name);
    std::ofstream(dir.path() / name / "bass.wav") << "x";
    std::ofstream(dir.path() / name / "drums.wav") << "x";
  }
  const auto report = ingest_stems(dir.path(), SplitRule{100});
  std::size_t train = 0, test = 0;
  for (const auto& e : report.manifest.entries) (e.split == Split::train ? train : test)++;
  EXPECT_EQ(train, 100u);
  EXPECT_EQ(test, 50u);
}

TEST(BuildChunks, ShortAndLongSongs) {
  testutil::TempDir dir("build");
  std::filesystem::create_directories(dir / "stems/short");
  std::filesystem::create_directories(dir / "stems/long");
  write_tone(dir / "stems/short/bass.wav", 5.0, 55);
  write_tone(dir / "stems/short/drums.wav", 5.0, 330);
  write_tone(dir / "stems/long/bass.wav", 60.0, 55);
  write_tone(dir / "stems/long/drums.wav", 60.0, 330);
  const auto manifest = ingest_stems(dir / "stems").manifest;
  const SpectralConfig cfg;
  EXPECT_EQ(frame_count(5 * 22050, 2048, 512), 212);
  EXPECT_EQ(frame_count(60 * 22050, 2048, 512), 2580);

  const auto report = build_chunks(manifest, cfg, dir / "store");
  std::size_t long_bass = 0, long_drums = 0, short_any = 0;
  for (const auto& r : report.store.records) {
    if (r.song_id == "short") ++short_any;
    else (r.domain == Domain::bass ? long_bass : long_drums)++;
  }
  EXPECT_EQ(short_any, 0u);
  EXPECT_EQ(long_bass, 12u);
  EXPECT_EQ(long_drums, 12u);
  EXPECT_EQ(report.log.size(), 2u);  // both short stems logged

  const auto store = open_chunk_store(dir / "store");
  EXPECT_EQ(store.records.size(), 24u);
  EXPECT_EQ(store.fingerprint, cfg.fingerprint());
  const auto c = store.load(store.records.front());
  EXPECT_EQ(c.pixels.rows(), 256);
  EXPECT_EQ(c.pixels.cols(), 256);
  EXPECT_EQ(c.offset % 206, 0);

  // Second run into a fresh directory is byte-identical.
  build_chunks(manifest, cfg, dir / "store2");
  for (const auto& r : store.records) EXPECT_EQ(slurp(dir / "store" / r.file), slurp(dir / "store2" / r.file));
  EXPECT_EQ(slurp(dir / "store" / kChunkIndex), slurp(dir / "store2" / kChunkIndex));
}

TEST(BuildChunks, FailingSongIsLoggedAndSkipped) {
  testutil::TempDir dir("build");
  DatasetManifest m;
  m.entries.push_back({"broken", dir / "nope_bass.wav", dir / "nope_drums.wav", Split::train});
  const auto report = build_chunks(m, SpectralConfig{}, dir / "store");
  EXPECT_TRUE(report.store.records.empty());
  EXPECT_EQ(report.log.size(), 2u);
}

TEST(Tensorize, AffineEndpointsAndBijection) {
  LevelMatrix m(1, 256);
  for (int l = 0; l < 256; ++l) m(0, l) = static_cast<std::uint8_t>(l);
  const auto t = to_tensor<float>(m);
  EXPECT_EQ(t.data()[0], -1.0f);
  EXPECT_EQ(t.data()[255], 1.0f);
  std::set<float> distinct(t.data().begin(), t.data().end());
  EXPECT_EQ(distinct.size(), 256u);
  EXPECT_EQ(to_levels(t), m);
}

TEST(BatchLoader, PairedSharesSongAndOffset) {
  std::mt19937_64 rng(5);
  std::vector<Chunk> bass, drums;
  for (int s = 0; s < 3; ++s)
    for (int o = 0; o < 4; ++o) {
      bass.push_back({random_levels(4, 4, rng), "s" + std::to_string(s), o * 3, Domain::bass});
      drums.push_back({random_levels(4, 4, rng), "s" + std::to_string(s), o * 3, Domain::drums});
    }
  std::shuffle(drums.begin(), drums.end(), rng);
  BatchLoader<float> loader(bass, drums, Pairing::paired, 1, 9);
  EXPECT_EQ(loader.epoch_length(), 12u);
  for (int i = 0; i < 30; ++i) {
    std::vector<const Chunk*> xs, ys;
    const auto b = loader.next(&xs, &ys);
    ASSERT_EQ(xs.size(), 1u);
    EXPECT_EQ(xs[0]->song_id, ys[0]->song_id);
    EXPECT_EQ(xs[0]->offset, ys[0]->offset);
    EXPECT_EQ(to_levels(b.x), xs[0]->pixels);
    EXPECT_EQ(to_levels(b.y), ys[0]->pixels);
  }
}

TEST(BatchLoader, SeedDeterminesOrder) {
  std::mt19937_64 rng(6);
  std::vector<Chunk> xs, ys;
  for (int i = 0; i < 10; ++i) xs.push_back({random_levels(2, 2, rng), "x", i, Domain::bass});
  for (int i = 0; i < 7; ++i) ys.push_back({random_levels(2, 2, rng), "y", i, Domain::drums});
  auto order = [&](std::uint64_t seed) {
    BatchLoader<float> l(xs, ys, Pairing::unpaired, 1, seed);
    std::vector<int> o;
    for (int i = 0; i < 25; ++i) {
      std::vector<const Chunk*> a, b;
      l.next(&a, &b);
      o.push_back(a[0]->offset * 100 + b[0]->offset);
    }
    return o;
  };
  EXPECT_EQ(order(42), order(42));
  EXPECT_NE(order(42), order(43));
  BatchLoader<float> l(xs, ys, Pairing::unpaired, 4, 1);
  EXPECT_EQ(l.epoch_length(), 3u);
  EXPECT_EQ(l.next().x.dim(0), 4u);
  EXPECT_THROW(BatchLoader<float>({}, ys, Pairing::unpaired), Error);
}
