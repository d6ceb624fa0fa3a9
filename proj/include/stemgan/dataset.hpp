#pragma once

// Paired bass/drum chunk datasets: chunking and re-assembly of quantized
// mel-spectrograms, the on-disk chunk store (binary PGM + manifest), stem
// ingestion and batch loading.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stemgan/audio_io.hpp"
#include "stemgan/autograd/tensor.hpp"
#include "stemgan/error.hpp"
#include "stemgan/spectral.hpp"

namespace stemgan {

enum class Domain { bass, drums };

inline const char* to_string(Domain d) { return d == Domain::bass ? "bass" : "drums"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "bass") return Domain::bass;
  if (s == "drums") return Domain::drums;
  throw Error(Errc::format_error, "unknown domain '" + s + "'");
}

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error(Errc::format_error, "unknown split '" + s + "'");
}

/// Mel bins x frames window of quantized levels cut from one song.
struct Chunk {
  LevelMatrix pixels;
  std::string song_id;
  int offset = 0;  // first frame, a multiple of the stride
  Domain domain = Domain::bass;
};

struct ChunkGeometry {
  int width = 256;
  int overlap = 50;

  int stride() const { return width - overlap; }
  void validate() const {
    require(width >= 1 && overlap >= 0 && overlap < width, Errc::invalid_argument,
            "chunk geometry needs 0 <= overlap < width");
  }
};

/// floor((T - width) / stride) + 1 for T >= width, else 0.
inline std::size_t chunk_count(std::size_t frames, const ChunkGeometry& g) {
  if (frames < static_cast<std::size_t>(g.width)) return 0;
  return (frames - g.width) / g.stride() + 1;
}

/// Cuts full-width windows starting at frame 0 every stride frames; trailing
/// frames that do not fill a window are dropped.
inline std::vector<Chunk> chunk(const LevelMatrix& levels, const ChunkGeometry& g = {},
                                const std::string& song_id = {}, Domain domain = Domain::bass) {
  g.validate();
  const auto frames = static_cast<std::size_t>(levels.cols());
  require(frames >= static_cast<std::size_t>(g.width), Errc::invalid_argument,
          "spectrogram has " + std::to_string(frames) + " frames, fewer than chunk width " +
              std::to_string(g.width));
  std::vector<Chunk> out;
  const std::size_t n = chunk_count(frames, g);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int offset = static_cast<int>(i) * g.stride();
    out.push_back({levels.middleCols(offset, g.width), song_id, offset, domain});
  }
  return out;
}

/// Inverse of chunk. Overlapping frames are crossfaded linearly (levels are
/// affine in dB, so this is a dB-domain blend); the result starts at the
/// first chunk's offset.
inline LevelMatrix assemble(std::vector<Chunk> chunks, int overlap = 50) {
  require(!chunks.empty(), Errc::empty_input, "no chunks to assemble");
  std::sort(chunks.begin(), chunks.end(),
            [](const Chunk& a, const Chunk& b) { return a.offset < b.offset; });
  const auto rows = chunks.front().pixels.rows();
  const auto width = chunks.front().pixels.cols();
  require(overlap >= 0 && overlap < width, Errc::invalid_argument, "overlap must be below chunk width");
  const int stride = static_cast<int>(width) - overlap;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    require(chunks[i].pixels.rows() == rows && chunks[i].pixels.cols() == width,
            Errc::shape_mismatch, "chunks differ in geometry");
    require(chunks[i].song_id == chunks.front().song_id, Errc::invalid_argument,
            "chunks come from different songs");
    if (i > 0) {
      const int step = chunks[i].offset - chunks[i - 1].offset;
      require(step != 0, Errc::invalid_argument,
              "duplicate chunk offset " + std::to_string(chunks[i].offset));
      require(step == stride, Errc::invalid_argument,
              "gap between chunk offsets " + std::to_string(chunks[i - 1].offset) + " and " +
                  std::to_string(chunks[i].offset));
    }
  }
  const Eigen::Index total = static_cast<Eigen::Index>(chunks.size() - 1) * stride + width;
  LevelMatrix out(rows, total);
  out.leftCols(width) = chunks.front().pixels;
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    const Eigen::Index start = static_cast<Eigen::Index>(i) * stride;
    const auto& px = chunks[i].pixels;
    for (int j = 0; j < overlap; ++j) {
      const double w = static_cast<double>(j + 1) / (overlap + 1);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double v = (1.0 - w) * out(r, start + j) + w * px(r, j);
        out(r, start + j) = static_cast<std::uint8_t>(std::nearbyint(v));
      }
    }
    out.block(0, start + overlap, rows, width - overlap) = px.rightCols(width - overlap);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PGM. Row 0 of the file is the highest mel bin so the image reads
// like a spectrogram plot.

inline void write_pgm(const std::filesystem::path& path, const LevelMatrix& m) {
  std::ostringstream head;
  head << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  std::string bytes = head.str();
  bytes.reserve(bytes.size() + static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = m.rows(); r-- > 0;)
    for (Eigen::Index c = 0; c < m.cols(); ++c) bytes.push_back(static_cast<char>(m(r, c)));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_failure, "write failed: " + path.string());
}

inline LevelMatrix read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, path.string());
  std::string magic;
  long width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (!in || magic != "P5" || width <= 0 || height <= 0 || maxval != 255)
    throw Error(Errc::format_error, path.string() + ": expected 8-bit binary PGM");
  in.get();  // single whitespace before the raster
  std::vector<char> raster(static_cast<std::size_t>(width * height));
  in.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (in.gcount() != static_cast<std::streamsize>(raster.size()))
    throw Error(Errc::format_error, path.string() + ": truncated raster");
  LevelMatrix m(height, width);
  std::size_t i = 0;
  for (Eigen::Index r = height; r-- > 0;)
    for (Eigen::Index c = 0; c < width; ++c) m(r, c) = static_cast<std::uint8_t>(raster[i++]);
  return m;
}

// ---------------------------------------------------------------------------
// Front-end configuration shared by ingestion, chunking and inversion.

struct SpectralConfig {
  int sample_rate = 22050;
  StftParams stft;
  int n_mels = 256;
  double floor_db = -80.0;
  ChunkGeometry geometry;

  std::string fingerprint() const {
    std::ostringstream s;
    s << "sr=" << sample_rate << " n_fft=" << stft.window_len << " hop=" << stft.hop
      << " n_mels=" << n_mels << " floor_db=" << floor_db << " chunk=" << geometry.width
      << " overlap=" << geometry.overlap;
    return s.str();
  }

  FilterBank filterbank() const {
    MelParams p;
    p.n_mels = n_mels;
    p.window_len = stft.window_len;
    p.sample_rate = sample_rate;
    return mel_filterbank(p);
  }
};

/// Reads a stem, down-mixes, resamples and returns its quantized mel levels.
inline LevelMatrix stem_levels(const std::filesystem::path& wav, const SpectralConfig& cfg,
                               const FilterBank& fb) {
  const Waveform mono = resample(to_mono(read_wav(wav)), cfg.sample_rate);
  return mel_levels(mono, fb, cfg.stft, cfg.floor_db);
}

// ---------------------------------------------------------------------------
// Stem ingestion.

struct ManifestEntry {
  std::string song_id;
  std::filesystem::path bass;
  std::filesystem::path drums;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string fingerprint;
};

struct IngestReport {
  DatasetManifest manifest;
  std::vector<std::string> skipped;   // "song: reason"
  std::vector<std::string> warnings;
};

/// The first `train_count` songs in lexicographic order go to train, the rest
/// to test.
struct SplitRule {
  std::size_t train_count = static_cast<std::size_t>(-1);
};

inline IngestReport ingest_stems(const std::filesystem::path& root, const SplitRule& rule = {},
                                 const SpectralConfig& cfg = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw Error(Errc::io_failure, "cannot read directory " + root.string());
  std::vector<fs::path> songs;
  for (fs::directory_iterator it(root, ec), end; !ec && it != end; it.increment(ec))
    if (it->is_directory()) songs.push_back(it->path());
  if (ec) throw Error(Errc::io_failure, "cannot read directory " + root.string() + ": " + ec.message());
  std::sort(songs.begin(), songs.end());

  IngestReport report;
  report.manifest.fingerprint = cfg.fingerprint();
  for (const auto& dir : songs) {
    const std::string id = dir.filename().string();
    const bool has_bass = fs::is_regular_file(dir / "bass.wav");
    const bool has_drums = fs::is_regular_file(dir / "drums.wav");
    if (!has_bass || !has_drums) {
      report.skipped.push_back(id + ": missing " +
                               std::string(!has_bass ? "bass.wav" : "drums.wav"));
      continue;
    }
    const Split split =
        report.manifest.entries.size() < rule.train_count ? Split::train : Split::test;
    report.manifest.entries.push_back({id, dir / "bass.wav", dir / "drums.wav", split});
  }
  if (report.manifest.entries.empty())
    report.warnings.push_back("no complete songs found under " + root.string());
  return report;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << "# stemgan-manifest v1 " << m.fingerprint << '\n';
  for (const auto& e : m.entries)
    out << e.song_id << '\t' << e.bass.string() << '\t' << e.drums.string() << '\t'
        << to_string(e.split) << '\n';
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::missing_file, path.string());
  DatasetManifest m;
  std::string line;
  const std::string prefix = "# stemgan-manifest v1 ";
  if (!std::getline(in, line) || line.rfind(prefix, 0) != 0)
    throw Error(Errc::format_error, path.string() + ": missing manifest header");
  m.fingerprint = line.substr(prefix.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, bass, drums, split;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, bass, '\t') ||
        !std::getline(fields, drums, '\t') || !std::getline(fields, split))
      throw Error(Errc::format_error, path.string() + ": malformed line '" + line + "'");
    m.entries.push_back({id, bass, drums, parse_split(split)});
  }
  return m;
}

// ---------------------------------------------------------------------------
// Chunk store: <dir>/<song>_<domain>_<offset>.pgm plus <dir>/chunks.tsv with
// one "song_id  domain  offset  file  split" record per chunk.

struct ChunkRecord {
  std::string song_id;
  Domain domain = Domain::bass;
  int offset = 0;
  std::string file;
  Split split = Split::train;
};

struct ChunkStore {
  std::filesystem::path dir;
  std::string fingerprint;
  std::vector<ChunkRecord> records;

  Chunk load(const ChunkRecord& r) const { return {read_pgm(dir / r.file), r.song_id, r.offset, r.domain}; }

  std::vector<Chunk> load_all(Domain d, Split s) const {
    std::vector<Chunk> out;
    for (const auto& r : records)
      if (r.domain == d && r.split == s) out.push_back(load(r));
    return out;
  }
};

inline constexpr char kChunkIndex[] = "chunks.tsv";

inline std::string chunk_file_name(const std::string& song, Domain d, int offset) {
  return song + "_" + to_string(d) + "_" + std::to_string(offset) + ".pgm";
}

inline void write_chunk_index(const ChunkStore& store) {
  std::ofstream out(store.dir / kChunkIndex);
  if (!out) throw Error(Errc::io_failure, "cannot write chunk index in " + store.dir.string());
  out << "# stemgan-chunks v1 " << store.fingerprint << '\n';
  for (const auto& r : store.records)
    out << r.song_id << '\t' << to_string(r.domain) << '\t' << r.offset << '\t' << r.file << '\t'
        << to_string(r.split) << '\n';
}

inline ChunkStore open_chunk_store(const std::filesystem::path& dir) {
  std::ifstream in(dir / kChunkIndex);
  if (!in) throw Error(Errc::missing_file, (dir / kChunkIndex).string());
  ChunkStore store;
  store.dir = dir;
  std::string line;
  const std::string prefix = "# stemgan-chunks v1 ";
  if (!std::getline(in, line) || line.rfind(prefix, 0) != 0)
    throw Error(Errc::format_error, "chunk index lacks header");
  store.fingerprint = line.substr(prefix.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream f(line);
    ChunkRecord r;
    std::string domain, offset, split;
    if (!std::getline(f, r.song_id, '\t') || !std::getline(f, domain, '\t') ||
        !std::getline(f, offset, '\t') || !std::getline(f, r.file, '\t') || !std::getline(f, split))
      throw Error(Errc::format_error, "malformed chunk record '" + line + "'");
    r.domain = parse_domain(domain);
    r.offset = std::stoi(offset);
    r.split = parse_split(split);
    store.records.push_back(std::move(r));
  }
  return store;
}

struct BuildReport {
  ChunkStore store;
  std::vector<std::string> log;  // per-song notes and failures
};

/// audio -> mel -> dB -> levels -> chunks for every song and both domains.
/// A failing song is logged and skipped.
inline BuildReport build_chunks(const DatasetManifest& manifest, const SpectralConfig& cfg,
                                const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const FilterBank fb = cfg.filterbank();
  BuildReport report;
  report.store.dir = out_dir;
  report.store.fingerprint = cfg.fingerprint();
  for (const auto& e : manifest.entries) {
    for (Domain d : {Domain::bass, Domain::drums}) {
      try {
        const LevelMatrix levels = stem_levels(d == Domain::bass ? e.bass : e.drums, cfg, fb);
        if (chunk_count(static_cast<std::size_t>(levels.cols()), cfg.geometry) == 0) {
          report.log.push_back(e.song_id + "/" + to_string(d) + ": " +
                               std::to_string(levels.cols()) + " frames, too short for one chunk");
          continue;
        }
        for (const auto& c : chunk(levels, cfg.geometry, e.song_id, d)) {
          ChunkRecord r{e.song_id, d, c.offset, chunk_file_name(e.song_id, d, c.offset), e.split};
          write_pgm(out_dir / r.file, c.pixels);
          report.store.records.push_back(std::move(r));
        }
      } catch (const Error& err) {
        report.log.push_back(e.song_id + "/" + to_string(d) + ": " + err.what());
      }
    }
  }
  write_chunk_index(report.store);
  return report;
}

// ---------------------------------------------------------------------------
// Tensor conversion and batch loading.

/// Level v maps to v / 127.5 - 1, an exact bijection onto 256 points of [-1, 1].
template <class T>
ag::Tensor<T> to_tensor(const std::vector<const LevelMatrix*>& batch) {
  require(!batch.empty(), Errc::empty_input, "empty batch");
  const auto rows = static_cast<std::size_t>(batch.front()->rows());
  const auto cols = static_cast<std::size_t>(batch.front()->cols());
  std::vector<T> data;
  data.reserve(batch.size() * rows * cols);
  for (const auto* m : batch) {
    require(static_cast<std::size_t>(m->rows()) == rows && static_cast<std::size_t>(m->cols()) == cols,
            Errc::shape_mismatch, "batch members differ in shape");
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        data.push_back(static_cast<T>((*m)(r, c)) / T(127.5) - T(1));
  }
  return ag::Tensor<T>::from({batch.size(), 1, rows, cols}, std::move(data));
}

template <class T>
ag::Tensor<T> to_tensor(const LevelMatrix& m) {
  return to_tensor<T>(std::vector<const LevelMatrix*>{&m});
}

/// Inverse scaling with clamping to [0, 255]. Takes sample `index` of an
/// N x 1 x H x W tensor.
template <class T>
LevelMatrix to_levels(const ag::Tensor<T>& t, std::size_t index = 0) {
  require(t.rank() == 4 && t.dim(1) == 1 && index < t.dim(0), Errc::shape_mismatch,
          "to_levels expects N x 1 x H x W");
  const std::size_t rows = t.dim(2), cols = t.dim(3);
  LevelMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const auto d = t.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = (static_cast<double>(d[(index * rows + r) * cols + c]) + 1.0) * 127.5;
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
    }
  return m;
}

template <class T>
struct Batch {
  ag::Tensor<T> x;  // bass (domain X)
  ag::Tensor<T> y;  // drums (domain Y)
};

enum class Pairing { unpaired, paired };

/// Seed-deterministic epoch iterator over two chunk lists. Unpaired mode
/// shuffles each domain independently and walks max(|X|, |Y|) steps,
/// wrapping the shorter list. Paired mode keeps only (song, offset) matches
/// and shuffles the pairs.
template <class T>
class BatchLoader {
 public:
  BatchLoader(std::vector<Chunk> xs, std::vector<Chunk> ys, Pairing mode,
              std::size_t batch_size = 1, std::uint64_t seed = 0)
      : xs_(std::move(xs)), ys_(std::move(ys)), mode_(mode), batch_(batch_size), rng_(seed) {
    require(batch_size >= 1, Errc::invalid_argument, "batch size must be positive");
    require(!xs_.empty() && !ys_.empty(), Errc::empty_input, "chunk store is empty for a domain");
    if (mode_ == Pairing::paired) {
      std::map<std::pair<std::string, int>, std::size_t> by_key;
      for (std::size_t j = 0; j < ys_.size(); ++j) by_key[{ys_[j].song_id, ys_[j].offset}] = j;
      for (std::size_t i = 0; i < xs_.size(); ++i) {
        auto it = by_key.find({xs_[i].song_id, xs_[i].offset});
        if (it != by_key.end()) pairs_.emplace_back(i, it->second);
      }
      require(!pairs_.empty(), Errc::empty_input, "no aligned bass/drum chunk pairs");
    }
    start_epoch();
  }

  /// Steps per epoch.
  std::size_t epoch_length() const {
    const std::size_t n = mode_ == Pairing::paired ? pairs_.size() : std::max(xs_.size(), ys_.size());
    return (n + batch_ - 1) / batch_;
  }

  /// Next batch plus the chunks it was built from; wraps into a freshly
  /// shuffled epoch at the end.
  Batch<T> next(std::vector<const Chunk*>* x_src = nullptr, std::vector<const Chunk*>* y_src = nullptr) {
    if (cursor_ >= epoch_length()) {
      ++epoch_;
      start_epoch();
    }
    const std::size_t n = mode_ == Pairing::paired ? pairs_.size() : std::max(xs_.size(), ys_.size());
    std::vector<const LevelMatrix*> bx, by;
    for (std::size_t k = cursor_ * batch_; k < std::min(n, (cursor_ + 1) * batch_); ++k) {
      const Chunk* cx;
      const Chunk* cy;
      if (mode_ == Pairing::paired) {
        const auto& p = pairs_[order_x_[k]];
        cx = &xs_[p.first];
        cy = &ys_[p.second];
      } else {
        cx = &xs_[order_x_[k % xs_.size()]];
        cy = &ys_[order_y_[k % ys_.size()]];
      }
      bx.push_back(&cx->pixels);
      by.push_back(&cy->pixels);
      if (x_src) x_src->push_back(cx);
      if (y_src) y_src->push_back(cy);
    }
    ++cursor_;
    return {to_tensor<T>(bx), to_tensor<T>(by)};
  }

  std::size_t epoch() const { return epoch_; }

 private:
  void start_epoch() {
    cursor_ = 0;
    if (mode_ == Pairing::paired) {
      order_x_ = shuffled(pairs_.size());
    } else {
      order_x_ = shuffled(xs_.size());
      order_y_ = shuffled(ys_.size());
    }
  }

  std::vector<std::size_t> shuffled(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng_() % i);
      std::swap(idx[i - 1], idx[j]);
    }
    return idx;
  }

  std::vector<Chunk> xs_, ys_;
  Pairing mode_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::vector<std::size_t> order_x_, order_y_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// Loader over a chunk store split.
template <class T>
BatchLoader<T> load_batches(const ChunkStore& store, Pairing mode, std::size_t batch_size = 1,
                            std::uint64_t shuffle_seed = 0, Split split = Split::train) {
  return BatchLoader<T>(store.load_all(Domain::bass, split), store.load_all(Domain::drums, split), mode,
                        batch_size, shuffle_seed);
}

}  // namespace stemgan
