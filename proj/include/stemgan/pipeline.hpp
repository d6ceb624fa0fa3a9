#pragma once

// File-level pipeline steps shared by the command-line tool and the
// acceptance runner: each step reads artifacts from disk, runs one module and
// writes its artifacts back.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stemgan/config.hpp"
#include "stemgan/models/cyclegan.hpp"
#include "stemgan/models/pix2pix.hpp"

namespace stemgan::pipeline {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::io_failure, "write failed: " + path.string());
}

inline void check_store(const ChunkStore& store, const RunConfig& cfg) {
  require(store.fingerprint == cfg.spectral.fingerprint(), Errc::config_mismatch,
          "chunk store " + store.dir.string() + " was built with '" + store.fingerprint + "', config has '" +
              cfg.spectral.fingerprint() + "'");
}

// ---- ingestion and chunking ---------------------------------------------------

inline LevelMatrix spectrogram(const RunConfig& cfg, const fs::path& wav, const fs::path& pgm) {
  const LevelMatrix levels = stem_levels(wav, cfg.spectral, cfg.spectral.filterbank());
  write_pgm(pgm, levels);
  return levels;
}

inline IngestReport ingest(const RunConfig& cfg, const fs::path& root, const fs::path& manifest) {
  SplitRule rule;
  if (cfg.train_songs >= 0) rule.train_count = static_cast<std::size_t>(cfg.train_songs);
  IngestReport r = ingest_stems(root, rule, cfg.spectral);
  write_manifest(manifest, r.manifest);
  return r;
}

inline BuildReport build(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& out_dir) {
  const DatasetManifest m = read_manifest(manifest_path);
  require(m.fingerprint == cfg.spectral.fingerprint(), Errc::config_mismatch,
          "manifest was written for '" + m.fingerprint + "', config has '" + cfg.spectral.fingerprint() + "'");
  return build_chunks(m, cfg.spectral, out_dir);
}

// ---- training -----------------------------------------------------------------

struct TrainRun {
  models::TrainReport report;
  fs::path final_checkpoint;
};

inline models::TrainOptions train_options(const RunConfig& cfg, const fs::path& out_dir) {
  models::TrainOptions o;
  o.epochs = cfg.epochs;
  o.max_steps = cfg.max_steps;
  o.out_dir = out_dir;
  return o;
}

inline TrainRun train_cyclegan(const RunConfig& cfg, const fs::path& chunks, const fs::path& out_dir,
                               const fs::path& resume = {}) {
  const ChunkStore store = open_chunk_store(chunks);
  check_store(store, cfg);
  auto loader = load_batches<float>(store, Pairing::unpaired, static_cast<std::size_t>(cfg.batch_size), cfg.seed);
  models::CycleGan<float> model(cfg.cyclegan());
  if (!resume.empty()) model.restore(ag::read_checkpoint_file(resume), cfg.reset_optimizer);
  fs::create_directories(out_dir);
  write_text(out_dir / "config.txt", cfg.serialize());
  TrainRun run;
  run.report = models::train_cyclegan(model, loader, train_options(cfg, out_dir));
  run.final_checkpoint = out_dir / "final.ckpt";
  model.save(run.final_checkpoint);
  return run;
}

inline TrainRun train_pix2pix(const RunConfig& cfg, const fs::path& chunks, const fs::path& out_dir,
                              const fs::path& resume = {}) {
  const ChunkStore store = open_chunk_store(chunks);
  check_store(store, cfg);
  auto loader = load_batches<float>(store, Pairing::paired, static_cast<std::size_t>(cfg.batch_size), cfg.seed);
  models::Pix2Pix<float> model(cfg.pix2pix());
  if (!resume.empty()) model.restore(ag::read_checkpoint_file(resume), cfg.reset_optimizer);
  fs::create_directories(out_dir);
  write_text(out_dir / "config.txt", cfg.serialize());
  TrainRun run;
  run.report = models::train_pix2pix(model, loader, train_options(cfg, out_dir));
  run.final_checkpoint = out_dir / "final.ckpt";
  model.save(run.final_checkpoint);
  return run;
}

// ---- translation --------------------------------------------------------------

/// Either kind of trained bass-to-drums model, chosen by the checkpoint.
struct TrainedModel {
  std::optional<models::CycleGan<float>> cyclegan;
  std::optional<models::Pix2Pix<float>> pix2pix;

  static TrainedModel load(const fs::path& path) {
    const auto file = ag::read_checkpoint_file(path);
    const auto header = models::decode_header(file.header);
    const std::string& kind = models::header_get(header, "kind");
    TrainedModel m;
    if (kind == "cyclegan") {
      m.cyclegan.emplace(models::CycleGanConfig::from_header(header));
      m.cyclegan->restore(file);
    } else if (kind == "pix2pix") {
      m.pix2pix.emplace(models::Pix2PixConfig::from_header(header));
      m.pix2pix->restore(file);
    } else {
      throw Error(Errc::format_error, path.string() + ": unknown model kind '" + kind + "'");
    }
    return m;
  }

  const char* kind() const { return cyclegan ? "cyclegan" : "pix2pix"; }

  std::vector<Chunk> translate(const std::vector<Chunk>& bass) const {
    return cyclegan ? models::translate(*cyclegan, bass) : models::translate(*pix2pix, bass);
  }
};

/// Translates the bass chunks of one split into a new store of drum chunks
/// with the same song ids, offsets and split.
inline ChunkStore translate_store(const fs::path& checkpoint, const fs::path& chunks, const fs::path& out_dir,
                                  Split split = Split::test) {
  const TrainedModel model = TrainedModel::load(checkpoint);
  const ChunkStore in = open_chunk_store(chunks);
  const auto bass = in.load_all(Domain::bass, split);
  require(!bass.empty(), Errc::empty_input,
          chunks.string() + " holds no bass chunks in the " + to_string(split) + " split");
  fs::create_directories(out_dir);
  ChunkStore out;
  out.dir = out_dir;
  out.fingerprint = in.fingerprint;
  for (const auto& c : model.translate(bass)) {
    ChunkRecord r{c.song_id, Domain::drums, c.offset, chunk_file_name(c.song_id, Domain::drums, c.offset), split};
    write_pgm(out_dir / r.file, c.pixels);
    out.records.push_back(std::move(r));
  }
  write_chunk_index(out);
  return out;
}

struct WavTranslation {
  fs::path output;
  ChunkInversion inversion;
  std::size_t chunks = 0;
};

/// bass.wav -> bass_drums.wav in the same directory. With keep_intermediates
/// the input and generated levels are written next to it as PGM images.
inline WavTranslation translate_wav(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& wav,
                                    bool keep_intermediates = false) {
  const TrainedModel model = TrainedModel::load(checkpoint);
  const FilterBank fb = cfg.spectral.filterbank();
  const LevelMatrix levels = stem_levels(wav, cfg.spectral, fb);
  const std::string stem = wav.stem().string();
  const auto bass = chunk(levels, cfg.spectral.geometry, stem, Domain::bass);
  require(!bass.empty(), Errc::empty_input,
          wav.string() + ": " + std::to_string(levels.cols()) + " frames, too short for one chunk");
  const auto drums = model.translate(bass);
  WavTranslation out;
  out.chunks = drums.size();
  out.inversion = mel_chunks_to_waveform(drums, fb, cfg.spectral, cfg.inversion);
  out.output = wav.parent_path() / (stem + "_drums.wav");
  write_wav(out.output, normalize_peak(out.inversion.signal));
  if (keep_intermediates) {
    write_pgm(wav.parent_path() / (stem + "_bass.pgm"), levels);
    write_pgm(wav.parent_path() / (stem + "_drums.pgm"), assemble(drums, cfg.spectral.geometry.overlap));
  }
  return out;
}

// ---- inversion ----------------------------------------------------------------

struct InvertedSong {
  std::string song_id;
  fs::path output;
  ChunkInversion inversion;
};

/// One WAV per song of the chosen domain: <out_dir>/<song>_<domain>.wav.
inline std::vector<InvertedSong> invert_store(const RunConfig& cfg, const fs::path& chunks, const fs::path& out_dir,
                                              Domain domain = Domain::drums) {
  const ChunkStore store = open_chunk_store(chunks);
  check_store(store, cfg);
  std::map<std::string, std::vector<Chunk>> by_song;
  for (const auto& r : store.records)
    if (r.domain == domain) by_song[r.song_id].push_back(store.load(r));
  require(!by_song.empty(), Errc::empty_input,
          chunks.string() + " holds no " + std::string(to_string(domain)) + " chunks");
  fs::create_directories(out_dir);
  const FilterBank fb = cfg.spectral.filterbank();
  std::vector<InvertedSong> out;
  for (auto& [song, cs] : by_song) {
    InvertedSong s{song, out_dir / (song + "_" + to_string(domain) + ".wav"),
                   mel_chunks_to_waveform(cs, fb, cfg.spectral, cfg.inversion)};
    write_wav(s.output, normalize_peak(s.inversion.signal));
    out.push_back(std::move(s));
  }
  return out;
}

inline ChunkInversion invert_pgm(const RunConfig& cfg, const fs::path& pgm, const fs::path& wav) {
  std::vector<Chunk> one{{read_pgm(pgm), pgm.stem().string(), 0, Domain::drums}};
  auto inv = mel_chunks_to_waveform(one, cfg.spectral.filterbank(), cfg.spectral, cfg.inversion);
  write_wav(wav, normalize_peak(inv.signal));
  return inv;
}

// ---- evaluation ---------------------------------------------------------------

struct EvaluateOptions {
  fs::path originals;  // chunk store holding the real drums
  fs::path generated;  // chunk store written by translate_store
  fs::path out;        // score table
  fs::path embedder;   // optional cyclegan checkpoint whose D_Y embeds chunks
  fs::path annotations;
  fs::path real_embeddings, generated_embeddings;
};

struct EvaluateReport {
  eval::ScoreTable table;
  std::string classifier;  // "annotations" or "self-consistency"
  std::size_t training_rows = 0;
  double training_accuracy = 0.0;
  Eigen::MatrixXd rater_correlation;
};

inline std::string sample_id(const Chunk& c) { return c.song_id + "_" + std::to_string(c.offset); }

inline EvaluateReport evaluate(const RunConfig& cfg, const EvaluateOptions& opt) {
  require(fs::is_regular_file(opt.generated / kChunkIndex), Errc::empty_input,
          "generated directory " + opt.generated.string() + " holds no chunk store");
  const ChunkStore gen_store = open_chunk_store(opt.generated);
  std::vector<Chunk> generated;
  for (const auto& r : gen_store.records) generated.push_back(gen_store.load(r));
  require(!generated.empty(), Errc::empty_input, "generated store " + opt.generated.string() + " holds no chunks");

  const ChunkStore orig_store = open_chunk_store(opt.originals);
  check_store(orig_store, cfg);
  std::map<std::pair<std::string, int>, const ChunkRecord*> drums_at;
  for (const auto& r : orig_store.records)
    if (r.domain == Domain::drums) drums_at[{r.song_id, r.offset}] = &r;
  std::vector<Chunk> originals;
  for (const auto& g : generated) {
    const auto it = drums_at.find({g.song_id, g.offset});
    require(it != drums_at.end(), Errc::missing_file, "no original drum chunk for " + sample_id(g));
    originals.push_back(orig_store.load(*it->second));
  }

  const bool from_files = !opt.real_embeddings.empty() || !opt.generated_embeddings.empty();
  require(!(from_files && !opt.embedder.empty()), Errc::invalid_argument,
          "give either an embedder checkpoint or embedding files, not both");
  require(!from_files || (!opt.real_embeddings.empty() && !opt.generated_embeddings.empty()),
          Errc::invalid_argument, "embedding files come in pairs: real and generated");
  require(!from_files || !opt.annotations.empty(), Errc::invalid_argument,
          "embedding files only cover the generated samples; training without annotations needs an embedder");

  eval::FeatureContext ctx;
  ctx.floor_db = cfg.spectral.floor_db;
  std::optional<eval::Embedder> embedder;
  std::optional<eval::EmbeddingTable> gen_table;
  if (!opt.embedder.empty()) {
    TrainedModel m = TrainedModel::load(opt.embedder);
    require(m.cyclegan.has_value(), Errc::invalid_argument,
            "embedder checkpoint must hold a cyclegan model (its drum discriminator takes one channel)");
    embedder.emplace(m.cyclegan->d_y(), cfg.embed_layers);
    auto real = orig_store.load_all(Domain::drums, Split::train);
    if (real.size() < 2) real = orig_store.load_all(Domain::drums, Split::test);
    std::vector<const LevelMatrix*> ptrs;
    for (const auto& c : real) ptrs.push_back(&c.pixels);
    ctx.real = eval::fit_gaussians(embedder->embed_all(ptrs));
    ctx.embed = eval::embed_with(*embedder);
  } else if (from_files) {
    ctx.real = eval::fit_gaussians(eval::EmbeddingTable::read(opt.real_embeddings).matrices());
    gen_table.emplace(eval::EmbeddingTable::read(opt.generated_embeddings));
    ctx.embed = eval::embed_from(*gen_table);
  }

  EvaluateReport rep;
  eval::LogisticModel model;
  if (!opt.annotations.empty()) {
    const eval::Annotations a = eval::read_annotations(opt.annotations);
    std::vector<const LevelMatrix*> o;
    std::vector<Chunk> g;
    std::vector<eval::GradeBucket> labels;
    for (std::size_t i = 0; i < generated.size(); ++i) {
      const auto it = std::find(a.samples.begin(), a.samples.end(), sample_id(generated[i]));
      if (it == a.samples.end()) continue;
      o.push_back(&originals[i].pixels);
      g.push_back(generated[i]);
      labels.push_back(eval::grade_bucket(a.mean_grade(static_cast<std::size_t>(it - a.samples.begin()))));
    }
    require(!labels.empty(), Errc::empty_input, "no generated sample appears in " + opt.annotations.string());
    const auto x = eval::pair_feature_matrix(o, g, ctx);
    model = eval::fit_logistic(x, labels, cfg.logistic);
    rep.classifier = "annotations";
    rep.training_rows = labels.size();
    rep.training_accuracy = eval::accuracy(eval::predict(model, x), labels);
    if (a.raters.size() > 1) rep.rater_correlation = eval::rater_correlation(a);
  } else {
    const auto pairs = eval::self_consistency_pairs(originals, cfg.seed);
    const auto x = eval::pair_feature_matrix(pairs.originals, pairs.generated, ctx);
    model = eval::fit_logistic(x, pairs.labels, cfg.logistic);
    rep.classifier = "self-consistency";
    rep.training_rows = pairs.labels.size();
    rep.training_accuracy = eval::accuracy(eval::predict(model, x), pairs.labels);
  }
  rep.table = eval::score_samples(originals, generated, model, ctx);
  if (!opt.out.empty()) eval::write_score_table(opt.out, rep.table);
  return rep;
}

}  // namespace stemgan::pipeline
