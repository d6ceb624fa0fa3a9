// stemgan: bass-to-drums spectrogram translation from the command line.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "stemgan/stemgan.hpp"

namespace fs = std::filesystem;
using namespace stemgan;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig::desk() : RunConfig::load(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(Errc::invalid_argument, "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.threads > 0) cfg.threads = g.threads;
  cfg.validate();
  return cfg;
}

void log_run(const char* command, const RunConfig& cfg) {
  std::fprintf(stderr, "stemgan %s: preset %s, config %s, seed %llu\n", command, to_string(cfg.preset),
               cfg.fingerprint().c_str(), static_cast<unsigned long long>(cfg.seed));
}

void print_train(const pipeline::TrainRun& run) {
  std::printf("%zu steps\n", run.report.steps);
  if (!run.report.log.empty()) {
    std::printf("last step:");
    for (double v : run.report.log.back()) std::printf(" %.6g", v);
    std::printf("\n");
  }
  for (const auto& c : run.report.checkpoints) std::printf("checkpoint %s\n", c.string().c_str());
  std::printf("checkpoint %s\n", run.final_checkpoint.string().c_str());
}

int gradcheck() {
  bool ok = true;
  auto report = [&](const ag::GradCheckResult& r) {
    const bool pass = r.passed(1e-4);
    ok = ok && pass;
    std::printf("%-32s %.3e  %s\n", r.name.c_str(), r.max_rel_error, pass ? "ok" : "FAIL");
  };
  for (const auto& r : ag::op_gradient_suite()) report(r);
  for (const auto& r : models::architecture_gradient_suite()) report(r);
  return ok ? 0 : kRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bass-to-drums spectrogram translation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "key = value config file (default: desk preset)");
  app.add_option("-s,--set", g.overrides, "override one config key, key=value")->allow_extra_args(false);
  app.add_option("--threads", g.threads, "worker threads for linear algebra")->check(CLI::PositiveNumber);

  std::string in, out, chunks, checkpoint, resume, manifest, split = "test", domain = "drums";
  bool keep = false;
  pipeline::EvaluateOptions eo;

  auto* spec = app.add_subcommand("spectrogram", "WAV to a quantized mel-spectrogram PGM");
  spec->add_option("input", in, "WAV file")->required();
  spec->add_option("-o,--out", out, "PGM output")->required();

  auto* ing = app.add_subcommand("ingest", "scan <root>/<song>/{bass,drums}.wav into a manifest");
  ing->add_option("root", in, "stem directory")->required();
  ing->add_option("-o,--out", out, "manifest output")->required();

  auto* bld = app.add_subcommand("build-chunks", "manifest to a chunk store");
  bld->add_option("manifest", manifest, "manifest file")->required();
  bld->add_option("-o,--out", out, "chunk store directory")->required();

  auto* tcg = app.add_subcommand("train-cyclegan", "unpaired training on a chunk store");
  auto* tpp = app.add_subcommand("train-pix2pix", "paired training on a chunk store");
  for (auto* t : {tcg, tpp}) {
    t->add_option("chunks", chunks, "chunk store directory")->required();
    t->add_option("-o,--out", out, "run directory")->required();
    t->add_option("--resume", resume, "start from this checkpoint");
  }

  auto* tr = app.add_subcommand("translate", "bass to drums with a trained checkpoint");
  tr->add_option("checkpoint", checkpoint, "model checkpoint")->required();
  auto* tr_wav = tr->add_option("--wav", in, "bass WAV; writes <name>_drums.wav next to it");
  auto* tr_chunks = tr->add_option("--chunks", chunks, "chunk store to translate");
  tr_wav->excludes(tr_chunks);
  tr->add_option("-o,--out", out, "output chunk store (with --chunks)");
  tr->add_option("--split", split, "split to translate (with --chunks)")->check(CLI::IsMember({"train", "test"}));
  tr->add_flag("--keep-intermediates", keep, "also write the input and generated PGM images");

  auto* inv = app.add_subcommand("invert", "chunks or a PGM back to audio");
  auto* inv_pgm = inv->add_option("--pgm", in, "single PGM spectrogram");
  auto* inv_chunks = inv->add_option("--chunks", chunks, "chunk store; one WAV per song");
  inv_pgm->excludes(inv_chunks);
  inv->add_option("-o,--out", out, "WAV (with --pgm) or directory (with --chunks)")->required();
  inv->add_option("--domain", domain, "domain to invert (with --chunks)")->check(CLI::IsMember({"bass", "drums"}));

  auto* ev = app.add_subcommand("evaluate", "score generated chunks against the originals");
  ev->add_option("originals", eo.originals, "chunk store with the real drums")->required();
  ev->add_option("generated", eo.generated, "chunk store with generated drums")->required();
  ev->add_option("-o,--out", eo.out, "score table")->required();
  ev->add_option("--embedder", eo.embedder, "cyclegan checkpoint for the density features");
  ev->add_option("--annotations", eo.annotations, "human grades; otherwise a self-consistency classifier");
  ev->add_option("--real-embeddings", eo.real_embeddings, "precomputed embeddings of real samples");
  ev->add_option("--generated-embeddings", eo.generated_embeddings, "precomputed embeddings of generated samples");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every op and both networks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  RunConfig cfg;
  try {
    cfg = resolve_config(g);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stemgan: invalid config: %s\n", e.what());
    return kUsageError;
  }
  Eigen::setNbThreads(cfg.threads);
  const auto* sub = app.get_subcommands().front();
  log_run(sub->get_name().c_str(), cfg);

  try {
    if (sub == spec) {
      const auto levels = pipeline::spectrogram(cfg, in, out);
      std::printf("%ld x %ld levels -> %s\n", static_cast<long>(levels.rows()), static_cast<long>(levels.cols()),
                  out.c_str());
    } else if (sub == ing) {
      const auto r = pipeline::ingest(cfg, in, out);
      for (const auto& s : r.skipped) std::fprintf(stderr, "skipped %s\n", s.c_str());
      for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::printf("%zu songs -> %s\n", r.manifest.entries.size(), out.c_str());
    } else if (sub == bld) {
      const auto r = pipeline::build(cfg, manifest, out);
      for (const auto& l : r.log) std::fprintf(stderr, "%s\n", l.c_str());
      std::printf("%zu chunks -> %s\n", r.store.records.size(), out.c_str());
    } else if (sub == tcg) {
      print_train(pipeline::train_cyclegan(cfg, chunks, out, resume));
    } else if (sub == tpp) {
      print_train(pipeline::train_pix2pix(cfg, chunks, out, resume));
    } else if (sub == tr) {
      if (!in.empty()) {
        const auto r = pipeline::translate_wav(cfg, checkpoint, in, keep);
        std::printf("%zu chunks, mel residual %.3g, spectral convergence %.3g -> %s\n", r.chunks,
                    r.inversion.mel_residual, r.inversion.spectral_convergence, r.output.string().c_str());
      } else {
        if (chunks.empty() || out.empty()) throw CLI::ValidationError("translate needs --wav, or --chunks with --out");
        const auto store = pipeline::translate_store(checkpoint, chunks, out, parse_split(split));
        std::printf("%zu chunks -> %s\n", store.records.size(), out.c_str());
      }
    } else if (sub == inv) {
      if (!in.empty()) {
        const auto r = pipeline::invert_pgm(cfg, in, out);
        std::printf("mel residual %.3g, spectral convergence %.3g -> %s\n", r.mel_residual, r.spectral_convergence,
                    out.c_str());
      } else {
        if (chunks.empty()) throw CLI::ValidationError("invert needs --pgm or --chunks");
        for (const auto& s : pipeline::invert_store(cfg, chunks, out, parse_domain(domain)))
          std::printf("%s: mel residual %.3g, spectral convergence %.3g -> %s\n", s.song_id.c_str(),
                      s.inversion.mel_residual, s.inversion.spectral_convergence, s.output.string().c_str());
      }
    } else if (sub == ev) {
      const auto r = pipeline::evaluate(cfg, eo);
      std::printf("classifier: %s, %zu rows, training accuracy %.4f\n", r.classifier.c_str(), r.training_rows,
                  r.training_accuracy);
      for (int b = 0; b < eval::kBucketCount; ++b)
        std::printf("%s %zu\n", eval::to_string(static_cast<eval::GradeBucket>(b)),
                    r.table.histogram[static_cast<std::size_t>(b)]);
      if (r.rater_correlation.size() > 0) std::cout << "rater correlation\n" << r.rater_correlation << "\n";
      std::printf("%zu samples -> %s\n", r.table.rows.size(), eo.out.string().c_str());
    } else if (sub == gc) {
      return gradcheck();
    }
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "stemgan: %s\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stemgan: %s\n", e.what());
    return kRuntimeFailure;
  }
  return 0;
}
