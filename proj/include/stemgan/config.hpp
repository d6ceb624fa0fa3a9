#pragma once

// Flat key = value run configuration with two presets. Every knob of the
// pipeline lives here so a run is reproducible from its config file alone.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "stemgan/evaluation.hpp"
#include "stemgan/inversion.hpp"
#include "stemgan/models/pix2pix.hpp"

namespace stemgan {

enum class Preset { paper, desk };

inline const char* to_string(Preset p) { return p == Preset::paper ? "paper" : "desk"; }

inline Preset parse_preset(const std::string& s) {
  if (s == "paper") return Preset::paper;
  if (s == "desk") return Preset::desk;
  throw Error(Errc::invalid_argument, "unknown preset '" + s + "' (paper or desk)");
}

struct RunConfig {
  Preset preset = Preset::desk;
  std::uint64_t seed = 0;
  int threads = 1;

  SpectralConfig spectral{22050, {}, 64, -80.0, {64, 12}};
  int train_songs = 100;

  models::GeneratorConfig generator;
  models::DiscriminatorConfig discriminator;
  models::UNetConfig unet;
  double lambda_cycle = 10.0;
  double lambda_identity = 0.0;
  double lambda_l1 = 100.0;
  int pool_size = 50;
  models::GanMode gan_mode = models::GanMode::least_squares;
  ag::AdamOptions adam;
  int epochs = 1;
  std::size_t max_steps = 0;
  int batch_size = 1;
  bool reset_optimizer = true;

  InversionConfig inversion;

  std::vector<int> embed_layers;  // empty: the block feeding the logit head
  eval::LogisticOptions logistic;

  static RunConfig make(Preset p) {
    RunConfig c;
    c.preset = p;
    if (p == Preset::paper) {
      c.spectral.n_mels = 256;
      c.spectral.geometry = {256, 50};
      c.generator = models::GeneratorConfig::paper();
      c.discriminator = models::DiscriminatorConfig::paper();
      c.unet = models::UNetConfig::paper();
    } else {
      c.spectral.n_mels = 64;
      c.spectral.geometry = {64, 12};
      c.generator = models::GeneratorConfig::desk();
      c.discriminator = models::DiscriminatorConfig::desk();
      c.unet = models::UNetConfig::desk();
    }
    return c;
  }
  static RunConfig paper() { return make(Preset::paper); }
  static RunConfig desk() { return make(Preset::desk); }

  models::CycleGanConfig cyclegan() const {
    models::CycleGanConfig c;
    c.generator = generator;
    c.discriminator = discriminator;
    c.lambda_cycle = lambda_cycle;
    c.lambda_identity = lambda_identity;
    c.pool_size = pool_size;
    c.gan_mode = gan_mode;
    c.adam = adam;
    c.seed = seed;
    return c;
  }

  models::Pix2PixConfig pix2pix() const {
    models::Pix2PixConfig c;
    c.generator = unet;
    c.discriminator = discriminator;
    c.discriminator.in_channels = unet.in_channels + unet.out_channels;
    c.lambda_l1 = lambda_l1;
    c.gan_mode = gan_mode;
    c.adam = adam;
    c.seed = seed;
    return c;
  }

  void validate() const {
    spectral.geometry.validate();
    require(spectral.sample_rate > 0 && spectral.stft.window_len > 0 && spectral.stft.hop > 0 &&
                spectral.stft.hop <= spectral.stft.window_len,
            Errc::invalid_argument, "sample_rate, n_fft and hop must be positive with hop <= n_fft");
    require(spectral.n_mels >= 1 && spectral.n_mels <= spectral.stft.window_len / 2 + 1, Errc::invalid_argument,
            "n_mels must be in 1..n_fft/2+1");
    require(spectral.floor_db < 0.0, Errc::invalid_argument, "floor_db must be negative");
    require(generator.image_size == spectral.n_mels && generator.image_size == spectral.geometry.width &&
                unet.image_size == generator.image_size,
            Errc::invalid_argument,
            "image_size, n_mels and chunk_width must agree (got " + std::to_string(generator.image_size) + ", " +
                std::to_string(spectral.n_mels) + ", " + std::to_string(spectral.geometry.width) + ")");
    require(train_songs >= -1, Errc::invalid_argument, "train_songs must be >= 0, or -1 for all");
    require(lambda_cycle > 0.0, Errc::invalid_argument, "lambda_cycle must be positive");
    cyclegan().validate();
    pix2pix().validate();
    require(adam.lr >= 0.0 && adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 &&
                adam.eps > 0.0,
            Errc::invalid_argument, "adam options out of range");
    require(epochs >= 1 && batch_size >= 1 && threads >= 1, Errc::invalid_argument,
            "epochs, batch_size and threads must be positive");
    inversion.validate();
    for (int l : embed_layers)
      require(l >= 0 && l <= discriminator.n_layers, Errc::invalid_argument,
              "embed layer " + std::to_string(l) + " outside 0.." + std::to_string(discriminator.n_layers));
    require(logistic.l2 >= 0.0 && logistic.grad_tol > 0.0 && logistic.max_iters >= 1, Errc::invalid_argument,
            "logistic options out of range");
  }

  /// Keys in a fixed order; each maps to a field through a getter/setter.
  struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
  };

  static const std::vector<Field>& fields();

  std::string serialize() const {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
    return out;
  }

  /// Applies one key = value pair. Setting `preset` resets every other field
  /// to that preset's values, so it must come first.
  void set(const std::string& key, const std::string& value) {
    for (const auto& f : fields())
      if (key == f.key) {
        try {
          f.set(*this, value);
        } catch (const Error&) {
          throw;
        } catch (const std::exception&) {
          throw Error(Errc::invalid_argument, "bad value '" + value + "' for " + key);
        }
        return;
      }
    throw Error(Errc::invalid_argument, "unknown config key '" + key + "'");
  }

  /// Parses "key = value" lines; '#' starts a comment. A preset line, if
  /// present, is applied before all other keys regardless of position.
  static RunConfig parse(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    RunConfig c = desk();
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos, Errc::invalid_argument,
              "config line " + std::to_string(line_no) + ": expected key = value");
      kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    for (const auto& [k, v] : kv)
      if (k == "preset") c = make(parse_preset(v));
    for (const auto& [k, v] : kv)
      if (k != "preset") c.set(k, v);
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::missing_file, path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return parse(s.str());
  }

  /// FNV-1a of the serialized form, as 16 hex digits.
  std::string fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : serialize()) h = (h ^ ch) * 1099511628211ull;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  bool operator==(const RunConfig& o) const { return serialize() == o.serialize(); }
};

namespace detail {

inline std::string fmt(double v) { return models::format_double(v); }
inline std::string fmt(int v) { return std::to_string(v); }

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(Errc::invalid_argument, "expected true or false, got '" + s + "'");
}

inline int parse_int(const std::string& s) {
  std::size_t pos = 0;
  const int v = std::stoi(s, &pos);
  if (pos != s.size()) throw Error(Errc::invalid_argument, "trailing characters in '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw Error(Errc::invalid_argument, "trailing characters in '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
  require(!s.empty() && s.find_first_not_of("0123456789") == std::string::npos, Errc::invalid_argument,
          "expected a non-negative integer, got '" + s + "'");
  return std::stoull(s);
}

inline std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  for (std::string part; std::getline(in, part, ',');)
    if (!part.empty()) out.push_back(parse_int(part));
  return out;
}

}  // namespace detail

inline const std::vector<RunConfig::Field>& RunConfig::fields() {
  using detail::fmt;
  using detail::parse_double;
  using detail::parse_int;
  using C = RunConfig;
#define STEMGAN_INT(key, member) \
  {key, [](const C& c) { return fmt(c.member); }, [](C& c, const std::string& v) { c.member = parse_int(v); }}
#define STEMGAN_DOUBLE(key, member) \
  {key, [](const C& c) { return fmt(c.member); }, [](C& c, const std::string& v) { c.member = parse_double(v); }}
  static const std::vector<Field> f = {
      {"preset", [](const C& c) { return std::string(to_string(c.preset)); },
       [](C& c, const std::string& v) { c = make(parse_preset(v)); }},
      {"seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, const std::string& v) { c.seed = detail::parse_u64(v); }},
      STEMGAN_INT("threads", threads),
      STEMGAN_INT("sample_rate", spectral.sample_rate),
      STEMGAN_INT("n_fft", spectral.stft.window_len),
      STEMGAN_INT("hop", spectral.stft.hop),
      STEMGAN_INT("n_mels", spectral.n_mels),
      STEMGAN_DOUBLE("floor_db", spectral.floor_db),
      STEMGAN_INT("chunk_width", spectral.geometry.width),
      STEMGAN_INT("chunk_overlap", spectral.geometry.overlap),
      STEMGAN_INT("train_songs", train_songs),
      {"image_size", [](const C& c) { return fmt(c.generator.image_size); },
       [](C& c, const std::string& v) { c.generator.image_size = c.unet.image_size = parse_int(v); }},
      STEMGAN_INT("g_res_blocks", generator.n_res_blocks),
      STEMGAN_INT("g_base_channels", generator.base_channels),
      STEMGAN_INT("g_down_up", generator.n_down_up),
      STEMGAN_INT("d_layers", discriminator.n_layers),
      STEMGAN_INT("d_base_channels", discriminator.base_channels),
      STEMGAN_INT("unet_levels", unet.n_levels),
      STEMGAN_INT("unet_base_channels", unet.base_channels),
      STEMGAN_DOUBLE("lambda_cycle", lambda_cycle),
      STEMGAN_DOUBLE("lambda_identity", lambda_identity),
      STEMGAN_DOUBLE("lambda_l1", lambda_l1),
      STEMGAN_INT("pool_size", pool_size),
      {"gan_mode", [](const C& c) { return std::string(models::to_string(c.gan_mode)); },
       [](C& c, const std::string& v) { c.gan_mode = models::parse_gan_mode(v); }},
      STEMGAN_DOUBLE("lr", adam.lr),
      STEMGAN_DOUBLE("beta1", adam.beta1),
      STEMGAN_DOUBLE("beta2", adam.beta2),
      STEMGAN_DOUBLE("adam_eps", adam.eps),
      STEMGAN_INT("epochs", epochs),
      {"max_steps", [](const C& c) { return std::to_string(c.max_steps); },
       [](C& c, const std::string& v) { c.max_steps = detail::parse_u64(v); }},
      STEMGAN_INT("batch_size", batch_size),
      {"reset_optimizer", [](const C& c) { return std::string(c.reset_optimizer ? "true" : "false"); },
       [](C& c, const std::string& v) { c.reset_optimizer = detail::parse_bool(v); }},
      STEMGAN_INT("mel_iters", inversion.max_iters),
      STEMGAN_DOUBLE("mel_step", inversion.step_size),
      STEMGAN_DOUBLE("mel_tol", inversion.tol),
      STEMGAN_INT("gl_iters", inversion.gl_iters),
      {"embed_layers", [](const C& c) { return detail::join(c.embed_layers); },
       [](C& c, const std::string& v) { c.embed_layers = detail::split_ints(v); }},
      STEMGAN_DOUBLE("logistic_l2", logistic.l2),
      STEMGAN_DOUBLE("logistic_tol", logistic.grad_tol),
      STEMGAN_INT("logistic_iters", logistic.max_iters),
  };
#undef STEMGAN_INT
#undef STEMGAN_DOUBLE
  return f;
}

}  // namespace stemgan
