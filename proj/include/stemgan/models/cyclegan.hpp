#pragma once

// Unpaired translation: G maps bass (X) to drums (Y), F maps back, D_X and
// D_Y judge each domain. Trained with adversarial plus cycle-consistency
// losses.

#include <functional>

#include "stemgan/dataset.hpp"
#include "stemgan/models/common.hpp"

namespace stemgan::models {

struct CycleGanConfig {
  GeneratorConfig generator = GeneratorConfig::desk();
  DiscriminatorConfig discriminator = DiscriminatorConfig::desk();
  double lambda_cycle = 10.0;
  double lambda_identity = 0.0;
  int pool_size = 50;
  GanMode gan_mode = GanMode::least_squares;
  ag::AdamOptions adam;
  std::uint64_t seed = 0;

  static CycleGanConfig paper() {
    CycleGanConfig c;
    c.generator = GeneratorConfig::paper();
    c.discriminator = DiscriminatorConfig::paper();
    return c;
  }
  static CycleGanConfig desk() { return {}; }

  void validate() const {
    generator.validate();
    discriminator.validate();
    require(generator.in_channels == generator.out_channels &&
                discriminator.in_channels == generator.out_channels,
            Errc::invalid_argument, "both domains must have the same channel count");
    require(lambda_cycle >= 0.0 && lambda_identity >= 0.0, Errc::invalid_argument,
            "loss weights must be non-negative");
    require(pool_size >= 0, Errc::invalid_argument, "pool size must be non-negative");
  }

  Header header() const {
    Header h;
    h["kind"] = "cyclegan";
    put(h, "arch.G", generator);
    put(h, "arch.D", discriminator);
    h["lambda_cycle"] = format_double(lambda_cycle);
    h["lambda_identity"] = format_double(lambda_identity);
    h["pool_size"] = std::to_string(pool_size);
    h["gan_mode"] = to_string(gan_mode);
    put(h, adam);
    h["seed"] = std::to_string(seed);
    return h;
  }

  static CycleGanConfig from_header(const Header& h) {
    require(header_get(h, "kind") == "cyclegan", Errc::config_mismatch,
            "checkpoint holds a " + header_get(h, "kind") + " model, not cyclegan");
    CycleGanConfig c;
    get(h, "arch.G", c.generator);
    get(h, "arch.D", c.discriminator);
    c.lambda_cycle = header_double(h, "lambda_cycle");
    c.lambda_identity = header_double(h, "lambda_identity");
    c.pool_size = header_int(h, "pool_size");
    c.gan_mode = parse_gan_mode(header_get(h, "gan_mode"));
    get(h, c.adam);
    c.seed = std::stoull(header_get(h, "seed"));
    return c;
  }
};

/// Generator-side losses of one step. `total` is what the generators
/// minimize; the other terms are unweighted diagnostics.
template <class T>
struct GeneratorLosses {
  Tensor<T> total, adv_g, adv_f, cycle_x, cycle_y, identity_x, identity_y;
  Tensor<T> fake_x, fake_y;
};

template <class T>
GeneratorLosses<T> cyclegan_generator_losses(const Tensor<T>& x, const Tensor<T>& y, const ResnetGenerator<T>& g,
                                             const ResnetGenerator<T>& f, const PatchDiscriminator<T>& d_x,
                                             const PatchDiscriminator<T>& d_y, const CycleGanConfig& cfg) {
  using namespace ag;
  require(x.shape() == y.shape(), Errc::shape_mismatch,
          "domain batches differ: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  GeneratorLosses<T> l;
  l.fake_y = g(x);
  l.fake_x = f(y);
  l.adv_g = gan_loss(d_y(l.fake_y), true, cfg.gan_mode);
  l.adv_f = gan_loss(d_x(l.fake_x), true, cfg.gan_mode);
  l.cycle_x = l1_loss(f(l.fake_y), x);
  l.cycle_y = l1_loss(g(l.fake_x), y);
  const T lc = static_cast<T>(cfg.lambda_cycle);
  l.total = add(add(l.adv_g, l.adv_f), add(scale(l.cycle_x, lc), scale(l.cycle_y, lc)));
  if (cfg.lambda_identity > 0.0) {
    l.identity_y = l1_loss(g(y), y);
    l.identity_x = l1_loss(f(x), x);
    l.total = add(l.total, scale(add(l.identity_x, l.identity_y), static_cast<T>(cfg.lambda_identity)));
  }
  return l;
}

/// 0.5 * [gan(D(real), 1) + gan(D(fake), 0)]
template <class T>
Tensor<T> discriminator_loss(const PatchDiscriminator<T>& d, const Tensor<T>& real, const Tensor<T>& fake,
                             GanMode mode) {
  return ag::scale(ag::add(gan_loss(d(real), true, mode), gan_loss(d(fake), false, mode)), T(0.5));
}

struct CycleStepLog {
  std::size_t step = 0;
  double loss_g = 0, loss_d_x = 0, loss_d_y = 0, cycle_x = 0, cycle_y = 0;

  std::vector<double> values() const { return {loss_g, loss_d_x, loss_d_y, cycle_x, cycle_y}; }
  bool finite() const {
    for (double v : values())
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline const std::vector<std::string>& cycle_log_columns() {
  static const std::vector<std::string> c{"step", "loss_G", "loss_D_X", "loss_D_Y", "cycle_X", "cycle_Y"};
  return c;
}

template <class T>
class CycleGan {
 public:
  explicit CycleGan(const CycleGanConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    g_ = ResnetGenerator<T>(cfg.generator, rng);
    f_ = ResnetGenerator<T>(cfg.generator, rng);
    d_x_ = PatchDiscriminator<T>(cfg.discriminator, rng);
    d_y_ = PatchDiscriminator<T>(cfg.discriminator, rng);
    gen_params_.append(g_.parameters(), "G.");
    gen_params_.append(f_.parameters(), "F.");
    disc_params_.append(d_x_.parameters(), "D_X.");
    disc_params_.append(d_y_.parameters(), "D_Y.");
    opt_g_ = ag::Adam<T>(gen_params_.tensors(), cfg.adam);
    opt_d_ = ag::Adam<T>(disc_params_.tensors(), cfg.adam);
    pool_x_ = ImagePool<T>(static_cast<std::size_t>(cfg.pool_size), cfg.seed + 1);
    pool_y_ = ImagePool<T>(static_cast<std::size_t>(cfg.pool_size), cfg.seed + 2);
  }

  /// Generator update with the discriminators frozen, then a discriminator
  /// update on pooled fakes.
  CycleStepLog train_step(const Tensor<T>& x, const Tensor<T>& y) {
    CycleStepLog log;
    log.step = ++step_;

    set_trainable(disc_params_, false);
    auto l = cyclegan_generator_losses(x, y, g_, f_, d_x_, d_y_, cfg_);
    opt_g_.zero_grad();
    l.total.backward();
    opt_g_.step();
    set_trainable(disc_params_, true);

    const auto fake_y = pool_y_.query(l.fake_y);
    const auto fake_x = pool_x_.query(l.fake_x);
    const auto ld_x = discriminator_loss(d_x_, x, fake_x, cfg_.gan_mode);
    const auto ld_y = discriminator_loss(d_y_, y, fake_y, cfg_.gan_mode);
    opt_d_.zero_grad();
    ag::add(ld_x, ld_y).backward();
    opt_d_.step();

    log.loss_g = l.total.item();
    log.loss_d_x = ld_x.item();
    log.loss_d_y = ld_y.item();
    log.cycle_x = l.cycle_x.item();
    log.cycle_y = l.cycle_y.item();
    return log;
  }

  /// G (bass -> drums) in inference mode.
  Tensor<T> translate(const Tensor<T>& x) const {
    ag::NoGradGuard guard;
    return g_(x);
  }
  /// F (drums -> bass) in inference mode.
  Tensor<T> translate_back(const Tensor<T>& y) const {
    ag::NoGradGuard guard;
    return f_(y);
  }

  ag::CheckpointFile checkpoint() const {
    ag::CheckpointFile f;
    Header h = cfg_.header();
    h["step"] = std::to_string(step_);
    h["epoch"] = std::to_string(epoch_);
    h["opt.steps"] = std::to_string(opt_g_.steps());
    f.header = encode_header(h);
    append_parameters(f, "G.", g_.parameters());
    append_parameters(f, "F.", f_.parameters());
    append_parameters(f, "D_X.", d_x_.parameters());
    append_parameters(f, "D_Y.", d_y_.parameters());
    append_optimizer(f, "opt_G", opt_g_, gen_params_);
    append_optimizer(f, "opt_D", opt_d_, disc_params_);
    return f;
  }

  void save(const std::filesystem::path& path) const { ag::write_checkpoint_file(path, checkpoint()); }

  /// Loads weights and optimizer state into this model; the architecture in
  /// the file must match. With reset_optimizer the moments start from zero
  /// (fine-tuning on a new dataset).
  void restore(const ag::CheckpointFile& file, bool reset_optimizer = false) {
    const Header found = decode_header(file.header);
    require(header_get(found, "kind") == "cyclegan", Errc::config_mismatch,
            "checkpoint holds a " + header_get(found, "kind") + " model, not cyclegan");
    check_header_keys(cfg_.header(), found, "arch.");
    const RecordIndex idx(file);
    restore_parameters(idx, "G.", g_.parameters());
    restore_parameters(idx, "F.", f_.parameters());
    restore_parameters(idx, "D_X.", d_x_.parameters());
    restore_parameters(idx, "D_Y.", d_y_.parameters());
    step_ = std::stoull(header_get(found, "step"));
    epoch_ = std::stoull(header_get(found, "epoch"));
    if (reset_optimizer) {
      opt_g_.reset();
      opt_d_.reset();
    } else {
      restore_optimizer(idx, "opt_G", opt_g_, gen_params_);
      restore_optimizer(idx, "opt_D", opt_d_, disc_params_);
      const auto steps = std::stoull(header_get(found, "opt.steps"));
      opt_g_.set_steps(steps);
      opt_d_.set_steps(steps);
    }
  }

  static CycleGan load(const std::filesystem::path& path) {
    const auto file = ag::read_checkpoint_file(path);
    CycleGan m(CycleGanConfig::from_header(decode_header(file.header)));
    m.restore(file);
    return m;
  }

  const CycleGanConfig& config() const { return cfg_; }
  ResnetGenerator<T>& g() { return g_; }
  ResnetGenerator<T>& f() { return f_; }
  PatchDiscriminator<T>& d_x() { return d_x_; }
  PatchDiscriminator<T>& d_y() { return d_y_; }
  ParameterSet<T>& generator_parameters() { return gen_params_; }
  ParameterSet<T>& discriminator_parameters() { return disc_params_; }
  ag::Adam<T>& generator_optimizer() { return opt_g_; }
  ag::Adam<T>& discriminator_optimizer() { return opt_d_; }
  std::size_t step() const { return step_; }
  std::size_t epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }

 private:
  CycleGanConfig cfg_;
  ResnetGenerator<T> g_, f_;
  PatchDiscriminator<T> d_x_, d_y_;
  ParameterSet<T> gen_params_, disc_params_;
  ag::Adam<T> opt_g_, opt_d_;
  ImagePool<T> pool_x_, pool_y_;
  std::size_t step_ = 0, epoch_ = 0;
};

struct TrainOptions {
  int epochs = 1;
  std::size_t max_steps = 0;          // stop early after this many steps in total (0 = no limit)
  std::filesystem::path out_dir;      // checkpoints and loss log; empty keeps everything in memory
  bool checkpoint_each_epoch = true;
  std::function<void(const std::vector<double>& step_values)> on_step;
};

struct TrainReport {
  std::size_t steps = 0;
  std::vector<std::vector<double>> log;  // per step: the loss-log columns after "step"
  std::vector<std::filesystem::path> checkpoints;
};

namespace detail {

template <class Model, class Loader, class StepFn>
TrainReport run_training(Model& model, Loader& loader, const TrainOptions& opt,
                         const std::vector<std::string>& columns, StepFn&& step_fn) {
  require(opt.epochs >= 1, Errc::invalid_argument, "epochs must be at least 1");
  TrainReport report;
  LossLog log;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    log = LossLog(opt.out_dir / "loss_log.tsv", columns);
  }
  for (int e = 0; e < opt.epochs; ++e) {
    for (std::size_t i = 0; i < loader.epoch_length(); ++i) {
      if (opt.max_steps > 0 && report.steps >= opt.max_steps) break;
      const auto batch = loader.next();
      const std::vector<double> values = step_fn(batch);
      ++report.steps;
      log.write(model.step(), values);
      report.log.push_back(values);
      if (opt.on_step) opt.on_step(values);
      for (double v : values)
        if (!std::isfinite(v)) {
          std::string where = "in memory";
          if (!opt.out_dir.empty()) {
            const auto path = opt.out_dir / "diagnostic.ckpt";
            model.save(path);
            where = path.string();
          }
          throw Error(Errc::non_finite, "non-finite loss at step " + std::to_string(model.step()) +
                                            "; diagnostic checkpoint " + where);
        }
    }
    model.set_epoch(model.epoch() + 1);
    if (opt.checkpoint_each_epoch && !opt.out_dir.empty()) {
      const auto path = opt.out_dir / ("epoch_" + std::to_string(model.epoch()) + ".ckpt");
      model.save(path);
      report.checkpoints.push_back(path);
    }
    if (opt.max_steps > 0 && report.steps >= opt.max_steps) break;
  }
  return report;
}

}  // namespace detail

template <class T>
TrainReport train_cyclegan(CycleGan<T>& model, BatchLoader<T>& loader, const TrainOptions& opt = {}) {
  return detail::run_training(model, loader, opt, cycle_log_columns(), [&](const Batch<T>& b) {
    return model.train_step(b.x, b.y).values();
  });
}

/// Runs a generator over chunks and maps the output back to levels,
/// keeping song id and offset.
template <class T, class Fn>
std::vector<Chunk> translate_chunks(const std::vector<Chunk>& chunks, int image_size, Domain out_domain, Fn&& gen) {
  std::vector<Chunk> out;
  out.reserve(chunks.size());
  for (const auto& c : chunks) {
    require(c.pixels.rows() == image_size && c.pixels.cols() == image_size, Errc::shape_mismatch,
            "chunk " + c.song_id + "@" + std::to_string(c.offset) + " is " + std::to_string(c.pixels.rows()) + "x" +
                std::to_string(c.pixels.cols()) + ", model expects " + std::to_string(image_size));
    const auto y = gen(to_tensor<T>(c.pixels));
    out.push_back({to_levels(y), c.song_id, c.offset, out_domain});
  }
  return out;
}

template <class T>
std::vector<Chunk> translate(const CycleGan<T>& model, const std::vector<Chunk>& chunks) {
  return translate_chunks<T>(chunks, model.config().generator.image_size, Domain::drums,
                             [&](const Tensor<T>& x) { return model.translate(x); });
}

}  // namespace stemgan::models
