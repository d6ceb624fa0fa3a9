#pragma once

// Paired baseline: a U-Net generator and a conditional PatchGAN that sees the
// input concatenated with the (real or generated) target.

#include "stemgan/models/cyclegan.hpp"

namespace stemgan::models {

struct Pix2PixConfig {
  UNetConfig generator = UNetConfig::desk();
  DiscriminatorConfig discriminator{3, 16, 2};
  double lambda_l1 = 100.0;
  GanMode gan_mode = GanMode::least_squares;
  ag::AdamOptions adam;
  std::uint64_t seed = 0;

  static Pix2PixConfig paper() {
    Pix2PixConfig c;
    c.generator = UNetConfig::paper();
    c.discriminator = {3, 64, 2};
    return c;
  }
  static Pix2PixConfig desk() { return {}; }

  void validate() const {
    generator.validate();
    discriminator.validate();
    require(discriminator.in_channels == generator.in_channels + generator.out_channels, Errc::invalid_argument,
            "conditional discriminator must see input and target channels");
    require(lambda_l1 >= 0.0, Errc::invalid_argument, "lambda_l1 must be non-negative");
  }

  Header header() const {
    Header h;
    h["kind"] = "pix2pix";
    put(h, "arch.G", generator);
    put(h, "arch.D", discriminator);
    h["lambda_l1"] = format_double(lambda_l1);
    h["gan_mode"] = to_string(gan_mode);
    put(h, adam);
    h["seed"] = std::to_string(seed);
    return h;
  }

  static Pix2PixConfig from_header(const Header& h) {
    require(header_get(h, "kind") == "pix2pix", Errc::config_mismatch,
            "checkpoint holds a " + header_get(h, "kind") + " model, not pix2pix");
    Pix2PixConfig c;
    get(h, "arch.G", c.generator);
    get(h, "arch.D", c.discriminator);
    c.lambda_l1 = header_double(h, "lambda_l1");
    c.gan_mode = parse_gan_mode(header_get(h, "gan_mode"));
    get(h, c.adam);
    c.seed = std::stoull(header_get(h, "seed"));
    return c;
  }
};

struct Pix2PixStepLog {
  std::size_t step = 0;
  double loss_g = 0, loss_d = 0, l1 = 0;
  std::vector<double> values() const { return {loss_g, loss_d, l1}; }
};

inline const std::vector<std::string>& pix2pix_log_columns() {
  static const std::vector<std::string> c{"step", "loss_G", "loss_D", "l1"};
  return c;
}

template <class T>
class Pix2Pix {
 public:
  explicit Pix2Pix(const Pix2PixConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    g_ = UNetGenerator<T>(cfg.generator, rng);
    d_ = PatchDiscriminator<T>(cfg.discriminator, rng);
    opt_g_ = ag::Adam<T>(g_.parameters().tensors(), cfg.adam);
    opt_d_ = ag::Adam<T>(d_.parameters().tensors(), cfg.adam);
  }

  Pix2PixStepLog train_step(const Tensor<T>& x, const Tensor<T>& y) {
    using namespace ag;
    require(x.dim(0) == y.dim(0) && x.dim(2) == y.dim(2) && x.dim(3) == y.dim(3), Errc::shape_mismatch,
            "paired batches differ: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    Pix2PixStepLog log;
    log.step = ++step_;

    set_trainable(d_.parameters(), false);
    const auto fake = g_(x);
    const auto adv = gan_loss(d_(concat_channels(x, fake)), true, cfg_.gan_mode);
    const auto l1 = l1_loss(fake, y);
    const auto total = add(adv, scale(l1, static_cast<T>(cfg_.lambda_l1)));
    opt_g_.zero_grad();
    total.backward();
    opt_g_.step();
    set_trainable(d_.parameters(), true);

    const auto ld = scale(add(gan_loss(d_(concat_channels(x, y)), true, cfg_.gan_mode),
                              gan_loss(d_(concat_channels(x, fake.detach())), false, cfg_.gan_mode)),
                          T(0.5));
    opt_d_.zero_grad();
    ld.backward();
    opt_d_.step();

    log.loss_g = total.item();
    log.loss_d = ld.item();
    log.l1 = l1.item();
    return log;
  }

  Tensor<T> translate(const Tensor<T>& x) const {
    ag::NoGradGuard guard;
    return g_(x);
  }

  ag::CheckpointFile checkpoint() const {
    ag::CheckpointFile f;
    Header h = cfg_.header();
    h["step"] = std::to_string(step_);
    h["epoch"] = std::to_string(epoch_);
    h["opt.steps"] = std::to_string(opt_g_.steps());
    f.header = encode_header(h);
    append_parameters(f, "G.", g_.parameters());
    append_parameters(f, "D.", d_.parameters());
    append_optimizer(f, "opt_G", opt_g_, g_.parameters());
    append_optimizer(f, "opt_D", opt_d_, d_.parameters());
    return f;
  }

  void save(const std::filesystem::path& path) const { ag::write_checkpoint_file(path, checkpoint()); }

  void restore(const ag::CheckpointFile& file, bool reset_optimizer = false) {
    const Header found = decode_header(file.header);
    require(header_get(found, "kind") == "pix2pix", Errc::config_mismatch,
            "checkpoint holds a " + header_get(found, "kind") + " model, not pix2pix");
    check_header_keys(cfg_.header(), found, "arch.");
    const RecordIndex idx(file);
    restore_parameters(idx, "G.", g_.parameters());
    restore_parameters(idx, "D.", d_.parameters());
    step_ = std::stoull(header_get(found, "step"));
    epoch_ = std::stoull(header_get(found, "epoch"));
    if (reset_optimizer) {
      opt_g_.reset();
      opt_d_.reset();
    } else {
      restore_optimizer(idx, "opt_G", opt_g_, g_.parameters());
      restore_optimizer(idx, "opt_D", opt_d_, d_.parameters());
      const auto steps = std::stoull(header_get(found, "opt.steps"));
      opt_g_.set_steps(steps);
      opt_d_.set_steps(steps);
    }
  }

  static Pix2Pix load(const std::filesystem::path& path) {
    const auto file = ag::read_checkpoint_file(path);
    Pix2Pix m(Pix2PixConfig::from_header(decode_header(file.header)));
    m.restore(file);
    return m;
  }

  const Pix2PixConfig& config() const { return cfg_; }
  UNetGenerator<T>& g() { return g_; }
  PatchDiscriminator<T>& d() { return d_; }
  std::size_t step() const { return step_; }
  std::size_t epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }

 private:
  Pix2PixConfig cfg_;
  UNetGenerator<T> g_;
  PatchDiscriminator<T> d_;
  ag::Adam<T> opt_g_, opt_d_;
  std::size_t step_ = 0, epoch_ = 0;
};

template <class T>
TrainReport train_pix2pix(Pix2Pix<T>& model, BatchLoader<T>& loader, const TrainOptions& opt = {}) {
  return detail::run_training(model, loader, opt, pix2pix_log_columns(), [&](const Batch<T>& b) {
    return model.train_step(b.x, b.y).values();
  });
}

template <class T>
std::vector<Chunk> translate(const Pix2Pix<T>& model, const std::vector<Chunk>& chunks) {
  return translate_chunks<T>(chunks, model.config().generator.image_size, Domain::drums,
                             [&](const Tensor<T>& x) { return model.translate(x); });
}

}  // namespace stemgan::models
