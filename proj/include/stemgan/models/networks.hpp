#pragma once

// Generator and discriminator architectures: the ResNet translation
// generator, the PatchGAN discriminator and the U-Net used by the paired
// baseline. All are templates over the scalar type so the same code runs in
// float for training and double for gradient checks.

#include <algorithm>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "stemgan/autograd/conv.hpp"
#include "stemgan/autograd/parameters.hpp"

namespace stemgan::models {

using ag::ParameterSet;
using ag::Tensor;

struct GeneratorConfig {
  int n_res_blocks = 3;
  int base_channels = 16;
  int n_down_up = 2;
  int in_channels = 1;
  int out_channels = 1;
  int image_size = 64;

  static GeneratorConfig paper() { return {9, 64, 2, 1, 1, 256}; }
  static GeneratorConfig desk() { return {3, 16, 2, 1, 1, 64}; }

  void validate() const {
    require(n_res_blocks >= 0 && base_channels >= 1 && n_down_up >= 0 && in_channels >= 1 &&
                out_channels >= 1 && image_size >= 1,
            Errc::invalid_argument, "generator config has non-positive fields");
    require(image_size % (1 << n_down_up) == 0, Errc::invalid_argument,
            "image size " + std::to_string(image_size) + " not divisible by 2^" +
                std::to_string(n_down_up));
    require(image_size > 3, Errc::invalid_argument, "image too small for 7x7 reflect padding");
  }
  bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
  int n_layers = 3;
  int base_channels = 16;
  int in_channels = 1;

  static DiscriminatorConfig paper() { return {3, 64, 1}; }
  static DiscriminatorConfig desk() { return {3, 16, 1}; }

  void validate() const {
    require(n_layers >= 1 && base_channels >= 1 && in_channels >= 1, Errc::invalid_argument,
            "discriminator config has non-positive fields");
  }
  bool operator==(const DiscriminatorConfig&) const = default;
};

/// U-Net generator for the paired baseline. n_levels stride-2 encoder steps
/// mirrored by the decoder, with skip connections at every level but the
/// outermost.
struct UNetConfig {
  int n_levels = 4;
  int base_channels = 16;
  int in_channels = 1;
  int out_channels = 1;
  int image_size = 64;

  static UNetConfig paper() { return {8, 64, 1, 1, 256}; }
  static UNetConfig desk() { return {4, 16, 1, 1, 64}; }

  void validate() const {
    require(n_levels >= 1 && base_channels >= 1 && in_channels >= 1 && out_channels >= 1,
            Errc::invalid_argument, "u-net config has non-positive fields");
    require(image_size % (1 << n_levels) == 0, Errc::invalid_argument,
            "image size not divisible by 2^n_levels");
  }
  bool operator==(const UNetConfig&) const = default;
};

inline constexpr double kInitStddev = 0.02;

namespace detail {

template <class T>
struct Conv {
  Tensor<T> weight, bias;
};

template <class T>
struct Norm {
  Tensor<T> gamma, beta;
};

template <class T>
Conv<T> make_conv(ParameterSet<T>& ps, const std::string& name, std::size_t out, std::size_t in,
                  std::size_t k, std::mt19937_64& rng) {
  Conv<T> c{ps.add(name + ".weight", {out, in, k, k}), ps.add(name + ".bias", {out})};
  ag::fill_normal(c.weight, 0.0, kInitStddev, rng);
  return c;
}

// Transposed-convolution weights are stored in x out x k x k.
template <class T>
Conv<T> make_conv_transpose(ParameterSet<T>& ps, const std::string& name, std::size_t in,
                            std::size_t out, std::size_t k, std::mt19937_64& rng) {
  Conv<T> c{ps.add(name + ".weight", {in, out, k, k}), ps.add(name + ".bias", {out})};
  ag::fill_normal(c.weight, 0.0, kInitStddev, rng);
  return c;
}

template <class T>
Norm<T> make_norm(ParameterSet<T>& ps, const std::string& name, std::size_t channels) {
  Norm<T> n{ps.add(name + ".gamma", {channels}), ps.add(name + ".beta", {channels})};
  ag::fill_constant(n.gamma, T(1));
  return n;
}

template <class T>
Tensor<T> norm(const Tensor<T>& x, const Norm<T>& n) {
  return ag::instance_norm(x, n.gamma, n.beta);
}

}  // namespace detail

/// c7s1 stem, n_down_up stride-2 convs, residual blocks, n_down_up
/// transposed convs, c7s1 head with tanh. Shape preserving.
template <class T>
class ResnetGenerator {
 public:
  ResnetGenerator() = default;
  ResnetGenerator(const GeneratorConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg.validate();
    const auto c0 = static_cast<std::size_t>(cfg.base_channels);
    stem_ = detail::make_conv(params_, "stem", c0, cfg.in_channels, 7, rng);
    stem_norm_ = detail::make_norm(params_, "stem_norm", c0);
    std::size_t ch = c0;
    for (int i = 0; i < cfg.n_down_up; ++i) {
      const std::string name = "down" + std::to_string(i);
      down_.push_back(detail::make_conv(params_, name, ch * 2, ch, 3, rng));
      down_norm_.push_back(detail::make_norm(params_, name + "_norm", ch * 2));
      ch *= 2;
    }
    for (int i = 0; i < cfg.n_res_blocks; ++i) {
      const std::string name = "res" + std::to_string(i);
      Block b;
      b.conv1 = detail::make_conv(params_, name + ".conv1", ch, ch, 3, rng);
      b.norm1 = detail::make_norm(params_, name + ".norm1", ch);
      b.conv2 = detail::make_conv(params_, name + ".conv2", ch, ch, 3, rng);
      b.norm2 = detail::make_norm(params_, name + ".norm2", ch);
      blocks_.push_back(b);
    }
    for (int i = 0; i < cfg.n_down_up; ++i) {
      const std::string name = "up" + std::to_string(i);
      up_.push_back(detail::make_conv_transpose(params_, name, ch, ch / 2, 3, rng));
      up_norm_.push_back(detail::make_norm(params_, name + "_norm", ch / 2));
      ch /= 2;
    }
    head_ = detail::make_conv(params_, "head", cfg.out_channels, ch, 7, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    using namespace ag;
    require(x.rank() == 4 && x.dim(1) == static_cast<std::size_t>(cfg_.in_channels) &&
                x.dim(2) % (std::size_t{1} << cfg_.n_down_up) == 0 &&
                x.dim(3) % (std::size_t{1} << cfg_.n_down_up) == 0,
            Errc::shape_mismatch, "generator input " + shape_str(x.shape()));
    auto h = relu(detail::norm(conv2d(x, stem_.weight, stem_.bias, {1, 3, PadMode::reflect}), stem_norm_));
    for (std::size_t i = 0; i < down_.size(); ++i)
      h = relu(detail::norm(conv2d(h, down_[i].weight, down_[i].bias, {2, 1, PadMode::zero}), down_norm_[i]));
    for (const auto& b : blocks_) {
      auto r = relu(detail::norm(conv2d(h, b.conv1.weight, b.conv1.bias, {1, 1, PadMode::reflect}), b.norm1));
      r = detail::norm(conv2d(r, b.conv2.weight, b.conv2.bias, {1, 1, PadMode::reflect}), b.norm2);
      h = add(h, r);
    }
    for (std::size_t i = 0; i < up_.size(); ++i)
      h = relu(detail::norm(conv_transpose2d(h, up_[i].weight, up_[i].bias, {2, 1, 1}), up_norm_[i]));
    return tanh(conv2d(h, head_.weight, head_.bias, {1, 3, PadMode::reflect}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return forward(x); }

  const GeneratorConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

 private:
  struct Block {
    detail::Conv<T> conv1, conv2;
    detail::Norm<T> norm1, norm2;
  };
  GeneratorConfig cfg_;
  ParameterSet<T> params_;
  detail::Conv<T> stem_, head_;
  detail::Norm<T> stem_norm_;
  std::vector<detail::Conv<T>> down_, up_;
  std::vector<detail::Norm<T>> down_norm_, up_norm_;
  std::vector<Block> blocks_;
};

/// PatchGAN: n_layers stride-2 4x4 convs (no norm on the first), one stride-1
/// 4x4 conv, then a 1-channel stride-1 4x4 conv producing a map of logits.
/// n_layers = 3 gives a 70 x 70 receptive field per output unit.
template <class T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(const DiscriminatorConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg.validate();
    const auto base = static_cast<std::size_t>(cfg.base_channels);
    std::size_t in = cfg.in_channels, mult = 1;
    for (int i = 0; i <= cfg.n_layers; ++i) {
      const std::string name = "block" + std::to_string(i);
      mult = std::min<std::size_t>(std::size_t{1} << i, 8);
      const std::size_t out = base * mult;
      Layer l;
      l.conv = detail::make_conv(params_, name, out, in, 4, rng);
      l.stride = i < cfg.n_layers ? 2 : 1;
      l.normalized = i > 0;
      if (l.normalized) l.norm = detail::make_norm(params_, name + "_norm", out);
      layers_.push_back(l);
      in = out;
    }
    head_ = detail::make_conv(params_, "head", 1, in, 4, rng);
  }

  /// Activations after every block (n_layers + 1 entries), then the logits.
  std::vector<Tensor<T>> features(const Tensor<T>& x) const {
    using namespace ag;
    require(x.rank() == 4 && x.dim(1) == static_cast<std::size_t>(cfg_.in_channels),
            Errc::shape_mismatch, "discriminator input " + shape_str(x.shape()));
    std::vector<Tensor<T>> out;
    Tensor<T> h = x;
    for (const auto& l : layers_) {
      h = conv2d(h, l.conv.weight, l.conv.bias, {l.stride, 1, PadMode::zero});
      if (l.normalized) h = detail::norm(h, l.norm);
      h = leaky_relu(h, T(0.2));
      out.push_back(h);
    }
    out.push_back(conv2d(h, head_.weight, head_.bias, {1, 1, PadMode::zero}));
    return out;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return features(x).back(); }
  Tensor<T> operator()(const Tensor<T>& x) const { return forward(x); }

  /// Channel count of block `layer` (0-based, n_layers is the penultimate).
  std::size_t channels(int layer) const { return layers_.at(static_cast<std::size_t>(layer)).conv.bias.numel(); }
  std::size_t block_count() const { return layers_.size(); }

  const DiscriminatorConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

 private:
  struct Layer {
    detail::Conv<T> conv;
    detail::Norm<T> norm;
    std::size_t stride = 2;
    bool normalized = true;
  };
  DiscriminatorConfig cfg_;
  ParameterSet<T> params_;
  std::vector<Layer> layers_;
  detail::Conv<T> head_;
};

/// Side length of the patch map for a square input.
inline std::size_t patch_map_size(std::size_t image, int n_layers) {
  std::size_t s = image;
  for (int i = 0; i < n_layers; ++i) s = ag::conv_output_size(s, 4, 2, 1);
  s = ag::conv_output_size(s, 4, 1, 1);
  return ag::conv_output_size(s, 4, 1, 1);
}

/// Input extent seen by one patch-map unit: r_in = (r_out - 1) * stride + k,
/// walked back from the logit layer.
inline std::size_t receptive_field(int n_layers) {
  std::size_t r = 1;
  r = (r - 1) + 4;  // head
  r = (r - 1) + 4;  // stride-1 block
  for (int i = 0; i < n_layers; ++i) r = (r - 1) * 2 + 4;
  return r;
}

template <class T>
class UNetGenerator {
 public:
  UNetGenerator() = default;
  UNetGenerator(const UNetConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg.validate();
    const auto base = static_cast<std::size_t>(cfg.base_channels);
    auto width = [base](int level) { return base * std::min<std::size_t>(std::size_t{1} << level, 8); };
    std::size_t in = cfg.in_channels;
    for (int i = 0; i < cfg.n_levels; ++i) {
      const std::string name = "enc" + std::to_string(i);
      Level l;
      l.conv = detail::make_conv(params_, name, width(i), in, 4, rng);
      l.normalized = i > 0 && i + 1 < cfg.n_levels;
      if (l.normalized) l.norm = detail::make_norm(params_, name + "_norm", width(i));
      enc_.push_back(l);
      in = width(i);
    }
    // Decoder level i mirrors encoder level i; its input is the previous
    // decoder output concatenated with the encoder skip (except innermost).
    dec_.resize(static_cast<std::size_t>(cfg.n_levels));
    for (int i = cfg.n_levels - 1; i >= 0; --i) {
      const std::string name = "dec" + std::to_string(i);
      const std::size_t dec_in = i == cfg.n_levels - 1 ? width(i) : 2 * width(i);
      const std::size_t dec_out = i == 0 ? static_cast<std::size_t>(cfg.out_channels) : width(i - 1);
      Level l;
      l.conv = detail::make_conv_transpose(params_, name, dec_in, dec_out, 4, rng);
      l.normalized = i > 0;
      if (l.normalized) l.norm = detail::make_norm(params_, name + "_norm", dec_out);
      dec_[static_cast<std::size_t>(i)] = l;
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    using namespace ag;
    require(x.rank() == 4 && x.dim(1) == static_cast<std::size_t>(cfg_.in_channels) &&
                x.dim(2) % (std::size_t{1} << cfg_.n_levels) == 0 &&
                x.dim(3) % (std::size_t{1} << cfg_.n_levels) == 0,
            Errc::shape_mismatch, "u-net input " + shape_str(x.shape()));
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      if (i > 0) h = leaky_relu(h, T(0.2));
      h = conv2d(h, enc_[i].conv.weight, enc_[i].conv.bias, {2, 1, PadMode::zero});
      if (enc_[i].normalized) h = detail::norm(h, enc_[i].norm);
      skips.push_back(h);
    }
    for (std::size_t j = enc_.size(); j-- > 0;) {
      if (j + 1 < enc_.size()) h = concat_channels(h, skips[j]);
      h = relu(h);
      h = conv_transpose2d(h, dec_[j].conv.weight, dec_[j].conv.bias, {2, 1, 0});
      if (dec_[j].normalized) h = detail::norm(h, dec_[j].norm);
    }
    return tanh(h);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return forward(x); }

  const UNetConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

 private:
  struct Level {
    detail::Conv<T> conv;
    detail::Norm<T> norm;
    bool normalized = true;
  };
  UNetConfig cfg_;
  ParameterSet<T> params_;
  std::vector<Level> enc_, dec_;
};

}  // namespace stemgan::models
