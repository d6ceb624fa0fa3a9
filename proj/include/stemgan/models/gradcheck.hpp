#pragma once

// Finite-difference checks through complete desk-scale networks. These run
// in long double: at 64 x 64 the networks hold tens of thousands of ReLU
// units, and in double no step is both small enough to avoid crossing their
// kinks and large enough to stay above rounding noise.

#include "stemgan/autograd/gradcheck.hpp"
#include "stemgan/models/networks.hpp"

namespace stemgan::models {

using Precise = long double;

template <class T>
ag::Tensor<T> random_image(std::size_t channels, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(channels * size * size);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return ag::Tensor<T>::from({1, channels, size, size}, std::move(v));
}

/// Samples `per_tensor` entries of every parameter tensor plus the input.
template <class Net, class T>
ag::GradCheckResult check_network(std::string name, Net& net, const ag::Tensor<T>& x, std::uint64_t seed,
                                  std::size_t per_tensor, const ag::GradCheckOptions& base) {
  ag::GradCheckOptions opt = base;
  opt.max_entries = per_tensor;
  opt.seed = seed;
  auto wrt = net.parameters().tensors();
  wrt.push_back(x);
  return ag::check_gradients(std::move(name), [&] { return ag::random_projection(net(x), seed); }, wrt, opt);
}

inline ag::GradCheckOptions architecture_check_options() {
  ag::GradCheckOptions o;
  o.step = 1e-9;
  o.floor = 1e-3;
  return o;
}

inline std::vector<ag::GradCheckResult> architecture_gradient_suite(
    std::uint64_t seed = 1, std::size_t per_tensor = 1, const ag::GradCheckOptions& opt = architecture_check_options()) {
  std::mt19937_64 rng(seed);
  std::vector<ag::GradCheckResult> out;
  const auto gcfg = GeneratorConfig::desk();
  ResnetGenerator<Precise> g(gcfg, rng);
  // Non-trivial affine parameters so the norm gradients are exercised.
  for (auto& e : g.parameters().entries())
    if (e.name.ends_with(".beta") || e.name.ends_with(".bias")) ag::fill_normal(e.tensor, 0.0, 0.1, rng);
  auto x = random_image<Precise>(1, static_cast<std::size_t>(gcfg.image_size), rng);
  out.push_back(check_network("resnet_generator_desk", g, x, seed, per_tensor, opt));

  PatchDiscriminator<Precise> d(DiscriminatorConfig::desk(), rng);
  for (auto& e : d.parameters().entries())
    if (e.name.ends_with(".beta") || e.name.ends_with(".bias")) ag::fill_normal(e.tensor, 0.0, 0.1, rng);
  auto xd = random_image<Precise>(1, static_cast<std::size_t>(gcfg.image_size), rng);
  out.push_back(check_network("patch_discriminator_desk", d, xd, seed + 1, per_tensor, opt));
  return out;
}

}  // namespace stemgan::models
