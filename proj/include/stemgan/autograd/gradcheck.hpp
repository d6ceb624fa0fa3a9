#pragma once

// Central finite-difference gradient checks, run in double or long double.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "stemgan/autograd/conv.hpp"
#include "stemgan/autograd/ops.hpp"

namespace stemgan::ag {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for the relative error, so entries whose true gradient
  // is zero are judged by absolute error instead.
  double floor = 1e-6;
  std::size_t max_entries = 0;  // per tensor; 0 checks every entry
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  // Location and values of the worst entry.
  std::size_t worst_tensor = 0, worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;

  bool passed(double tol) const { return std::isfinite(max_rel_error) && max_rel_error < tol; }
};

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the backward pass of `loss` (a callable returning a scalar
/// tensor) against central differences with respect to each tensor in `wrt`.
template <class T, class F>
GradCheckResult check_gradients(std::string name, F&& loss, std::vector<Tensor<T>> wrt,
                                const GradCheckOptions& opt = {}) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.node().grad.assign(t.numel(), T(0));
  }
  loss().backward();

  GradCheckResult result{std::move(name)};
  std::mt19937_64 rng(opt.seed);
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    const std::vector<T> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_entries > 0 && idx.size() > opt.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_entries);
    }
    NoGradGuard no_grad;
    for (std::size_t i : idx) {
      T& v = t.data()[i];
      const T saved = v;
      const T h = static_cast<T>(opt.step);
      v = saved + h;
      const T up = loss().item();
      v = saved - h;
      const T down = loss().item();
      v = saved;
      const T numeric = (up - down) / (T(2) * h);
      const T err = std::abs(analytic[i] - numeric) /
                    std::max({std::abs(analytic[i]), std::abs(numeric), static_cast<T>(opt.floor)});
      if (static_cast<double>(err) >= result.max_rel_error) {
        result.max_rel_error = static_cast<double>(err);
        result.worst_tensor = ti;
        result.worst_index = i;
        result.worst_analytic = static_cast<double>(analytic[i]);
        result.worst_numeric = static_cast<double>(numeric);
      }
      if (!std::isfinite(static_cast<double>(numeric)) || !std::isfinite(static_cast<double>(analytic[i])))
        result.max_rel_error = std::numeric_limits<double>::infinity();
      ++result.entries;
    }
  }
  return result;
}

/// Contracts a tensor with fixed random weights: a scalar whose gradient
/// with respect to every output entry is O(1).
template <class T>
Tensor<T> random_projection(const Tensor<T>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<T> r(y.numel());
  for (auto& v : r) v = static_cast<T>(n(rng));
  return sum(mul(y, Tensor<T>::from(y.shape(), std::move(r))));
}

namespace detail {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<double>::from(std::move(shape), std::move(v), true);
}

// Entries bounded away from zero, so kinked ops are differentiable at every
// perturbed point.
inline Tensor<double> away_from_zero(Shape shape, std::mt19937_64& rng) {
  auto t = random_tensor(std::move(shape), rng, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : t.data())
    if (sign(rng)) x = -x;
  return t;
}

}  // namespace detail

/// One check per differentiable op (and a few configurations of the
/// convolutions), plus a composite expression.
inline std::vector<GradCheckResult> op_gradient_suite(std::uint64_t seed = 1,
                                                      const GradCheckOptions& opt = {}) {
  using detail::away_from_zero;
  using detail::random_tensor;
  using Td = Tensor<double>;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;
  auto proj = [&](const Td& y) { return random_projection(y, seed + out.size()); };

  const Shape s{2, 3, 4, 5};
  {
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    out.push_back(check_gradients<double>("add", [&] { return proj(add(a, b)); }, {a, b}, opt));
    out.push_back(check_gradients<double>("sub", [&] { return proj(sub(a, b)); }, {a, b}, opt));
    out.push_back(check_gradients<double>("mul", [&] { return proj(mul(a, b)); }, {a, b}, opt));
    auto c = random_tensor({1}, rng);
    out.push_back(check_gradients<double>("mul_scalar", [&] { return proj(mul(a, c)); }, {a, c}, opt));
    out.push_back(check_gradients<double>("add_scalar", [&] { return proj(add(c, b)); }, {c, b}, opt));
    out.push_back(check_gradients<double>("scale", [&] { return proj(scale(a, 1.7)); }, {a}, opt));
    out.push_back(check_gradients<double>("tanh", [&] { return proj(tanh(a)); }, {a}, opt));
    out.push_back(check_gradients<double>("square", [&] { return proj(square(a)); }, {a}, opt));
    out.push_back(check_gradients<double>("sum", [&] { return scale(sum(a), 0.3); }, {a}, opt));
    out.push_back(check_gradients<double>("mean", [&] { return mean(square(a)); }, {a}, opt));
  }
  {
    auto k = away_from_zero(s, rng);
    out.push_back(check_gradients<double>("relu", [&] { return proj(relu(k)); }, {k}, opt));
    out.push_back(check_gradients<double>("leaky_relu", [&] { return proj(leaky_relu(k)); }, {k}, opt));
    out.push_back(check_gradients<double>("abs", [&] { return proj(abs(k)); }, {k}, opt));
  }
  {
    auto a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 1, 3, 3}, rng);
    out.push_back(check_gradients<double>("concat_channels", [&] { return proj(concat_channels(a, b)); }, {a, b}, opt));
  }
  {
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    auto d = away_from_zero(s, rng);
    auto base = Td::from(s, std::vector<double>(a.data().begin(), a.data().end()));
    auto shifted = add(base, d).detach();
    out.push_back(check_gradients<double>("l1_loss", [&] { return l1_loss(a, shifted); }, {a}, opt));
    out.push_back(check_gradients<double>("mse_loss", [&] { return mse_loss(a, b); }, {a, b}, opt));
    out.push_back(check_gradients<double>("mse_loss_const", [&] { return mse_loss(a, 1.0); }, {a}, opt));
    out.push_back(check_gradients<double>("bce_with_logits", [&] { return add(bce_with_logits(a, 1.0), bce_with_logits(b, 0.0)); },
                                  {a, b}, opt));
  }
  {
    auto x = random_tensor({1, 2, 5, 6}, rng);
    out.push_back(check_gradients<double>("pad2d_zero", [&] { return proj(pad2d(x, 2, PadMode::zero)); }, {x}, opt));
    out.push_back(check_gradients<double>("pad2d_reflect", [&] { return proj(pad2d(x, 3, PadMode::reflect)); }, {x}, opt));
  }
  {
    auto x = random_tensor({2, 2, 7, 6}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    out.push_back(check_gradients<double>("conv2d", [&] { return proj(conv2d(x, w, b)); }, {x, w, b}, opt));
    out.push_back(check_gradients<double>("conv2d_stride2_zero_pad",
                                  [&] { return proj(conv2d(x, w, b, {2, 1, PadMode::zero})); }, {x, w, b}, opt));
    out.push_back(check_gradients<double>("conv2d_reflect_pad",
                                  [&] { return proj(conv2d(x, w, b, {1, 1, PadMode::reflect})); }, {x, w, b}, opt));
    auto w4 = random_tensor({2, 2, 4, 4}, rng);
    out.push_back(check_gradients<double>("conv2d_k4_s2_p1", [&] { return proj(conv2d(x, w4, Td{}, {2, 1})); }, {x, w4}, opt));
  }
  {
    auto x = random_tensor({2, 3, 3, 4}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({2}, rng);
    out.push_back(check_gradients<double>("conv_transpose2d",
                                  [&] { return proj(conv_transpose2d(x, w, b, {2, 1, 1})); }, {x, w, b}, opt));
    out.push_back(check_gradients<double>("conv_transpose2d_stride1",
                                  [&] { return proj(conv_transpose2d(x, w, b, {1, 0, 0})); }, {x, w, b}, opt));
    auto w4 = random_tensor({3, 2, 4, 4}, rng);
    out.push_back(check_gradients<double>("conv_transpose2d_k4_s2_p1",
                                  [&] { return proj(conv_transpose2d(x, w4, Td{}, {2, 1, 0})); }, {x, w4}, opt));
  }
  {
    auto x = random_tensor({2, 3, 4, 5}, rng), g = random_tensor({3}, rng, 0.5, 1.5), b = random_tensor({3}, rng);
    out.push_back(check_gradients<double>("instance_norm_affine", [&] { return proj(instance_norm(x, g, b)); }, {x, g, b}, opt));
    out.push_back(check_gradients<double>("instance_norm", [&] { return proj(instance_norm(x)); }, {x}, opt));
  }
  {
    // x feeds several consumers; mixes most of the elementwise ops.
    auto x = random_tensor({1, 2, 4, 4}, rng), y = random_tensor({1, 2, 4, 4}, rng);
    out.push_back(check_gradients<double>("composite",
                                  [&] {
                                    auto h = tanh(add(mul(x, y), scale(square(x), 0.5)));
                                    return add(mean(mul(h, x)), mse_loss(sub(h, y), x));
                                  },
                                  {x, y}, opt));
  }
  return out;
}

}  // namespace stemgan::ag
