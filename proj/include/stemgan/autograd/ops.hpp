#pragma once

// Elementwise ops, reductions, channel concatenation and losses.
//
// Binary ops accept either two tensors of identical shape or one tensor and
// a single-element tensor; no other broadcasting.

#include <cmath>

#include "stemgan/autograd/tensor.hpp"

namespace stemgan::ag {

namespace detail {

template <class T>
std::vector<T>* parent_grad(Node<T>& n, std::size_t i) {
  auto& p = *n.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

enum class Broadcast { same, left_scalar, right_scalar };

template <class T>
Broadcast check_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::right_scalar;
  if (a.numel() == 1) return Broadcast::left_scalar;
  throw Error(Errc::shape_mismatch,
              std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Applies f(a_i, b_i) and registers d/da, d/db through the provided partials.
template <class T, class F, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA dfa, DB dfb) {
  const Broadcast mode = check_binary(a, b, name);
  const Shape shape = mode == Broadcast::left_scalar ? b.shape() : a.shape();
  const std::size_t n = numel_of(shape);
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t sa = mode == Broadcast::left_scalar ? 0 : 1;
  const std::size_t sb = mode == Broadcast::right_scalar ? 0 : 1;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i * sa], bd[i * sb]);
  return make_result<T>(shape, std::move(out), {a, b}, [=](Node<T>& node) {
    const auto& A = node.parents[0]->data;
    const auto& B = node.parents[1]->data;
    const auto& g = node.grad;
    if (auto* ga = parent_grad(node, 0))
      for (std::size_t i = 0; i < n; ++i) (*ga)[i * sa] += g[i] * dfa(A[i * sa], B[i * sb]);
    if (auto* gb = parent_grad(node, 1))
      for (std::size_t i = 0; i < n; ++i) (*gb)[i * sb] += g[i] * dfb(A[i * sa], B[i * sb]);
  });
}

// y = f(x) with dy/dx computed from (x, y).
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [=](Node<T>& node) {
    if (auto* gx = parent_grad(node, 0)) {
      const auto& X = node.parents[0]->data;
      for (std::size_t i = 0; i < X.size(); ++i) (*gx)[i] += node.grad[i] * dfdx(X[i], node.data[i]);
    }
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  return detail::unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>({1}, {acc}, {x}, [](Node<T>& node) {
    if (auto* gx = detail::parent_grad(node, 0))
      for (auto& g : *gx) g += node.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.numel());
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>({1}, {acc * inv}, {x}, [inv](Node<T>& node) {
    if (auto* gx = detail::parent_grad(node, 0))
      for (auto& g : *gx) g += node.grad[0] * inv;
  });
}

/// Concatenates two N x C x H x W tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
              a.dim(3) == b.dim(3),
          Errc::shape_mismatch,
          "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(n * (ca + cb) * hw);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(ad.begin() + s * ca * hw, ca * hw, out.begin() + s * (ca + cb) * hw);
    std::copy_n(bd.begin() + s * cb * hw, cb * hw, out.begin() + (s * (ca + cb) + ca) * hw);
  }
  return make_result<T>({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                        [=](Node<T>& node) {
                          const auto& g = node.grad;
                          if (auto* ga = detail::parent_grad(node, 0))
                            for (std::size_t s = 0; s < n; ++s)
                              for (std::size_t i = 0; i < ca * hw; ++i)
                                (*ga)[s * ca * hw + i] += g[s * (ca + cb) * hw + i];
                          if (auto* gb = detail::parent_grad(node, 1))
                            for (std::size_t s = 0; s < n; ++s)
                              for (std::size_t i = 0; i < cb * hw; ++i)
                                (*gb)[s * cb * hw + i] += g[(s * (ca + cb) + ca) * hw + i];
                        });
}

template <class T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), Errc::shape_mismatch,
          "l1_loss: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(abs(sub(a, b)));
}

template <class T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), Errc::shape_mismatch,
          "mse_loss: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(square(sub(a, b)));
}

/// Mean squared distance to a constant target (real = 1, fake = 0 in LSGAN).
template <class T>
Tensor<T> mse_loss(const Tensor<T>& a, T target) {
  return mean(square(sub(a, Tensor<T>::scalar(target))));
}

/// Numerically stable mean binary cross-entropy on logits against a
/// constant target label.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, T target) {
  const auto xd = logits.data();
  const std::size_t n = xd.size();
  T acc = 0;
  for (T x : xd) acc += std::max(x, T(0)) - x * target + std::log1p(std::exp(-std::abs(x)));
  return make_result<T>({1}, {acc / static_cast<T>(n)}, {logits}, [=](Node<T>& node) {
    if (auto* gx = detail::parent_grad(node, 0)) {
      const auto& X = node.parents[0]->data;
      for (std::size_t i = 0; i < n; ++i) {
        const T sig = T(1) / (T(1) + std::exp(-X[i]));
        (*gx)[i] += node.grad[0] * (sig - target) / static_cast<T>(n);
      }
    }
  });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator*(T factor, const Tensor<T>& x) { return scale(x, factor); }

}  // namespace stemgan::ag
