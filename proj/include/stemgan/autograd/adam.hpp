#pragma once

#include <cmath>
#include <vector>

#include "stemgan/autograd/tensor.hpp"

namespace stemgan::ag {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameters.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<T>> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
    for (auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T lr = static_cast<T>(opt_.lr), eps = static_cast<T>(opt_.eps);
    const T inv_c1 = static_cast<T>(1.0 / c1), inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto data = params_[i].data();
      auto grad = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        const T g = grad[j];
        m[j] = b1 * m[j] + (T(1) - b1) * g;
        v[j] = b2 * v[j] + (T(1) - b2) * g * g;
        data[j] -= lr * (m[j] * inv_c1) / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
      }
    }
  }

  /// Clears moments and the step counter (optimizer reset on fine-tuning).
  void reset() {
    steps_ = 0;
    for (auto& m : m_) std::fill(m.begin(), m.end(), T(0));
    for (auto& v : v_) std::fill(v.begin(), v.end(), T(0));
  }

  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t s) { steps_ = s; }
  const AdamOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions opt_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace stemgan::ag
