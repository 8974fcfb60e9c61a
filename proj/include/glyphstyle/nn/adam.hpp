#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "glyphstyle/core/autodiff.hpp"

namespace glyphstyle {

/// Adam over an explicit parameter list. The list is the optimizer's whole
/// world: parameters not registered here are never touched, which is what
/// keeps the discriminator/generator partitions honest.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var<T>> params, double beta1, double beta2, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  const std::vector<Var<T>>& params() const { return params_; }
  std::int64_t step_count() const { return t_; }

  /// One update from the gradients currently held on the parameters.
  /// Parameters with no accumulated gradient are skipped.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      if (!p.has_grad) continue;
      T* w = p.value.data();
      const T* g = p.grad.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (std::int64_t j = 0, n = p.value.size(); j < n; ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
        const double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        w[j] = static_cast<T>(static_cast<double>(w[j]) -
                              lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  // Moment buffers and step counter, exposed for checkpointing.
  std::vector<Tensor<T>>& moments1() { return m_; }
  std::vector<Tensor<T>>& moments2() { return v_; }
  const std::vector<Tensor<T>>& moments1() const { return m_; }
  const std::vector<Tensor<T>>& moments2() const { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  std::vector<Var<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

}  // namespace glyphstyle
