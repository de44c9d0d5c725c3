// Adam with bias correction.  Moment states are kept in double so the update
// is identical regardless of the model's element type.
#pragma once

#include <cmath>
#include <vector>

#include "rose/tensor.hpp"

namespace rose {

template <class Real>
class Adam {
 public:
  explicit Adam(const std::vector<TensorT<Real>*>& params) {
    for (const auto* p : params) {
      m_.emplace_back(size_t(p->numel()), 0.0);
      v_.emplace_back(size_t(p->numel()), 0.0);
    }
  }

  void step(const std::vector<TensorT<Real>*>& params,
            const std::vector<const TensorT<Real>*>& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw DataError("adam: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      TensorT<Real>& w = *params[pi];
      const TensorT<Real>& g = *grads[pi];
      detail::require_same_shape(w, g, "adam");
      double* m = m_[pi].data();
      double* v = v_[pi].data();
      for (int64_t i = 0; i < w.numel(); ++i) {
        const double gi = double(g[i]);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] = Real(double(w[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace rose
