// Dense row-major tensor on a flat buffer plus the handful of kernels the
// rest of the library needs: three matmul variants, elementwise ops, a few
// reductions, and seeded sampling.  Ops are pure functions; results are
// checked for NaN/Inf so numeric failures surface immediately instead of
// propagating.  Default element type is float; tests and the 64-bit pipeline
// instantiate double.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rose/error.hpp"
#include "rose/rng.hpp"
#include "rose/threads.hpp"

namespace rose {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw DataError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

template <class Real>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape shape)
      : shape_(std::move(shape)), data_(size_t(shape_numel(shape_)), Real(0)) {}
  TensorT(Shape shape, std::vector<Real> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (int64_t(data_.size()) != shape_numel(shape_))
      throw DataError("tensor: " + std::to_string(data_.size()) +
                      " values do not fill shape " + shape_str(shape_));
  }

  static TensorT full(Shape shape, Real value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  int64_t numel() const { return int64_t(data_.size()); }
  int64_t dim(int i) const {
    if (i < 0 || i >= ndim())
      throw DataError("tensor: axis " + std::to_string(i) +
                      " out of range for shape " + shape_str(shape_));
    return shape_[size_t(i)];
  }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }

  // flat element access, unchecked: hot paths index by hand
  Real& operator[](int64_t i) { return data_[size_t(i)]; }
  const Real& operator[](int64_t i) const { return data_[size_t(i)]; }

  // checked 2-d access for cold paths and tests
  Real& at(int64_t i, int64_t j) {
    check2(i, j);
    return data_[size_t(i * shape_[1] + j)];
  }
  Real at(int64_t i, int64_t j) const {
    check2(i, j);
    return data_[size_t(i * shape_[1] + j)];
  }

  // same buffer under a different shape (numel must match)
  TensorT reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw DataError("reshape: " + shape_str(shape_) + " -> " +
                      shape_str(shape) + " changes element count");
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (const Real v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }
  void require_finite(const char* what) const {
    if (!all_finite())
      throw NumericError(std::string(what) + ": non-finite value in result");
  }

 private:
  void check2(int64_t i, int64_t j) const {
    if (ndim() != 2 || i < 0 || i >= shape_[0] || j < 0 || j >= shape_[1])
      throw DataError("tensor: bad 2-d index (" + std::to_string(i) + ", " +
                      std::to_string(j) + ") into " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<Real> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class To, class From>
TensorT<To> cast(const TensorT<From>& a) {
  TensorT<To> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = To(a[i]);
  return out;
}

namespace detail {
template <class Real>
void require_same_shape(const TensorT<Real>& a, const TensorT<Real>& b,
                        const char* what) {
  if (a.shape() != b.shape())
    throw DataError(std::string(what) + ": shape mismatch " +
                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
template <class Real>
void require_matrix(const TensorT<Real>& a, const char* what) {
  if (a.ndim() != 2)
    throw DataError(std::string(what) + ": expected a matrix, got shape " +
                    shape_str(a.shape()));
}
}  // namespace detail

// ---------------------------------------------------------------- pointwise

template <class Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape(a, b, "add");
  TensorT<Real> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  out.require_finite("add");
  return out;
}

template <class Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape(a, b, "sub");
  TensorT<Real> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  out.require_finite("sub");
  return out;
}

template <class Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape(a, b, "mul");
  TensorT<Real> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  out.require_finite("mul");
  return out;
}

template <class Real>
TensorT<Real> scale(const TensorT<Real>& a, double c) {
  TensorT<Real> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = Real(double(a[i]) * c);
  out.require_finite("scale");
  return out;
}

// --------------------------------------------------------------- reductions
// Reductions accumulate in double regardless of the element type.

template <class Real>
double sum(const TensorT<Real>& a) {
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += double(a[i]);
  if (!std::isfinite(acc)) throw NumericError("sum: non-finite result");
  return acc;
}

template <class Real>
double mean(const TensorT<Real>& a) {
  if (a.numel() == 0) throw DataError("mean: empty tensor");
  return sum(a) / double(a.numel());
}

template <class Real>
Real max_value(const TensorT<Real>& a) {
  if (a.numel() == 0) throw DataError("max: empty tensor");
  Real m = a[0];
  for (int64_t i = 1; i < a.numel(); ++i) m = std::max(m, a[i]);
  return m;
}

template <class Real>
Real min_value(const TensorT<Real>& a) {
  if (a.numel() == 0) throw DataError("min: empty tensor");
  Real m = a[0];
  for (int64_t i = 1; i < a.numel(); ++i) m = std::min(m, a[i]);
  return m;
}

template <class Real>
double max_abs(const TensorT<Real>& a) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i])));
  return m;
}

template <class Real>
double dot(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape(a, b, "dot");
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += double(a[i]) * double(b[i]);
  if (!std::isfinite(acc)) throw NumericError("dot: non-finite result");
  return acc;
}

// ------------------------------------------------------------------- matmul
// All three variants compute each output cell with a single sequential
// accumulation loop, so the result is bit-identical for any thread count.

// c[m, n] = a[m, k] * b[k, n]
template <class Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b,
                     int threads = 1) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DataError("matmul: inner dims disagree, " + shape_str(a.shape()) +
                    " * " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorT<Real> c({m, n});
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* pc = c.data();
  parallel_for(m, threads, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const Real* arow = pa + i * k;
      Real* crow = pc + i * n;
      for (int64_t p = 0; p < k; ++p) {
        const Real apv = arow[p];
        if (apv == Real(0)) continue;  // im2col rows carry padding zeros
        const Real* brow = pb + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += apv * brow[j];
      }
    }
  });
  c.require_finite("matmul");
  return c;
}

// c[m, n] = a[m, k] * b[n, k]^T  (dot products of rows)
template <class Real>
TensorT<Real> matmul_nt(const TensorT<Real>& a, const TensorT<Real>& b,
                        int threads = 1) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw DataError("matmul_nt: inner dims disagree, " + shape_str(a.shape()) +
                    " * " + shape_str(b.shape()) + "^T");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  TensorT<Real> c({m, n});
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* pc = c.data();
  parallel_for(m, threads, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const Real* arow = pa + i * k;
      Real* crow = pc + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const Real* brow = pb + j * k;
        Real acc = 0;
        for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] = acc;
      }
    }
  });
  c.require_finite("matmul_nt");
  return c;
}

// c[m, n] = a[k, m]^T * b[k, n]  (used for weight gradients and Gram sums)
template <class Real>
TensorT<Real> matmul_tn(const TensorT<Real>& a, const TensorT<Real>& b,
                        int threads = 1) {
  detail::require_matrix(a, "matmul_tn");
  detail::require_matrix(b, "matmul_tn");
  if (a.dim(0) != b.dim(0))
    throw DataError("matmul_tn: inner dims disagree, " + shape_str(a.shape()) +
                    "^T * " + shape_str(b.shape()));
  const int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  TensorT<Real> c({m, n});
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* pc = c.data();
  parallel_for(m, threads, [&](int64_t i0, int64_t i1) {
    for (int64_t p = 0; p < k; ++p) {
      const Real* acol = pa + p * m;
      const Real* brow = pb + p * n;
      for (int64_t i = i0; i < i1; ++i) {
        const Real apv = acol[i];
        if (apv == Real(0)) continue;
        Real* crow = pc + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += apv * brow[j];
      }
    }
  });
  c.require_finite("matmul_tn");
  return c;
}

template <class Real>
TensorT<Real> transpose(const TensorT<Real>& a) {
  detail::require_matrix(a, "transpose");
  const int64_t m = a.dim(0), n = a.dim(1);
  TensorT<Real> t({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

// ----------------------------------------------------------------- sampling

template <class Real>
TensorT<Real> gaussian(Shape shape, Rng& rng, double mean = 0.0,
                       double stddev = 1.0) {
  TensorT<Real> out(std::move(shape));
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = Real(mean + stddev * rng.gaussian());
  return out;
}

template <class Real>
TensorT<Real> uniform01(Shape shape, Rng& rng) {
  TensorT<Real> out(std::move(shape));
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = Real(rng.uniform());
  return out;
}

}  // namespace rose
