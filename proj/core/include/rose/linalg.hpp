// Symmetric eigensolver (cyclic Jacobi) and the Kronecker-product apply.
// Jacobi is dependency-free, deterministic, and unconditionally stable on
// symmetric input; the factor matrices this library meets stay around 1k x 1k
// where cubic cost is fine.
#pragma once

#include <cmath>
#include <string>

#include "rose/tensor.hpp"

namespace rose {

template <class Real>
struct EigResult {
  TensorT<Real> values;   // [n], descending
  TensorT<Real> vectors;  // [n, n], column j pairs with values[j]
};

// Eigendecomposition of a symmetric matrix.  Input must be symmetric to
// 1e-6 relative (it is symmetrized before iterating); convergence means the
// off-diagonal Frobenius mass fell below 1e-12 of the total.
template <class Real>
EigResult<Real> sym_eig(const TensorT<Real>& m, int max_sweeps = 100) {
  detail::require_matrix(m, "sym_eig");
  if (m.dim(0) != m.dim(1))
    throw DataError("sym_eig: matrix is not square, shape " +
                    shape_str(m.shape()));
  const int64_t n = m.dim(0);
  m.require_finite("sym_eig");

  // symmetry check against the largest entry
  double amax = max_abs(m);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double d = std::abs(double(m[i * n + j]) - double(m[j * n + i]));
      if (d > 1e-6 * std::max(amax, 1e-300))
        throw DataError("sym_eig: input is not symmetric (entry (" +
                        std::to_string(i) + ", " + std::to_string(j) +
                        ") differs from its mirror by " + std::to_string(d) +
                        ")");
    }

  // work in double regardless of Real: factor math is 64-bit throughout
  std::vector<double> a(size_t(n * n));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      a[size_t(i * n + j)] =
          0.5 * (double(m[i * n + j]) + double(m[j * n + i]));
  std::vector<double> v(size_t(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) v[size_t(i * n + i)] = 1.0;

  auto off_diag_sq = [&] {
    double s = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j) {
        const double x = a[size_t(i * n + j)];
        s += 2 * x * x;
      }
    return s;
  };
  double total_sq = 0;
  for (const double x : a) total_sq += x * x;
  const double tol_sq = 1e-24 * total_sq;  // (1e-12 * ||A||_F)^2

  bool converged = total_sq == 0.0 || off_diag_sq() <= tol_sq;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    for (int64_t p = 0; p < n - 1; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        const double apq = a[size_t(p * n + q)];
        if (apq == 0.0) continue;
        const double app = a[size_t(p * n + p)];
        const double aqq = a[size_t(q * n + q)];
        const double theta = (aqq - app) / (2.0 * apq);
        // smaller-angle root of t^2 + 2 t theta - 1 = 0
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int64_t i = 0; i < n; ++i) {  // rotate columns p and q of A
          const double aip = a[size_t(i * n + p)];
          const double aiq = a[size_t(i * n + q)];
          a[size_t(i * n + p)] = c * aip - s * aiq;
          a[size_t(i * n + q)] = s * aip + c * aiq;
        }
        for (int64_t j = 0; j < n; ++j) {  // and rows p and q
          const double apj = a[size_t(p * n + j)];
          const double aqj = a[size_t(q * n + j)];
          a[size_t(p * n + j)] = c * apj - s * aqj;
          a[size_t(q * n + j)] = s * apj + c * aqj;
        }
        for (int64_t i = 0; i < n; ++i) {  // accumulate the rotation
          const double vip = v[size_t(i * n + p)];
          const double viq = v[size_t(i * n + q)];
          v[size_t(i * n + p)] = c * vip - s * viq;
          v[size_t(i * n + q)] = s * vip + c * viq;
        }
      }
    }
    converged = off_diag_sq() <= tol_sq;
  }
  if (!converged)
    throw NumericError("sym_eig: no convergence after " +
                       std::to_string(max_sweeps) + " sweeps on a " +
                       std::to_string(n) + " x " + std::to_string(n) +
                       " matrix");

  // sort eigenvalues descending; canonical sign: largest |component| positive
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
    return a[size_t(x * n + x)] > a[size_t(y * n + y)];
  });

  EigResult<Real> out{TensorT<Real>({n}), TensorT<Real>({n, n})};
  for (int64_t j = 0; j < n; ++j) {
    const int64_t src = order[size_t(j)];
    out.values[j] = Real(a[size_t(src * n + src)]);
    int64_t lead = 0;
    double lead_abs = -1;
    for (int64_t i = 0; i < n; ++i) {
      const double x = std::abs(v[size_t(i * n + src)]);
      if (x > lead_abs) {
        lead_abs = x;
        lead = i;
      }
    }
    const double sgn = v[size_t(lead * n + src)] < 0 ? -1.0 : 1.0;
    for (int64_t i = 0; i < n; ++i)
      out.vectors[i * n + j] = Real(sgn * v[size_t(i * n + src)]);
  }
  return out;
}

// kron_apply(a, b, c) applies the Kronecker product (a x b) to vec(c) without
// forming it: under column-major vec, (a x b) vec(C) = vec(b C a^T).  Shapes:
// a [r, s], b [u, w], c [w, s] -> result [u, r].
template <class Real>
TensorT<Real> kron_apply(const TensorT<Real>& a, const TensorT<Real>& b,
                         const TensorT<Real>& c, int threads = 1) {
  detail::require_matrix(a, "kron_apply");
  detail::require_matrix(b, "kron_apply");
  detail::require_matrix(c, "kron_apply");
  if (c.dim(0) != b.dim(1) || c.dim(1) != a.dim(1))
    throw DataError("kron_apply: operand " + shape_str(c.shape()) +
                    " does not match factors " + shape_str(a.shape()) +
                    " x " + shape_str(b.shape()));
  return matmul_nt(matmul(b, c, threads), a, threads);
}

}  // namespace rose
