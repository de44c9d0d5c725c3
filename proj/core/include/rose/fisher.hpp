// Per-layer Fisher estimation from a replayable stream of per-sample score
// gradients, and the damped inverse quadratic form s^T (F + eps I)^-1 s.
//
// Two approximations: DIAG keeps E[s^2] elementwise; EKFAC eigendecomposes
// the input/output second moments A = E[h h^T], B = E[delta delta^T] and
// re-estimates the eigenvalues as Sigma = E[(U_B^T S U_A)^2] in that basis.
// Neither ever materializes the (q*p)^2 Fisher.  All accumulation is 64-bit;
// parallel fitting keeps one accumulator per contiguous sample range, merged
// in range order, so a fixed thread count reproduces bit-for-bit (thread
// count 1 is the canonical sequential mode).
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rose/layers.hpp"
#include "rose/linalg.hpp"

namespace rose {

enum class FisherMethod { diag, ekfac };

inline const char* method_name(FisherMethod m) {
  return m == FisherMethod::diag ? "diag" : "ekfac";
}

struct DiagFactor {
  Tensor64 diag;  // [q, p], elementwise E[s^2]
  int64_t n_samples = 0;
  double damping = 0;  // absolute epsilon, already scaled by mean(diag)
};

struct EkfacFactor {
  Tensor64 basis_in;   // U_A [p, p], eigenvectors of A (columns)
  Tensor64 basis_out;  // U_B [q, q], eigenvectors of B (columns)
  Tensor64 sigma;      // [q, p], corrected eigenvalues E[(U_B^T S U_A)^2]
  int64_t n_samples = 0;
  double damping = 0;  // absolute epsilon, already scaled by mean(sigma)
};

// Replayable per-sample gradient source; fitting pulls every index in
// [0, n_samples) once per pass, so the callable must return the same
// factors for the same index each time (the CLI re-runs backprop).
template <class Real>
using GradStream = std::function<LayerGradientSet<Real>(int64_t)>;

namespace detail {

// contiguous sample ranges, one accumulator each; merge order = range order
inline std::vector<std::pair<int64_t, int64_t>> fit_ranges(int64_t n,
                                                           int threads) {
  const int64_t nw =
      std::max<int64_t>(1, std::min<int64_t>(int64_t(threads), n));
  const int64_t chunk = (n + nw - 1) / nw;
  std::vector<std::pair<int64_t, int64_t>> ranges;
  for (int64_t b0 = 0; b0 < n; b0 += chunk)
    ranges.emplace_back(b0, std::min(n, b0 + chunk));
  return ranges;
}

// acc[p, p] += rows^T rows, sequential rank-1 updates (no temporaries)
template <class Real>
void add_gram(Tensor64& acc, const TensorT<Real>& rows) {
  const int64_t t = rows.dim(0), p = rows.dim(1);
  for (int64_t r = 0; r < t; ++r) {
    const Real* row = rows.data() + r * p;
    for (int64_t a = 0; a < p; ++a) {
      const double va = double(row[a]);
      if (va == 0.0) continue;
      double* out = acc.data() + a * p;
      for (int64_t b = 0; b < p; ++b) out[b] += va * double(row[b]);
    }
  }
}

template <class Real>
void check_layer_shapes(const LayerGradientSet<Real>& sample,
                        const std::vector<Shape>& grad_shapes,
                        int64_t index) {
  if (sample.size() != grad_shapes.size())
    throw DataError("fisher: sample " + std::to_string(index) + " has " +
                    std::to_string(sample.size()) + " layers, expected " +
                    std::to_string(grad_shapes.size()));
  for (size_t l = 0; l < sample.size(); ++l)
    if (sample[l].grad.shape() != grad_shapes[l])
      throw DataError("fisher: layer " + std::to_string(l) + " of sample " +
                      std::to_string(index) + " has gradient shape " +
                      shape_str(sample[l].grad.shape()) + ", expected " +
                      shape_str(grad_shapes[l]));
}

}  // namespace detail

// -------------------------------------------------------------------- DIAG

template <class Real>
std::vector<DiagFactor> fit_diag(const GradStream<Real>& stream,
                                 int64_t n_samples, double damping_rel = 1e-8,
                                 int threads = 1) {
  if (n_samples < 1) throw DataError("fit_diag: need at least one sample");
  const LayerGradientSet<Real> first = stream(0);
  if (first.empty()) throw DataError("fit_diag: stream yields no layers");
  std::vector<Shape> grad_shapes;
  for (const auto& lg : first) grad_shapes.push_back(lg.grad.shape());
  const size_t layer_count = first.size();

  const auto ranges = detail::fit_ranges(n_samples, threads);
  std::vector<std::vector<Tensor64>> locals(ranges.size());
  parallel_for(int64_t(ranges.size()), int(ranges.size()),
               [&](int64_t w0, int64_t w1) {
                 for (int64_t w = w0; w < w1; ++w) {
                   auto& local = locals[size_t(w)];
                   for (size_t l = 0; l < layer_count; ++l)
                     local.emplace_back(grad_shapes[l]);
                   for (int64_t i = ranges[size_t(w)].first;
                        i < ranges[size_t(w)].second; ++i) {
                     const LayerGradientSet<Real> sample = stream(i);
                     detail::check_layer_shapes(sample, grad_shapes, i);
                     for (size_t l = 0; l < layer_count; ++l) {
                       const auto& g = sample[l].grad;
                       Tensor64& acc = local[l];
                       for (int64_t j = 0; j < g.numel(); ++j)
                         acc[j] += double(g[j]) * double(g[j]);
                     }
                   }
                 }
               });

  std::vector<DiagFactor> factors(layer_count);
  for (size_t l = 0; l < layer_count; ++l) {
    DiagFactor& f = factors[l];
    f.diag = Tensor64(grad_shapes[l]);
    for (const auto& local : locals)
      for (int64_t j = 0; j < f.diag.numel(); ++j) f.diag[j] += local[l][j];
    for (int64_t j = 0; j < f.diag.numel(); ++j) f.diag[j] /= double(n_samples);
    f.diag.require_finite("fit_diag: accumulated second moment");
    f.n_samples = n_samples;
    f.damping = damping_rel * mean(f.diag);
  }
  return factors;
}

// ------------------------------------------------------------------- EKFAC

// T = U_B^T S U_A: the gradient expressed in the Kronecker eigenbasis
inline Tensor64 eigen_coords(const EkfacFactor& f, const Tensor64& s,
                             int threads = 1) {
  return matmul(matmul_tn(f.basis_out, s, threads), f.basis_in, threads);
}

template <class Real>
std::vector<EkfacFactor> fit_ekfac(const GradStream<Real>& stream,
                                   int64_t n_samples,
                                   double damping_rel = 1e-8,
                                   int threads = 1) {
  if (n_samples < 1) throw DataError("fit_ekfac: need at least one sample");
  const LayerGradientSet<Real> first = stream(0);
  if (first.empty()) throw DataError("fit_ekfac: stream yields no layers");
  const size_t layer_count = first.size();
  std::vector<Shape> grad_shapes;
  std::vector<int64_t> rows_per_sample;  // conv: spatial positions; dense: 1
  for (const auto& lg : first) {
    if (lg.layer_input.ndim() != 2 || lg.preact_grad.ndim() != 2 ||
        lg.grad.ndim() != 2)
      throw DataError("fit_ekfac: stream must carry 2-d gradient factors");
    grad_shapes.push_back(lg.grad.shape());
    rows_per_sample.push_back(lg.layer_input.dim(0));
  }

  // pass 1: input/output second moments, positions folded in as extra rows
  const auto ranges = detail::fit_ranges(n_samples, threads);
  struct Moments {
    std::vector<Tensor64> a, b;
  };
  std::vector<Moments> locals(ranges.size());
  parallel_for(int64_t(ranges.size()), int(ranges.size()),
               [&](int64_t w0, int64_t w1) {
                 for (int64_t w = w0; w < w1; ++w) {
                   Moments& local = locals[size_t(w)];
                   for (size_t l = 0; l < layer_count; ++l) {
                     const int64_t q = grad_shapes[l][0], p = grad_shapes[l][1];
                     local.a.emplace_back(Shape{p, p});
                     local.b.emplace_back(Shape{q, q});
                   }
                   for (int64_t i = ranges[size_t(w)].first;
                        i < ranges[size_t(w)].second; ++i) {
                     const LayerGradientSet<Real> sample = stream(i);
                     detail::check_layer_shapes(sample, grad_shapes, i);
                     for (size_t l = 0; l < layer_count; ++l) {
                       if (sample[l].layer_input.dim(0) != rows_per_sample[l] ||
                           sample[l].preact_grad.dim(0) != rows_per_sample[l])
                         throw DataError(
                             "fit_ekfac: inconsistent row count at layer " +
                             std::to_string(l));
                       detail::add_gram(local.a[l], sample[l].layer_input);
                       detail::add_gram(local.b[l], sample[l].preact_grad);
                     }
                   }
                 }
               });

  std::vector<EkfacFactor> factors(layer_count);
  for (size_t l = 0; l < layer_count; ++l) {
    const int64_t q = grad_shapes[l][0], p = grad_shapes[l][1];
    Tensor64 a({p, p}), b({q, q});
    for (const auto& local : locals) {
      for (int64_t j = 0; j < a.numel(); ++j) a[j] += local.a[l][j];
      for (int64_t j = 0; j < b.numel(); ++j) b[j] += local.b[l][j];
    }
    const double scale = 1.0 / (double(n_samples) * double(rows_per_sample[l]));
    for (int64_t j = 0; j < a.numel(); ++j) a[j] *= scale;
    for (int64_t j = 0; j < b.numel(); ++j) b[j] *= scale;
    a.require_finite("fit_ekfac: input second moment");
    b.require_finite("fit_ekfac: output second moment");
    factors[l].basis_in = sym_eig(a).vectors;
    factors[l].basis_out = sym_eig(b).vectors;
    factors[l].n_samples = n_samples;
  }

  // pass 2: eigenvalues re-estimated in the fixed basis
  std::vector<std::vector<Tensor64>> sig_locals(ranges.size());
  parallel_for(int64_t(ranges.size()), int(ranges.size()),
               [&](int64_t w0, int64_t w1) {
                 for (int64_t w = w0; w < w1; ++w) {
                   auto& local = sig_locals[size_t(w)];
                   for (size_t l = 0; l < layer_count; ++l)
                     local.emplace_back(grad_shapes[l]);
                   for (int64_t i = ranges[size_t(w)].first;
                        i < ranges[size_t(w)].second; ++i) {
                     const LayerGradientSet<Real> sample = stream(i);
                     detail::check_layer_shapes(sample, grad_shapes, i);
                     for (size_t l = 0; l < layer_count; ++l) {
                       const Tensor64 t = eigen_coords(
                           factors[l], cast<double>(sample[l].grad), 1);
                       for (int64_t j = 0; j < t.numel(); ++j)
                         local[l][j] += t[j] * t[j];
                     }
                   }
                 }
               });
  for (size_t l = 0; l < layer_count; ++l) {
    EkfacFactor& f = factors[l];
    f.sigma = Tensor64(grad_shapes[l]);
    for (const auto& local : sig_locals)
      for (int64_t j = 0; j < f.sigma.numel(); ++j) f.sigma[j] += local[l][j];
    for (int64_t j = 0; j < f.sigma.numel(); ++j)
      f.sigma[j] /= double(n_samples);
    f.sigma.require_finite("fit_ekfac: corrected eigenvalues");
    f.damping = damping_rel * mean(f.sigma);
  }
  return factors;
}

// ---------------------------------------------------------- quadratic form

namespace detail {

// num / (den_core + damping) with the zero-eigenvalue convention: a zero
// numerator contributes nothing even when the denominator is zero (an
// unfitted direction carrying no gradient), a nonzero one cannot be scored
inline double damped_ratio(double num, double den, const char* what) {
  if (den <= 0) {
    if (num == 0) return 0;
    throw NumericError(std::string(what) +
                       ": nonzero gradient in a zero-eigenvalue direction "
                       "with zero damping");
  }
  return num / den;
}

}  // namespace detail

template <class Real>
double quad_form(const DiagFactor& f, const TensorT<Real>& s) {
  if (s.shape() != f.diag.shape())
    throw DataError("quad_form: gradient " + shape_str(s.shape()) +
                    " does not match factor " + shape_str(f.diag.shape()));
  double acc = 0;
  for (int64_t j = 0; j < s.numel(); ++j) {
    const double v = double(s[j]);
    acc += detail::damped_ratio(v * v, f.diag[j] + f.damping, "quad_form");
  }
  if (!std::isfinite(acc))
    throw NumericError("quad_form: non-finite result");
  return acc;
}

template <class Real>
double quad_form(const EkfacFactor& f, const TensorT<Real>& s,
                 int threads = 1) {
  const int64_t q = f.basis_out.dim(0), p = f.basis_in.dim(0);
  if (s.ndim() != 2 || s.dim(0) != q || s.dim(1) != p)
    throw DataError("quad_form: gradient " + shape_str(s.shape()) +
                    " does not match factor [" + std::to_string(q) + ", " +
                    std::to_string(p) + "]");
  const Tensor64 t = eigen_coords(f, cast<double>(s), threads);
  double acc = 0;
  for (int64_t j = 0; j < t.numel(); ++j)
    acc += detail::damped_ratio(t[j] * t[j], f.sigma[j] + f.damping,
                                "quad_form");
  if (!std::isfinite(acc))
    throw NumericError("quad_form: non-finite result");
  return acc;
}

}  // namespace rose
