// kernel-level throughput: the dense products, the jacobi eigensolver, and
// the fisher quadratic forms that dominate fitting and scoring.
#include <benchmark/benchmark.h>

#include "rose/fisher.hpp"
#include "rose/linalg.hpp"

using namespace rose;

namespace {

template <class Real>
TensorT<Real> random_matrix(int64_t r, int64_t c, uint64_t seed) {
  TensorT<Real> m({r, c});
  Rng rng(seed);
  for (int64_t i = 0; i < m.numel(); ++i) m[i] = Real(rng.gaussian());
  return m;
}

template <class Real>
void bm_matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto a = random_matrix<Real>(n, n, 1);
  const auto b = random_matrix<Real>(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b, 1));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

void bm_sym_eig(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto g = random_matrix<double>(n, 2 * n, 3);
  const Tensor64 m = matmul_nt(g, g, 1);  // symmetric psd
  for (auto _ : state) benchmark::DoNotOptimize(sym_eig(m));
}

// desk conv shapes: the deepest conv layer dominates projection cost
void bm_kron_apply(benchmark::State& state) {
  const int64_t q = state.range(0), p = state.range(1);
  const auto a = random_matrix<double>(p, p, 4);
  const auto b = random_matrix<double>(q, q, 5);
  const auto c = random_matrix<double>(p, q, 6);
  for (auto _ : state) benchmark::DoNotOptimize(kron_apply(a, b, c, 1));
  state.SetItemsProcessed(state.iterations() * (2 * q * p * p + 2 * q * q * p));
}

// synthetic factor: quad_form cost is independent of the basis values, so a
// random (non-orthonormal) basis measures the same arithmetic as a fitted one
EkfacFactor make_ekfac(int64_t q, int64_t p) {
  EkfacFactor f;
  f.basis_in = random_matrix<double>(p, p, 7);
  f.basis_out = random_matrix<double>(q, q, 8);
  f.sigma = random_matrix<double>(q, p, 9);
  for (int64_t i = 0; i < f.sigma.numel(); ++i)
    f.sigma[i] = 1.0 + f.sigma[i] * f.sigma[i];
  f.n_samples = 8;
  f.damping = 1e-8;
  return f;
}

void bm_quad_form_ekfac(benchmark::State& state) {
  const int64_t q = state.range(0), p = state.range(1);
  const EkfacFactor f = make_ekfac(q, p);
  const auto s = random_matrix<double>(q, p, 9);
  for (auto _ : state) benchmark::DoNotOptimize(quad_form(f, s, 1));
}

void bm_quad_form_diag(benchmark::State& state) {
  const int64_t q = state.range(0), p = state.range(1);
  DiagFactor f;
  f.diag = random_matrix<double>(q, p, 10);
  for (int64_t i = 0; i < f.diag.numel(); ++i) f.diag[i] = 1.0 + f.diag[i] * f.diag[i];
  f.n_samples = 8;
  f.damping = 1e-8;
  const auto s = random_matrix<double>(q, p, 11);
  for (auto _ : state) benchmark::DoNotOptimize(quad_form(f, s));
  state.SetItemsProcessed(state.iterations() * q * p);
}

}  // namespace

BENCHMARK_TEMPLATE(bm_matmul, float)->Arg(128)->Arg(256)->Arg(512);
BENCHMARK_TEMPLATE(bm_matmul, double)->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(bm_sym_eig)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_kron_apply)->Args({16, 16})->Args({128, 1024})->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_quad_form_ekfac)->Args({16, 16})->Args({128, 1024})->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_quad_form_diag)->Args({16, 16})->Args({128, 1024})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
