// model-level throughput on the full desk architecture: training steps,
// per-sample score gradients, and the end-to-end scoring pipeline.  the
// pipeline fixture fits fisher factors once, which pays the one-time
// eigendecomposition of the deepest conv factor (tens of seconds).
#include <benchmark/benchmark.h>

#include "rose/score.hpp"

using namespace rose;

namespace {

TensorT<float> random_images(int64_t n, uint64_t seed) {
  TensorT<float> x({n, 28, 28, 1});
  Rng rng(seed);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = float(rng.uniform());
  return x;
}

const Vae<float>& desk_vae() {
  static const Vae<float> vae = build_vae<float>(VaeArch{}, 17);
  return vae;
}

void bm_train_batch(benchmark::State& state) {
  Vae<float> vae = build_vae<float>(VaeArch{}, 17);
  const int64_t batch = state.range(0);
  const TensorT<float> x = random_images(batch, 23);
  std::vector<int64_t> ids(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i) ids[size_t(i)] = i;
  for (auto _ : state) {
    VaeGrads<float> grads;
    vae_evaluate<float>(vae, x, ids.data(), 1, 29, VaeObjective::elbo_analytic,
                        &grads, nullptr, nullptr, 1);
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_score_gradient(benchmark::State& state) {
  const TensorT<float> x = random_images(1, 31);
  int64_t id = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(score_gradient(desk_vae(), x, id++, 1, 37, 1));
  state.SetItemsProcessed(state.iterations());
}

struct PipelineFixture {
  FisherArtifact art;
  PipelineFixture() {
    const TensorT<float> cal = random_images(8, 41);
    std::vector<int64_t> ids = {0, 1, 2, 3, 4, 5, 6, 7};
    GradStream<float> stream = [&](int64_t i) {
      TensorT<float> x1({1, 28, 28, 1});
      detail::slice_sample(cal, i, x1);
      return score_gradient(desk_vae(), x1, i, 1, 43, 1).layers;
    };
    art.method = FisherMethod::ekfac;
    art.ekfac = fit_ekfac<float>(stream, 8, 1e-8, 1);
    calibrate_artifact(art, desk_vae(), cal, ids, 1, 43, 1);
  }
};

const FisherArtifact& fitted_artifact() {
  static const PipelineFixture f;
  return f.art;
}

void bm_score_pipeline(benchmark::State& state) {
  const FisherArtifact& art = fitted_artifact();
  const int64_t n = state.range(0);
  const TensorT<float> x = random_images(n, 47);
  std::vector<int64_t> ids(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) ids[size_t(i)] = i;
  RoseConfig cfg;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        score_pipeline(desk_vae(), art, x, ids, cfg, 1, 53, 1));
  state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(bm_train_batch)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_score_gradient)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_score_pipeline)->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
