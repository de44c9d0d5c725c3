// Layer-wise score normalization and the final aggregated OOD value.
//
// Raw per-layer scores are the damped inverse-Fisher quadratic forms of one
// sample's score gradient.  Calibration fixes per-layer mean/stddev over
// in-distribution samples; scoring normalizes each layer and aggregates
// ReLU(s_hat + beta) under a p-norm (defaults beta = 0, p = inf).  Higher
// means more anomalous.
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "rose/fisher.hpp"
#include "rose/vae.hpp"

namespace rose {

// --------------------------------------------------------------- statistics

struct LayerStats {
  double mu = 0;
  double sigma = 0;  // population convention (divide by N)
  int64_t count = 0;
  bool degenerate = false;  // ~zero variance: the layer carries no signal
};

// Per-layer factors plus the calibration statistics scoring needs; exactly
// one of the factor vectors is populated, per the method tag.
struct FisherArtifact {
  FisherMethod method = FisherMethod::ekfac;
  std::vector<DiagFactor> diag;
  std::vector<EkfacFactor> ekfac;
  std::vector<LayerStats> stats;  // empty until calibrated

  size_t layer_count() const {
    return method == FisherMethod::diag ? diag.size() : ekfac.size();
  }
};

// Per-layer mean and population stddev of a raw score matrix [n, L].
// A layer whose deviation vanishes relative to its mean is flagged
// degenerate (normalized scores are forced to zero downstream).
inline std::vector<LayerStats> calibrate(const Tensor64& raw_scores) {
  detail::require_matrix(raw_scores, "calibrate");
  const int64_t n = raw_scores.dim(0), layers = raw_scores.dim(1);
  if (n < 2)
    throw DataError("calibrate: need at least 2 samples, got " +
                    std::to_string(n));
  raw_scores.require_finite("calibrate: raw scores");
  std::vector<LayerStats> stats(static_cast<size_t>(layers));
  for (int64_t l = 0; l < layers; ++l) {
    // Welford's online mean/variance
    double mean = 0, m2 = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double v = raw_scores[i * layers + l];
      const double delta = v - mean;
      mean += delta / double(i + 1);
      m2 += delta * (v - mean);
    }
    LayerStats& st = stats[size_t(l)];
    st.mu = mean;
    st.sigma = std::sqrt(m2 / double(n));
    st.count = n;
    st.degenerate = st.sigma <= 1e-12 * std::abs(st.mu);
    if (st.degenerate)
      std::fprintf(stderr,
                   "warning: layer %lld scores are degenerate (mu %.6g, "
                   "sigma %.6g); its normalized scores are forced to zero\n",
                   (long long)l, st.mu, st.sigma);
  }
  return stats;
}

inline double normalize_score(double raw, const LayerStats& st) {
  return st.degenerate ? 0.0 : (raw - st.mu) / st.sigma;
}

inline std::vector<double> normalize_scores(
    const std::vector<double>& raw, const std::vector<LayerStats>& stats) {
  if (raw.size() != stats.size())
    throw DataError("normalize: " + std::to_string(raw.size()) +
                    " scores for " + std::to_string(stats.size()) +
                    " calibrated layers");
  std::vector<double> shat(raw.size());
  for (size_t l = 0; l < raw.size(); ++l)
    shat[l] = normalize_score(raw[l], stats[l]);
  return shat;
}

// -------------------------------------------------------------- aggregation

enum class PNorm { one, two, inf };

inline PNorm pnorm_from_string(const std::string& s) {
  if (s == "1" || s == "one") return PNorm::one;
  if (s == "2" || s == "two") return PNorm::two;
  if (s == "inf") return PNorm::inf;
  throw DataError("unknown norm order '" + s + "' (expected 1, 2, or inf)");
}

struct RoseConfig {
  std::vector<double> beta;  // empty means all zeros
  PNorm p = PNorm::inf;
};

// ||ReLU(s_hat + beta)||_p
inline double aggregate(const std::vector<double>& shat,
                        const RoseConfig& config) {
  if (!config.beta.empty() && config.beta.size() != shat.size())
    throw DataError("aggregate: beta has " +
                    std::to_string(config.beta.size()) + " entries for " +
                    std::to_string(shat.size()) + " layers");
  double acc = 0;
  for (size_t l = 0; l < shat.size(); ++l) {
    const double v = shat[l] + (config.beta.empty() ? 0.0 : config.beta[l]);
    const double r = v > 0 ? v : 0;
    switch (config.p) {
      case PNorm::inf: acc = std::max(acc, r); break;
      case PNorm::one: acc += r; break;
      case PNorm::two: acc += r * r; break;
    }
  }
  return config.p == PNorm::two ? std::sqrt(acc) : acc;
}

inline double rose_score(const std::vector<double>& raw,
                         const std::vector<LayerStats>& stats,
                         const RoseConfig& config) {
  return aggregate(normalize_scores(raw, stats), config);
}

// ------------------------------------------------------------ raw scoring

namespace detail {

inline double artifact_quad(const FisherArtifact& art, size_t layer,
                            const Tensor& grad, int threads) {
  return art.method == FisherMethod::diag
             ? quad_form(art.diag[layer], grad)
             : quad_form(art.ekfac[layer], grad, threads);
}

inline double artifact_quad(const FisherArtifact& art, size_t layer,
                            const Tensor64& grad, int threads) {
  return art.method == FisherMethod::diag
             ? quad_form(art.diag[layer], grad)
             : quad_form(art.ekfac[layer], grad, threads);
}

template <class Real>
void slice_sample(const TensorT<Real>& images, int64_t i,
                  TensorT<Real>& out) {
  const int64_t row = out.numel();
  for (int64_t t = 0; t < row; ++t) out[t] = images[i * row + t];
}

}  // namespace detail

template <class Real>
struct RawScore {
  std::vector<double> layer;  // quadratic form per selected layer
  double nll = 0;             // the k-sample bound's NLL, same backward pass
};

// One sample: one backward pass, then one quadratic form per layer.
template <class Real>
RawScore<Real> raw_score(const Vae<Real>& vae, const FisherArtifact& art,
                         const TensorT<Real>& x1, int64_t id, int64_t k,
                         uint64_t seed, int threads = 1) {
  if (art.layer_count() != vae.selected.size())
    throw DataError("raw_score: artifact has " +
                    std::to_string(art.layer_count()) + " layers, model has " +
                    std::to_string(vae.selected.size()));
  ScoreGradient<Real> sg = score_gradient(vae, x1, id, k, seed, threads);
  RawScore<Real> out;
  out.nll = sg.nll;
  out.layer.resize(sg.layers.size());
  for (size_t l = 0; l < sg.layers.size(); ++l)
    out.layer[l] = detail::artifact_quad(art, l, sg.layers[l].grad, threads);
  return out;
}

// Raw score matrix [n, L] for a batch, parallel over samples; row order is
// input order and every row is a pure function of (weights, sample, id,
// seed), so results do not depend on the thread count.
template <class Real>
Tensor64 raw_score_matrix(const Vae<Real>& vae, const FisherArtifact& art,
                          const TensorT<Real>& images,
                          const std::vector<int64_t>& ids, int64_t k,
                          uint64_t seed, int threads = 1,
                          std::vector<double>* nll_out = nullptr) {
  const int64_t n = images.dim(0);
  if (int64_t(ids.size()) != n)
    throw DataError("raw_score_matrix: " + std::to_string(ids.size()) +
                    " ids for " + std::to_string(n) + " images");
  const int64_t layers = int64_t(vae.selected.size());
  Tensor64 raw({n, layers});
  if (nll_out) nll_out->assign(size_t(n), 0.0);
  TensorT<Real> proto({1, vae.arch.input_h, vae.arch.input_w,
                       vae.arch.input_c});
  parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
    TensorT<Real> x1 = proto;
    for (int64_t i = b0; i < b1; ++i) {
      detail::slice_sample(images, i, x1);
      RawScore<Real> rs = raw_score(vae, art, x1, ids[size_t(i)], k, seed, 1);
      for (int64_t l = 0; l < layers; ++l) raw[i * layers + l] = rs.layer[size_t(l)];
      if (nll_out) (*nll_out)[size_t(i)] = rs.nll;
    }
  });
  return raw;
}

// Fills an artifact's calibration statistics from in-distribution samples.
template <class Real>
void calibrate_artifact(FisherArtifact& art, const Vae<Real>& vae,
                        const TensorT<Real>& images,
                        const std::vector<int64_t>& ids, int64_t k,
                        uint64_t seed, int threads = 1) {
  art.stats = calibrate(raw_score_matrix(vae, art, images, ids, k, seed,
                                         threads));
}

// ----------------------------------------------------------------- pipeline

struct ScoreRow {
  int64_t id = 0;
  std::vector<double> raw;   // per-layer quadratic forms
  std::vector<double> shat;  // normalized
  double rose = 0;
  double nll = 0;
};

struct ScoreTable {
  int64_t layers = 0;
  std::vector<ScoreRow> rows;
};

// Full scoring loop: one row per sample, exactly one backward pass each
// (asserted), rows in input order regardless of scheduling.
template <class Real>
ScoreTable score_pipeline(const Vae<Real>& vae, const FisherArtifact& art,
                          const TensorT<Real>& images,
                          const std::vector<int64_t>& ids,
                          const RoseConfig& config, int64_t k, uint64_t seed,
                          int threads = 1) {
  if (art.stats.size() != art.layer_count())
    throw DataError("score pipeline: artifact is not calibrated");
  if (art.layer_count() != vae.selected.size())
    throw DataError("score pipeline: artifact has " +
                    std::to_string(art.layer_count()) +
                    " layers, model has " +
                    std::to_string(vae.selected.size()));
  const int64_t n = images.dim(0);
  if (int64_t(ids.size()) != n)
    throw DataError("score pipeline: " + std::to_string(ids.size()) +
                    " ids for " + std::to_string(n) + " images");

  ScoreTable table;
  table.layers = int64_t(vae.selected.size());
  table.rows.resize(size_t(n));
  const int64_t passes_before = backward_pass_counter().load();
  TensorT<Real> proto({1, vae.arch.input_h, vae.arch.input_w,
                       vae.arch.input_c});
  parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
    TensorT<Real> x1 = proto;
    for (int64_t i = b0; i < b1; ++i) {
      detail::slice_sample(images, i, x1);
      RawScore<Real> rs = raw_score(vae, art, x1, ids[size_t(i)], k, seed, 1);
      ScoreRow& row = table.rows[size_t(i)];
      row.id = ids[size_t(i)];
      row.raw = std::move(rs.layer);
      row.shat = normalize_scores(row.raw, art.stats);
      row.rose = aggregate(row.shat, config);
      row.nll = rs.nll;
    }
  });
  const int64_t passes = backward_pass_counter().load() - passes_before;
  if (passes != n)
    throw Error("score pipeline: " + std::to_string(passes) +
                " backward passes for " + std::to_string(n) + " samples");
  return table;
}

}  // namespace rose
