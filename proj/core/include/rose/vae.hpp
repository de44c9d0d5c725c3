// Convolutional VAE with a Bernoulli (logit) decoder, plus everything the
// scoring pipeline needs from it: the importance-weighted bound, training,
// and per-sample score gradients taken at the encoder's conv layers.
//
// Latent noise is drawn from a stream derived from (seed, sample id), so any
// quantity here is a pure function of (weights, sample, id, seed, k) — batch
// composition, evaluation order and thread count do not change results.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rose/layers.hpp"
#include "rose/optim.hpp"

namespace rose {

// ------------------------------------------------------------- architecture

struct VaeArch {
  int64_t input_h = 28, input_w = 28, input_c = 1;
  int64_t base_channels = 16;  // doubled at every encoder conv
  int64_t conv_layers = 4;     // 4x4 stride-2 pad-1 chain
  int64_t latent_dim = 50;

  bool operator==(const VaeArch&) const = default;
};

template <class Real>
struct Vae {
  VaeArch arch;
  Chain<Real> encoder;               // convs + relu, flattened at the end
  Layer<Real> mean_head;             // dense feature -> latent
  Layer<Real> logvar_head;           // dense feature -> latent
  Chain<Real> decoder;               // dense + upsample/conv mirror, logits out
  std::vector<int> selected;         // encoder layer indices scored by ROSE
  int64_t feature_dim = 0;

  int64_t pixels() const { return arch.input_h * arch.input_w * arch.input_c; }

  // stable order: encoder convs, mean head, logvar head, decoder layers
  std::vector<const TensorT<Real>*> param_tensors() const {
    std::vector<const TensorT<Real>*> out;
    for (const auto& l : encoder.layers())
      if (l.spec.has_params()) out.push_back(&l.weight);
    out.push_back(&mean_head.weight);
    out.push_back(&logvar_head.weight);
    for (const auto& l : decoder.layers())
      if (l.spec.has_params()) out.push_back(&l.weight);
    return out;
  }
  std::vector<TensorT<Real>*> param_tensors() {
    std::vector<TensorT<Real>*> out;
    for (auto& l : encoder.layers())
      if (l.spec.has_params()) out.push_back(&l.weight);
    out.push_back(&mean_head.weight);
    out.push_back(&logvar_head.weight);
    for (auto& l : decoder.layers())
      if (l.spec.has_params()) out.push_back(&l.weight);
    return out;
  }
  int64_t param_count() const {
    return encoder.param_count() + mean_head.spec.param_count() +
           logvar_head.spec.param_count() + decoder.param_count();
  }
};

// Builds the fixed recipe: encoder of `conv_layers` 4x4/s2/p1 convs with
// doubling channels and ReLU, dense mean/logvar heads, and a mirrored decoder
// (dense + ReLU, then nearest-neighbour upsample to each encoder spatial size
// in reverse with 3x3/s1/p1 convs halving channels, logits at the end).
template <class Real>
Vae<Real> build_vae(const VaeArch& arch, uint64_t seed) {
  if (arch.conv_layers < 1)
    throw DataError("vae: need at least one conv layer");
  if (arch.latent_dim < 1) throw DataError("vae: latent_dim must be >= 1");
  if (arch.base_channels < 1)
    throw DataError("vae: base_channels must be >= 1");

  Vae<Real> vae;
  vae.arch = arch;
  const double relu_gain = std::sqrt(2.0);

  // encoder; collect the spatial sizes for the decoder mirror
  std::vector<int64_t> hs = {arch.input_h}, ws = {arch.input_w};
  std::vector<int64_t> cs = {arch.input_c};
  for (int64_t i = 0; i < arch.conv_layers; ++i) {
    const int64_t h = hs.back(), w = ws.back();
    if (h < 2 || w < 2)
      throw DataError("vae: input " + std::to_string(arch.input_h) + "x" +
                      std::to_string(arch.input_w) + " is too small for " +
                      std::to_string(arch.conv_layers) + " conv layers");
    const int64_t c_out = arch.base_channels << i;
    vae.encoder.push(
        make_conv2d({h, w, cs.back()}, c_out, 4, 2, 1, relu_gain));
    const Shape out = vae.encoder.out_shape();
    vae.encoder.push(make_relu(out));
    hs.push_back(out[0]);
    ws.push_back(out[1]);
    cs.push_back(c_out);
  }
  const int64_t fh = hs.back(), fw = ws.back(), fc = cs.back();
  vae.feature_dim = fh * fw * fc;
  vae.encoder.push(make_reshape({fh, fw, fc}, {vae.feature_dim}));
  vae.selected = vae.encoder.param_layer_indices();

  vae.mean_head.spec = make_dense(vae.feature_dim, arch.latent_dim);
  vae.mean_head.weight =
      TensorT<Real>({arch.latent_dim, vae.feature_dim});
  vae.logvar_head.spec = make_dense(vae.feature_dim, arch.latent_dim);
  vae.logvar_head.weight =
      TensorT<Real>({arch.latent_dim, vae.feature_dim});

  // decoder mirror
  vae.decoder.push(make_dense(arch.latent_dim, vae.feature_dim, relu_gain));
  vae.decoder.push(make_relu({vae.feature_dim}));
  vae.decoder.push(make_reshape({vae.feature_dim}, {fh, fw, fc}));
  for (int64_t i = arch.conv_layers - 1; i >= 0; --i) {
    const Shape cur = vae.decoder.out_shape();
    vae.decoder.push(
        make_upsample2d(cur, hs[size_t(i)], ws[size_t(i)]));
    const bool last = i == 0;
    vae.decoder.push(make_conv2d(vae.decoder.out_shape(), cs[size_t(i)], 3, 1,
                                 1, last ? 1.0 : relu_gain));
    if (!last) vae.decoder.push(make_relu(vae.decoder.out_shape()));
  }

  Rng rng(seed);
  vae.encoder.init_params(rng);
  const double head_std = 1.0 / std::sqrt(double(vae.feature_dim));
  for (int64_t i = 0; i < vae.mean_head.weight.numel(); ++i)
    vae.mean_head.weight[i] = Real(head_std * rng.gaussian());
  for (int64_t i = 0; i < vae.logvar_head.weight.numel(); ++i)
    vae.logvar_head.weight[i] = Real(head_std * rng.gaussian());
  vae.decoder.init_params(rng);
  return vae;
}

// ---------------------------------------------------------- instrumentation

// Counts model backward passes; the scoring pipeline asserts exactly one per
// scored sample.
inline std::atomic<int64_t>& backward_pass_counter() {
  static std::atomic<int64_t> count{0};
  return count;
}

// --------------------------------------------------------------- evaluation

enum class VaeObjective {
  elbo_analytic,  // -(log p(x|z) - closed-form KL), single latent sample
  iwae            // -(k-sample importance-weighted bound)
};

template <class Real>
struct VaeGrads {
  std::vector<TensorT<Real>> encoder;  // slot per encoder layer
  TensorT<Real> mean_head, logvar_head;
  std::vector<TensorT<Real>> decoder;  // slot per decoder layer

  // aligned with Vae::param_tensors()
  std::vector<const TensorT<Real>*> ordered(const Vae<Real>& vae) const {
    std::vector<const TensorT<Real>*> out;
    for (int idx : vae.encoder.param_layer_indices())
      out.push_back(&encoder[size_t(idx)]);
    out.push_back(&mean_head);
    out.push_back(&logvar_head);
    for (int idx : vae.decoder.param_layer_indices())
      out.push_back(&decoder[size_t(idx)]);
    return out;
  }
};

template <class Real>
struct VaeEval {
  std::vector<double> nll;    // -(k-sample bound) per sample
  std::vector<double> loss;   // objective per sample (what training minimizes)
};

// KL(N(mu, diag exp(lv)) || N(0, I)) per sample, closed form
template <class Real>
std::vector<double> kl_diag_normal(const TensorT<Real>& mu,
                                   const TensorT<Real>& lv) {
  detail::require_same_shape(mu, lv, "kl_diag_normal");
  const int64_t n = mu.dim(0), d = mu.dim(1);
  std::vector<double> kl(size_t(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (int64_t j = 0; j < d; ++j) {
      const double m = double(mu[i * d + j]), l = double(lv[i * d + j]);
      acc += 1.0 + l - m * m - std::exp(l);
    }
    kl[size_t(i)] = -0.5 * acc;
  }
  return kl;
}

namespace detail {

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace detail

// Core evaluation: forward (and optionally backward) of the chosen objective
// over a batch.  ids give each row its latent-noise stream; noise_override
// ([n, k, d], tests only) bypasses the streams.  grads receives whole-batch
// parameter gradients of mean(loss); capture (batch 1) receives per-sample
// factors at the encoder's parameterised layers.
template <class Real>
VaeEval<Real> vae_evaluate(const Vae<Real>& vae, const TensorT<Real>& x,
                           const int64_t* ids, int64_t k, uint64_t seed,
                           VaeObjective objective, VaeGrads<Real>* grads,
                           LayerGradientSet<Real>* capture,
                           const TensorT<Real>* noise_override, int threads) {
  if (x.ndim() != 4 || x.dim(1) != vae.arch.input_h ||
      x.dim(2) != vae.arch.input_w || x.dim(3) != vae.arch.input_c)
    throw DataError("vae: batch shape " + shape_str(x.shape()) +
                    " does not match input " +
                    std::to_string(vae.arch.input_h) + "x" +
                    std::to_string(vae.arch.input_w) + "x" +
                    std::to_string(vae.arch.input_c));
  const int64_t n = x.dim(0);
  const int64_t d = vae.arch.latent_dim;
  const int64_t px = vae.pixels();
  if (n < 1) throw DataError("vae: empty batch");
  if (k < 1) throw DataError("vae: need k >= 1 latent samples");
  if (objective == VaeObjective::elbo_analytic && k != 1)
    throw DataError("vae: the analytic objective uses exactly one sample");
  for (int64_t i = 0; i < x.numel(); ++i)
    if (!(x[i] >= Real(0) && x[i] <= Real(1)))
      throw DataError("vae: pixel value " + std::to_string(double(x[i])) +
                      " outside [0, 1] at flat index " + std::to_string(i));
  if (capture && n != 1)
    throw DataError("vae: per-sample capture needs batch 1");

  // encoder and heads
  Workspace<Real> enc_ws;
  const TensorT<Real>& feat = vae.encoder.forward(x, enc_ws, threads);
  TensorT<Real> mu = dense_forward(vae.mean_head, feat, threads);
  TensorT<Real> lv = dense_forward(vae.logvar_head, feat, threads);

  TensorT<Real> std_z({n, d});
  for (int64_t i = 0; i < n * d; ++i)
    std_z[i] = Real(std::exp(0.5 * double(lv[i])));
  std_z.require_finite("vae: exp(logvar/2)");

  // latent noise, one stream per sample
  TensorT<Real> noise({n, k, d});
  if (noise_override) {
    detail::require_same_shape(noise, *noise_override, "vae noise override");
    noise = *noise_override;
  } else {
    parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
      for (int64_t i = b0; i < b1; ++i) {
        Rng rng = Rng::for_stream(seed, uint64_t(ids[i]));
        for (int64_t j = 0; j < k * d; ++j)
          noise[i * k * d + j] = Real(rng.gaussian());
      }
    });
  }

  // decoder passes, one per latent sample; eval-only runs reuse a single
  // workspace, backward keeps one per sample (activations are needed again)
  const bool need_back = grads != nullptr || capture != nullptr;
  std::vector<TensorT<Real>> zs(size_t(need_back ? k : 0));
  std::vector<Workspace<Real>> dec_ws(size_t(need_back ? k : 1));
  std::vector<double> logw(size_t(n * k));
  std::vector<double> logp0;  // log p(x|z_0), kept for the analytic loss
  if (objective == VaeObjective::elbo_analytic) logp0.resize(size_t(n));
  const Real* xp = x.data();
  for (int64_t j = 0; j < k; ++j) {
    TensorT<Real> z({n, d});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t dd = 0; dd < d; ++dd)
        z[i * d + dd] =
            mu[i * d + dd] + std_z[i * d + dd] * noise[(i * k + j) * d + dd];
    z.require_finite("vae: latent sample");
    Workspace<Real>& ws = dec_ws[size_t(need_back ? j : 0)];
    const TensorT<Real>& lg = vae.decoder.forward(z, ws, threads);
    const Real* lp = lg.data();
    const Real* zp = z.data();
    const Real* np = noise.data();
    const Real* lvp = lv.data();
    parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
      for (int64_t i = b0; i < b1; ++i) {
        double logp = 0;
        for (int64_t t = 0; t < px; ++t) {
          const double l = double(lp[i * px + t]);
          logp += double(xp[i * px + t]) * l - detail::softplus(l);
        }
        double logprior = 0, logq = 0;
        for (int64_t dd = 0; dd < d; ++dd) {
          const double zv = double(zp[i * d + dd]);
          const double eta = double(np[(i * k + j) * d + dd]);
          logprior -= 0.5 * (detail::kLog2Pi + zv * zv);
          logq -= 0.5 * (detail::kLog2Pi + double(lvp[i * d + dd]) + eta * eta);
        }
        if (!logp0.empty() && j == 0) logp0[size_t(i)] = logp;
        logw[size_t(i * k + j)] = logp + logprior - logq;
      }
    });
    if (need_back) zs[size_t(j)] = std::move(z);
  }

  VaeEval<Real> out;
  out.nll.resize(size_t(n));
  out.loss.resize(size_t(n));
  std::vector<double> kl;
  if (objective == VaeObjective::elbo_analytic) kl = kl_diag_normal(mu, lv);
  for (int64_t i = 0; i < n; ++i) {
    double m = logw[size_t(i * k)];
    for (int64_t j = 1; j < k; ++j)
      m = std::max(m, logw[size_t(i * k + j)]);
    double acc = 0;
    for (int64_t j = 0; j < k; ++j)
      acc += std::exp(logw[size_t(i * k + j)] - m);
    const double bound = m + std::log(acc) - std::log(double(k));
    if (!std::isfinite(bound))
      throw NumericError("vae: non-finite bound for sample " +
                         std::to_string(ids ? ids[i] : i));
    out.nll[size_t(i)] = -bound;
    out.loss[size_t(i)] = objective == VaeObjective::elbo_analytic
                              ? -(logp0[size_t(i)] - kl[size_t(i)])
                              : out.nll[size_t(i)];
  }

  if (!grads && !capture) return out;

  // ---- backward -----------------------------------------------------------
  backward_pass_counter() += n;
  const double gscale = grads ? 1.0 / double(n) : 1.0;  // mean-loss training

  // softmax weights over the k bounds (iwae); analytic uses weight 1 on j=0
  std::vector<double> wtil(size_t(n * k), 1.0);
  if (objective == VaeObjective::iwae && k > 1) {
    for (int64_t i = 0; i < n; ++i) {
      double m = logw[size_t(i * k)];
      for (int64_t j = 1; j < k; ++j)
        m = std::max(m, logw[size_t(i * k + j)]);
      double acc = 0;
      for (int64_t j = 0; j < k; ++j) {
        wtil[size_t(i * k + j)] = std::exp(logw[size_t(i * k + j)] - m);
        acc += wtil[size_t(i * k + j)];
      }
      for (int64_t j = 0; j < k; ++j) wtil[size_t(i * k + j)] /= acc;
    }
  }

  if (grads) {
    grads->encoder.clear();
    grads->decoder.clear();
  }
  TensorT<Real> dmu({n, d}), dlv({n, d});
  for (int64_t j = 0; j < k; ++j) {
    // d(loss)/d(logits_j) = gscale * wtil_j * (sigmoid(l) - x)
    const TensorT<Real>& lg = dec_ws[size_t(j)].acts.back();
    TensorT<Real> dlogits(lg.shape());
    const Real* lp = lg.data();
    parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
      for (int64_t i = b0; i < b1; ++i) {
        const double wj = gscale * wtil[size_t(i * k + j)];
        for (int64_t t = 0; t < px; ++t)
          dlogits[i * px + t] =
              Real(wj * (detail::sigmoid(double(lp[i * px + t])) -
                         double(xp[i * px + t])));
      }
    });
    std::vector<TensorT<Real>> dec_grads_j;
    TensorT<Real> dz =
        vae.decoder.backward(dec_ws[size_t(j)], dlogits,
                             grads ? &dec_grads_j : nullptr, nullptr, threads);
    if (grads) {
      if (grads->decoder.empty()) {
        grads->decoder = std::move(dec_grads_j);
      } else {
        for (size_t li = 0; li < dec_grads_j.size(); ++li)
          if (dec_grads_j[li].numel())
            grads->decoder[li] = add(grads->decoder[li], dec_grads_j[li]);
      }
    }
    // prior pulls z toward 0 under the iwae objective
    if (objective == VaeObjective::iwae) {
      const Real* zp = zs[size_t(j)].data();
      for (int64_t i = 0; i < n; ++i) {
        const double wj = gscale * wtil[size_t(i * k + j)];
        for (int64_t dd = 0; dd < d; ++dd)
          dz[i * d + dd] += Real(wj * double(zp[i * d + dd]));
      }
    }
    // reparameterization: z = mu + std * eta
    for (int64_t i = 0; i < n; ++i)
      for (int64_t dd = 0; dd < d; ++dd) {
        const Real dzv = dz[i * d + dd];
        dmu[i * d + dd] += dzv;
        dlv[i * d + dd] += Real(0.5 * double(std_z[i * d + dd]) *
                                double(noise[(i * k + j) * d + dd]) *
                                double(dzv));
      }
  }
  if (objective == VaeObjective::iwae) {
    // explicit -log q term: d(loss)/d(lv) = -1/2 per dimension
    for (int64_t i = 0; i < n * d; ++i) dlv[i] -= Real(gscale * 0.5);
  } else {
    // analytic KL: d(KL)/d(mu) = mu, d(KL)/d(lv) = (exp(lv) - 1) / 2
    for (int64_t i = 0; i < n * d; ++i) {
      dmu[i] += Real(gscale * double(mu[i]));
      dlv[i] += Real(gscale * 0.5 * (std::exp(double(lv[i])) - 1.0));
    }
  }

  // heads, then the encoder
  TensorT<Real> dfeat =
      dense_backward(vae.mean_head, feat, dmu,
                     grads ? &grads->mean_head : nullptr, threads);
  TensorT<Real> dfeat2 =
      dense_backward(vae.logvar_head, feat, dlv,
                     grads ? &grads->logvar_head : nullptr, threads);
  dfeat = add(dfeat, dfeat2);
  vae.encoder.backward(enc_ws, dfeat, grads ? &grads->encoder : nullptr,
                       capture, threads);
  return out;
}

// ------------------------------------------------------------- public ops

// Realized single-sample bound log w (Monte-Carlo KL) per sample; equals
// -iwae_nll at k = 1 with the same noise stream by construction.
template <class Real>
std::vector<double> elbo(const Vae<Real>& vae, const TensorT<Real>& x,
                         const int64_t* ids, uint64_t seed, int threads = 1) {
  auto out = vae_evaluate<Real>(vae, x, ids, 1, seed, VaeObjective::iwae,
                                nullptr, nullptr, nullptr, threads);
  std::vector<double> bounds(out.nll.size());
  for (size_t i = 0; i < out.nll.size(); ++i) bounds[i] = -out.nll[i];
  return bounds;
}

template <class Real>
std::vector<double> iwae_nll(const Vae<Real>& vae, const TensorT<Real>& x,
                             const int64_t* ids, int64_t k, uint64_t seed,
                             int threads = 1) {
  return vae_evaluate<Real>(vae, x, ids, k, seed, VaeObjective::iwae, nullptr,
                            nullptr, nullptr, threads)
      .nll;
}

template <class Real>
struct ScoreGradient {
  LayerGradientSet<Real> layers;  // per selected encoder layer
  double nll = 0;
};

// One backward pass for one sample: the gradient of the k-sample bound taken
// at the encoder's conv layers, with the bound's NLL as a byproduct.
template <class Real>
ScoreGradient<Real> score_gradient(const Vae<Real>& vae,
                                   const TensorT<Real>& x1, int64_t id,
                                   int64_t k, uint64_t seed, int threads = 1) {
  ScoreGradient<Real> sg;
  auto out = vae_evaluate<Real>(vae, x1, &id, k, seed, VaeObjective::iwae,
                                nullptr, &sg.layers, nullptr, threads);
  sg.nll = out.nll[0];
  return sg;
}

// ----------------------------------------------------------------- training

struct TrainConfig {
  int64_t epochs = 20;
  int64_t batch_size = 64;
  double learning_rate = 1e-3;
  int64_t lr_halving_period = 30;  // halve the rate every this many epochs
  uint64_t seed = 0;
  int64_t iwae_k = 1;  // 1 trains the analytic-KL ELBO, >1 the k-sample bound
  int threads = 1;
  bool verbose = false;
};

struct TrainResult {
  // [0] is the pre-training evaluation, then one mean loss per epoch
  std::vector<double> epoch_loss;
};

inline double lr_at_epoch(const TrainConfig& cfg, int64_t epoch /*1-based*/) {
  return cfg.learning_rate *
         std::exp2(-double((epoch - 1) / cfg.lr_halving_period));
}

template <class Real>
TrainResult train(Vae<Real>& vae, const TensorT<Real>& images,
                  const TrainConfig& cfg) {
  if (images.ndim() != 4 || images.dim(1) != vae.arch.input_h ||
      images.dim(2) != vae.arch.input_w || images.dim(3) != vae.arch.input_c)
    throw DataError("train: dataset shape " + shape_str(images.shape()) +
                    " does not match the model input");
  const int64_t n = images.dim(0);
  if (n < 1) throw DataError("train: empty dataset");
  if (cfg.epochs < 0) throw DataError("train: negative epoch count");
  if (cfg.batch_size < 1) throw DataError("train: batch_size must be >= 1");
  if (cfg.learning_rate <= 0)
    throw DataError("train: learning_rate must be positive");
  if (cfg.lr_halving_period < 1)
    throw DataError("train: lr_halving_period must be >= 1");
  if (cfg.iwae_k < 1) throw DataError("train: iwae_k must be >= 1");
  const int64_t row = images.numel() / n;
  const VaeObjective objective = cfg.iwae_k > 1 ? VaeObjective::iwae
                                                : VaeObjective::elbo_analytic;
  const int64_t k = cfg.iwae_k > 1 ? cfg.iwae_k : 1;

  auto gather = [&](const int64_t* idx, int64_t count) {
    TensorT<Real> batch({count, vae.arch.input_h, vae.arch.input_w,
                         vae.arch.input_c});
    for (int64_t i = 0; i < count; ++i)
      for (int64_t t = 0; t < row; ++t)
        batch[i * row + t] = images[idx[i] * row + t];
    return batch;
  };

  // evaluation-only mean loss (epoch 0 baseline)
  auto eval_mean = [&]() {
    const int64_t count = std::min<int64_t>(n, 2048);
    double acc = 0;
    for (int64_t at = 0; at < count; at += 256) {
      const int64_t b = std::min<int64_t>(256, count - at);
      std::vector<int64_t> idx(static_cast<size_t>(b));
      for (int64_t i = 0; i < b; ++i) idx[size_t(i)] = at + i;
      TensorT<Real> batch = gather(idx.data(), b);
      auto out = vae_evaluate<Real>(vae, batch, idx.data(), k,
                                    derive_seed(cfg.seed, 0xe0), objective,
                                    nullptr, nullptr, nullptr, cfg.threads);
      for (double v : out.loss) acc += v;
    }
    return acc / double(count);
  };

  TrainResult result;
  result.epoch_loss.push_back(eval_mean());

  std::vector<TensorT<Real>*> params = vae.param_tensors();
  Adam<Real> adam(params);
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[size_t(i)] = i;

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = Rng::for_stream(cfg.seed, 0x5u + uint64_t(epoch));
    shuffle_rng.shuffle(perm.data(), n);
    const uint64_t epoch_seed = derive_seed(cfg.seed, uint64_t(epoch));
    const double lr = lr_at_epoch(cfg, epoch);

    double acc = 0;
    for (int64_t at = 0; at < n; at += cfg.batch_size) {
      const int64_t b = std::min<int64_t>(cfg.batch_size, n - at);
      TensorT<Real> batch = gather(perm.data() + at, b);
      VaeGrads<Real> grads;
      VaeEval<Real> out;
      try {
        out = vae_evaluate<Real>(vae, batch, perm.data() + at, k, epoch_seed,
                                 objective, &grads, nullptr, nullptr,
                                 cfg.threads);
      } catch (const NumericError& e) {
        throw NumericError("training diverged in epoch " +
                           std::to_string(epoch) + ", batch at sample " +
                           std::to_string(at) + ": " + e.what());
      }
      double batch_mean = 0;
      for (double v : out.loss) batch_mean += v;
      batch_mean /= double(b);
      if (!std::isfinite(batch_mean))
        throw NumericError("training diverged in epoch " +
                           std::to_string(epoch) + ": non-finite loss");
      acc += batch_mean * double(b);
      adam.step(params, grads.ordered(vae), lr);
    }
    result.epoch_loss.push_back(acc / double(n));
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %lld/%lld  lr %.3g  mean loss %.4f\n",
                   (long long)epoch, (long long)cfg.epochs, lr,
                   result.epoch_loss.back());
  }
  return result;
}

}  // namespace rose
