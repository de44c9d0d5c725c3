// Static layer graph with reverse-mode gradients.  A Chain is a straight
// sequence of layers over batched tensors ([n, ...] with per-sample shapes in
// the specs).  Convolution is im2col + matmul; backward can either produce
// whole-batch weight gradients (training) or capture per-sample gradient
// factors for one sample (scoring): the im2col rows feeding a layer and the
// gradient at its linear output, which the Fisher code consumes.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rose/tensor.hpp"

namespace rose {

enum class LayerKind { dense, conv2d, relu, reshape, upsample2d };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  Shape in_shape;   // per-sample: dense [p]; spatial [h, w, c]
  Shape out_shape;  // dense [q]; conv/upsample [oh, ow, c']
  int64_t kernel = 0, stride = 1, pad = 0;  // conv2d only
  double init_gain = 1.0;  // weight init: stddev = gain / sqrt(fan_in)

  bool has_params() const {
    return kind == LayerKind::dense || kind == LayerKind::conv2d;
  }
  // weight is [out_features, in_features]
  int64_t out_features() const {
    return kind == LayerKind::conv2d ? out_shape[2] : out_shape[0];
  }
  int64_t in_features() const {
    return kind == LayerKind::conv2d ? kernel * kernel * in_shape[2]
                                     : in_shape[0];
  }
  int64_t param_count() const {
    return has_params() ? out_features() * in_features() : 0;
  }
  std::string describe() const;
};

// dense: [p] -> [q]
inline LayerSpec make_dense(int64_t in, int64_t out, double gain = 1.0) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_shape = {in};
  s.out_shape = {out};
  s.init_gain = gain;
  return s;
}

// conv2d: [h, w, c] -> [oh, ow, out_c], floor output geometry
inline LayerSpec make_conv2d(Shape in, int64_t out_c, int64_t kernel,
                             int64_t stride, int64_t pad, double gain = 1.0) {
  if (in.size() != 3)
    throw DataError("conv2d: input shape must be [h, w, c], got " +
                    shape_str(in));
  const int64_t h = in[0], w = in[1];
  if (kernel < 1 || stride < 1 || pad < 0)
    throw DataError("conv2d: bad geometry k=" + std::to_string(kernel) +
                    " s=" + std::to_string(stride) +
                    " p=" + std::to_string(pad));
  if (h + 2 * pad < kernel || w + 2 * pad < kernel)
    throw DataError("conv2d: kernel " + std::to_string(kernel) +
                    " does not fit input " + shape_str(in) + " with pad " +
                    std::to_string(pad));
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_shape = std::move(in);
  s.out_shape = {(h + 2 * pad - kernel) / stride + 1,
                 (w + 2 * pad - kernel) / stride + 1, out_c};
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.init_gain = gain;
  return s;
}

inline LayerSpec make_relu(Shape shape) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  s.in_shape = shape;
  s.out_shape = std::move(shape);
  return s;
}

inline LayerSpec make_reshape(Shape in, Shape out) {
  if (shape_numel(in) != shape_numel(out))
    throw DataError("reshape layer: " + shape_str(in) + " -> " +
                    shape_str(out) + " changes element count");
  LayerSpec s;
  s.kind = LayerKind::reshape;
  s.in_shape = std::move(in);
  s.out_shape = std::move(out);
  return s;
}

// nearest-neighbour resize to an arbitrary (larger) spatial grid
inline LayerSpec make_upsample2d(Shape in, int64_t out_h, int64_t out_w) {
  if (in.size() != 3)
    throw DataError("upsample2d: input shape must be [h, w, c], got " +
                    shape_str(in));
  if (out_h < in[0] || out_w < in[1])
    throw DataError("upsample2d: target " + std::to_string(out_h) + "x" +
                    std::to_string(out_w) + " shrinks input " + shape_str(in));
  LayerSpec s;
  s.kind = LayerKind::upsample2d;
  s.in_shape = in;
  s.out_shape = {out_h, out_w, in[2]};
  return s;
}

inline std::string LayerSpec::describe() const {
  switch (kind) {
    case LayerKind::dense:
      return "dense " + std::to_string(in_shape[0]) + "->" +
             std::to_string(out_shape[0]);
    case LayerKind::conv2d:
      return "conv2d " + std::to_string(kernel) + "x" +
             std::to_string(kernel) + " s" + std::to_string(stride) + " p" +
             std::to_string(pad) + " " + std::to_string(in_shape[2]) + "->" +
             std::to_string(out_shape[2]);
    case LayerKind::relu:
      return "relu " + shape_str(in_shape);
    case LayerKind::reshape:
      return "reshape " + shape_str(in_shape) + "->" + shape_str(out_shape);
    case LayerKind::upsample2d:
      return "upsample2d " + shape_str(in_shape) + "->" + shape_str(out_shape);
  }
  return "?";
}

template <class Real>
struct Layer {
  LayerSpec spec;
  TensorT<Real> weight;  // [out_features, in_features] or empty
};

// Per-sample gradient factors at one parameterised layer.  layer_input holds
// the im2col rows (dense: a single row), preact_grad the loss gradient at the
// layer's linear output; grad = preact_grad^T * layer_input.
template <class Real>
struct LayerGrad {
  TensorT<Real> grad;         // [q, p]
  TensorT<Real> layer_input;  // [t, p]
  TensorT<Real> preact_grad;  // [t, q]
};

template <class Real>
using LayerGradientSet = std::vector<LayerGrad<Real>>;

// Activation cache reused across forward/backward calls.
template <class Real>
struct Workspace {
  std::vector<TensorT<Real>> acts;     // acts[i] = input to layer i
  std::vector<TensorT<Real>> patches;  // conv layers: im2col matrix [n*t, p]
};

// ------------------------------------------------------------ conv plumbing

template <class Real>
TensorT<Real> im2col(const TensorT<Real>& x, const LayerSpec& spec,
                     int threads) {
  const int64_t n = x.dim(0);
  const int64_t h = spec.in_shape[0], w = spec.in_shape[1],
                c = spec.in_shape[2];
  const int64_t oh = spec.out_shape[0], ow = spec.out_shape[1];
  const int64_t k = spec.kernel, s = spec.stride, pad = spec.pad;
  const int64_t t = oh * ow, p = k * k * c;
  TensorT<Real> patches({n * t, p});  // zero-filled: padding stays zero
  const Real* px = x.data();
  Real* pp = patches.data();
  parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b) {
      const Real* img = px + b * h * w * c;
      Real* rows = pp + b * t * p;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          Real* row = rows + (oy * ow + ox) * p;
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t y = oy * s - pad + ky;
            if (y < 0 || y >= h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t xx = ox * s - pad + kx;
              if (xx < 0 || xx >= w) continue;
              const Real* src = img + (y * w + xx) * c;
              Real* dst = row + (ky * k + kx) * c;
              for (int64_t cc = 0; cc < c; ++cc) dst[cc] = src[cc];
            }
          }
        }
    }
  });
  return patches;
}

template <class Real>
TensorT<Real> col2im(const TensorT<Real>& dpatches, const LayerSpec& spec,
                     int64_t n, int threads) {
  const int64_t h = spec.in_shape[0], w = spec.in_shape[1],
                c = spec.in_shape[2];
  const int64_t oh = spec.out_shape[0], ow = spec.out_shape[1];
  const int64_t k = spec.kernel, s = spec.stride, pad = spec.pad;
  const int64_t t = oh * ow, p = k * k * c;
  TensorT<Real> dx({n, h, w, c});
  const Real* pd = dpatches.data();
  Real* px = dx.data();
  parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b) {
      Real* img = px + b * h * w * c;
      const Real* rows = pd + b * t * p;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const Real* row = rows + (oy * ow + ox) * p;
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t y = oy * s - pad + ky;
            if (y < 0 || y >= h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t xx = ox * s - pad + kx;
              if (xx < 0 || xx >= w) continue;
              Real* dst = img + (y * w + xx) * c;
              const Real* src = row + (ky * k + kx) * c;
              for (int64_t cc = 0; cc < c; ++cc) dst[cc] += src[cc];
            }
          }
        }
    }
  });
  return dx;
}

// ------------------------------------------------------- dense as functions
// (the two VAE heads are standalone dense layers, so these are reusable)

template <class Real>
TensorT<Real> dense_forward(const Layer<Real>& layer, const TensorT<Real>& x,
                            int threads) {
  return matmul_nt(x, layer.weight, threads);  // [n, p] * [q, p]^T
}

// returns dx; writes the weight gradient if dw != nullptr
template <class Real>
TensorT<Real> dense_backward(const Layer<Real>& layer, const TensorT<Real>& x,
                             const TensorT<Real>& dy, TensorT<Real>* dw,
                             int threads) {
  if (dw) *dw = matmul_tn(dy, x, threads);  // dy^T x -> [q, p]
  return matmul(dy, layer.weight, threads);
}

// -------------------------------------------------------------------- chain

template <class Real>
class Chain {
 public:
  void push(LayerSpec spec) {
    if (!layers_.empty() && spec.in_shape != layers_.back().spec.out_shape)
      throw DataError("chain: layer " + std::to_string(layers_.size()) + " (" +
                      spec.describe() + ") does not accept previous output " +
                      shape_str(layers_.back().spec.out_shape));
    Layer<Real> layer;
    layer.spec = std::move(spec);
    if (layer.spec.has_params())
      layer.weight = TensorT<Real>(
          {layer.spec.out_features(), layer.spec.in_features()});
    layers_.push_back(std::move(layer));
  }

  void init_params(Rng& rng) {
    for (auto& layer : layers_) {
      if (!layer.spec.has_params()) continue;
      const double stddev =
          layer.spec.init_gain / std::sqrt(double(layer.spec.in_features()));
      for (int64_t i = 0; i < layer.weight.numel(); ++i)
        layer.weight[i] = Real(stddev * rng.gaussian());
    }
  }

  std::vector<Layer<Real>>& layers() { return layers_; }
  const std::vector<Layer<Real>>& layers() const { return layers_; }
  size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const Shape& in_shape() const { return layers_.front().spec.in_shape; }
  const Shape& out_shape() const { return layers_.back().spec.out_shape; }

  std::vector<int> param_layer_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].spec.has_params()) idx.push_back(int(i));
    return idx;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& l : layers_) n += l.spec.param_count();
    return n;
  }

  const TensorT<Real>& forward(const TensorT<Real>& x, Workspace<Real>& ws,
                               int threads) const {
    require_batch_shape(x, in_shape(), "chain forward");
    ws.acts.resize(layers_.size() + 1);
    ws.patches.resize(layers_.size());
    ws.acts[0] = x;
    for (size_t i = 0; i < layers_.size(); ++i)
      ws.acts[i + 1] =
          forward_one(layers_[i], ws.acts[i], &ws.patches[i], threads);
    return ws.acts.back();
  }

  // dy: gradient at the chain output; returns the gradient at the input.
  // wgrads, if given, receives whole-batch weight gradients (slot per layer,
  // empty for parameterless layers).  capture, if given, requires batch 1 and
  // receives per-sample factors for every parameterised layer, chain order.
  TensorT<Real> backward(Workspace<Real>& ws, const TensorT<Real>& dy,
                         std::vector<TensorT<Real>>* wgrads,
                         LayerGradientSet<Real>* capture, int threads) const {
    if (ws.acts.size() != layers_.size() + 1)
      throw DataError("chain backward: workspace does not match a forward");
    require_batch_shape(dy, out_shape(), "chain backward");
    if (capture && dy.dim(0) != 1)
      throw DataError("chain backward: per-sample capture needs batch 1");
    if (wgrads) wgrads->resize(layers_.size());
    if (capture) capture->resize(param_layer_indices().size());

    TensorT<Real> grad = dy;
    int param_slot = int(param_layer_indices().size());
    for (int i = int(layers_.size()) - 1; i >= 0; --i) {
      const Layer<Real>& layer = layers_[size_t(i)];
      TensorT<Real>* dw = nullptr;
      if (layer.spec.has_params() && (wgrads || capture)) {
        if (wgrads) dw = &(*wgrads)[size_t(i)];
      }
      LayerGrad<Real>* cap = nullptr;
      if (layer.spec.has_params() && capture) {
        --param_slot;
        cap = &(*capture)[size_t(param_slot)];
      }
      grad = backward_one(layer, ws.acts[size_t(i)], ws.patches[size_t(i)],
                          grad, dw, cap, threads);
    }
    return grad;
  }

 private:
  static void require_batch_shape(const TensorT<Real>& x, const Shape& per,
                                  const char* what) {
    bool ok = x.ndim() == int(per.size()) + 1;
    for (size_t i = 0; ok && i < per.size(); ++i)
      ok = x.dim(int(i) + 1) == per[i];
    if (!ok)
      throw DataError(std::string(what) + ": batch shape " +
                      shape_str(x.shape()) + " does not match per-sample " +
                      shape_str(per));
  }

  static TensorT<Real> forward_one(const Layer<Real>& layer,
                                   const TensorT<Real>& x,
                                   TensorT<Real>* patches, int threads) {
    const int64_t n = x.dim(0);
    const LayerSpec& spec = layer.spec;
    switch (spec.kind) {
      case LayerKind::dense:
        return dense_forward(layer, x, threads);
      case LayerKind::conv2d: {
        *patches = im2col(x, spec, threads);
        TensorT<Real> ymat = matmul_nt(*patches, layer.weight, threads);
        Shape out = {n, spec.out_shape[0], spec.out_shape[1],
                     spec.out_shape[2]};
        return ymat.reshaped(std::move(out));
      }
      case LayerKind::relu: {
        TensorT<Real> y(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i)
          y[i] = x[i] > Real(0) ? x[i] : Real(0);
        return y;
      }
      case LayerKind::reshape: {
        Shape out = spec.out_shape;
        out.insert(out.begin(), n);
        return x.reshaped(std::move(out));
      }
      case LayerKind::upsample2d: {
        const int64_t h = spec.in_shape[0], w = spec.in_shape[1],
                      c = spec.in_shape[2];
        const int64_t oh = spec.out_shape[0], ow = spec.out_shape[1];
        TensorT<Real> y({n, oh, ow, c});
        const Real* px = x.data();
        Real* py = y.data();
        parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
          for (int64_t b = b0; b < b1; ++b)
            for (int64_t oy = 0; oy < oh; ++oy) {
              const int64_t sy = oy * h / oh;
              for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t sx = ox * w / ow;
                const Real* src = px + ((b * h + sy) * w + sx) * c;
                Real* dst = py + ((b * oh + oy) * ow + ox) * c;
                for (int64_t cc = 0; cc < c; ++cc) dst[cc] = src[cc];
              }
            }
        });
        return y;
      }
    }
    throw Error("chain: unknown layer kind");
  }

  static TensorT<Real> backward_one(const Layer<Real>& layer,
                                    const TensorT<Real>& x,
                                    const TensorT<Real>& patches,
                                    const TensorT<Real>& dy, TensorT<Real>* dw,
                                    LayerGrad<Real>* cap, int threads) {
    const int64_t n = x.dim(0);
    const LayerSpec& spec = layer.spec;
    switch (spec.kind) {
      case LayerKind::dense: {
        TensorT<Real> grad_w;
        TensorT<Real> dx = dense_backward(
            layer, x, dy, (dw || cap) ? &grad_w : nullptr, threads);
        if (cap) {
          cap->grad = grad_w;
          cap->layer_input = x;        // [1, p]
          cap->preact_grad = dy;       // [1, q]
        }
        if (dw) *dw = std::move(grad_w);
        return dx;
      }
      case LayerKind::conv2d: {
        const int64_t t = spec.out_shape[0] * spec.out_shape[1];
        const int64_t q = spec.out_features();
        TensorT<Real> dymat = dy.reshaped({n * t, q});
        TensorT<Real> grad_w;
        if (dw || cap) grad_w = matmul_tn(dymat, patches, threads);
        if (cap) {
          cap->grad = grad_w;
          cap->layer_input = patches;  // [t, p] (batch 1)
          cap->preact_grad = dymat;    // [t, q]
        }
        if (dw) *dw = std::move(grad_w);
        TensorT<Real> dpatches = matmul(dymat, layer.weight, threads);
        return col2im(dpatches, spec, n, threads);
      }
      case LayerKind::relu: {
        TensorT<Real> dx(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i)
          dx[i] = x[i] > Real(0) ? dy[i] : Real(0);
        return dx;
      }
      case LayerKind::reshape: {
        Shape in = spec.in_shape;
        in.insert(in.begin(), n);
        return dy.reshaped(std::move(in));
      }
      case LayerKind::upsample2d: {
        const int64_t h = spec.in_shape[0], w = spec.in_shape[1],
                      c = spec.in_shape[2];
        const int64_t oh = spec.out_shape[0], ow = spec.out_shape[1];
        TensorT<Real> dx({n, h, w, c});
        const Real* pd = dy.data();
        Real* px = dx.data();
        parallel_for(n, threads, [&](int64_t b0, int64_t b1) {
          for (int64_t b = b0; b < b1; ++b)
            for (int64_t oy = 0; oy < oh; ++oy) {
              const int64_t sy = oy * h / oh;
              for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t sx = ox * w / ow;
                Real* dst = px + ((b * h + sy) * w + sx) * c;
                const Real* src = pd + ((b * oh + oy) * ow + ox) * c;
                for (int64_t cc = 0; cc < c; ++cc) dst[cc] += src[cc];
              }
            }
        });
        return dx;
      }
    }
    throw Error("chain: unknown layer kind");
  }

  std::vector<Layer<Real>> layers_;
};

// --------------------------------------------------------------- grad check

struct GradCheckResult {
  double max_rel_err = 0;
  int64_t coords_checked = 0;
};

// Central-difference validation of analytic parameter gradients.  loss() must
// be a pure function of the referenced parameters; each checked coordinate is
// perturbed by +-step and restored.  Relative-error denominators are floored
// so near-zero gradients do not blow up the ratio.  max_coords == 0 checks
// every coordinate; otherwise a seeded subset per parameter tensor.
template <class Real>
GradCheckResult grad_check(const std::function<double()>& loss,
                           const std::vector<TensorT<Real>*>& params,
                           const std::vector<const TensorT<Real>*>& analytic,
                           double step = 1e-5, double denom_floor = 1e-8,
                           int64_t max_coords = 0, uint64_t seed = 0) {
  if (params.size() != analytic.size())
    throw DataError("grad_check: params/analytic size mismatch");
  GradCheckResult result;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    TensorT<Real>& w = *params[pi];
    const TensorT<Real>& a = *analytic[pi];
    detail::require_same_shape(w, a, "grad_check");
    std::vector<int64_t> coords(size_t(w.numel()));
    for (int64_t i = 0; i < w.numel(); ++i) coords[size_t(i)] = i;
    if (max_coords > 0 && max_coords < w.numel()) {
      Rng rng = Rng::for_stream(seed, uint64_t(pi));
      rng.shuffle(coords.data(), int64_t(coords.size()));
      coords.resize(size_t(max_coords));
    }
    for (const int64_t j : coords) {
      const Real saved = w[j];
      w[j] = Real(double(saved) + step);
      const double up = loss();
      w[j] = Real(double(saved) - step);
      const double down = loss();
      w[j] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = double(a[j]);
      const double denom =
          std::max(denom_floor, std::max(std::abs(fd), std::abs(an)));
      result.max_rel_err = std::max(result.max_rel_err,
                                    std::abs(fd - an) / denom);
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace rose
