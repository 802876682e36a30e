/* Copyright 2026 The MSFN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Functional forward/backward kernels. Every op is pure: inputs are read
// only, results and gradients come back as fresh tensors or are accumulated
// into caller-provided buffers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "msfn/error.hpp"
#include "msfn/nn/gemm.hpp"
#include "msfn/nn/tensor.hpp"

namespace msfn::nn {

enum class LayerKind {
  kConv3x3,
  kConv1x1,
  kBatchNorm,
  kRelu,
  kMaxPool2x2,
  kTConv2x2,
  kSigmoid,
  kConcat,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kConv3x3: return "conv3x3";
    case LayerKind::kConv1x1: return "conv1x1";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2x2: return "maxpool2x2";
    case LayerKind::kTConv2x2: return "tconv2x2";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kConcat: return "concat";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec conv3x3(std::size_t in, std::size_t out) {
    return {LayerKind::kConv3x3, in, out, 1, 1};
  }
  static LayerSpec conv1x1(std::size_t in, std::size_t out) {
    return {LayerKind::kConv1x1, in, out, 1, 0};
  }
  static LayerSpec tconv2x2(std::size_t in, std::size_t out) {
    return {LayerKind::kTConv2x2, in, out, 2, 0};
  }
  static LayerSpec batchnorm(std::size_t c) {
    return {LayerKind::kBatchNorm, c, c, 1, 0};
  }
  static LayerSpec maxpool2x2(std::size_t c) {
    return {LayerKind::kMaxPool2x2, c, c, 2, 0};
  }

  std::size_t kernel() const {
    switch (kind) {
      case LayerKind::kConv3x3: return 3;
      case LayerKind::kConv1x1: return 1;
      case LayerKind::kTConv2x2:
      case LayerKind::kMaxPool2x2: return 2;
      default: return 0;
    }
  }

  // Weight element count (0 for parameter-free layers).
  std::size_t weight_count() const {
    const std::size_t k = kernel();
    switch (kind) {
      case LayerKind::kConv3x3:
      case LayerKind::kConv1x1:
      case LayerKind::kTConv2x2: return in_channels * out_channels * k * k;
      case LayerKind::kBatchNorm: return 2 * out_channels;
      default: return 0;
    }
  }
  std::size_t bias_count() const {
    switch (kind) {
      case LayerKind::kConv3x3:
      case LayerKind::kConv1x1:
      case LayerKind::kTConv2x2: return out_channels;
      default: return 0;
    }
  }
};

inline void require_kind(const LayerSpec& spec,
                         std::initializer_list<LayerKind> allowed,
                         const char* op) {
  for (LayerKind k : allowed) {
    if (spec.kind == k) return;
  }
  throw ShapeError(std::string(op) + ": unsupported layer kind " +
                   to_string(spec.kind));
}

namespace detail {

// Column matrix for a 3x3/pad-1 convolution: row (c*9 + ky*3 + kx),
// column (y*W + x).
template <class T>
void im2col3(const T* x, std::size_t c_in, std::size_t h, std::size_t w,
             T* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < c_in; ++c) {
    const T* src = x + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = col + (c * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (std::size_t y = 0; y < h; ++y) {
          T* out = row + y * w;
          const int sy = static_cast<int>(y) + dy;
          if (sy < 0 || sy >= static_cast<int>(h)) {
            std::fill(out, out + w, T(0));
            continue;
          }
          const T* in = src + sy * w;
          if (dx == 0) {
            std::copy(in, in + w, out);
          } else if (dx < 0) {
            out[0] = T(0);
            std::copy(in, in + w - 1, out + 1);
          } else {
            std::copy(in + 1, in + w, out);
            out[w - 1] = T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im3(const T* col, std::size_t c_in, std::size_t h, std::size_t w,
             T* x) {
  const std::size_t hw = h * w;
  std::fill(x, x + c_in * hw, T(0));
  for (std::size_t c = 0; c < c_in; ++c) {
    T* dst = x + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = col + (c * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (std::size_t y = 0; y < h; ++y) {
          const int sy = static_cast<int>(y) + dy;
          if (sy < 0 || sy >= static_cast<int>(h)) continue;
          const T* in = row + y * w;
          T* out = dst + sy * w;
          const std::size_t x0 = dx < 0 ? 1 : 0;
          const std::size_t x1 = dx > 0 ? w - 1 : w;
          for (std::size_t xx = x0; xx < x1; ++xx) out[xx + dx] += in[xx];
        }
      }
    }
  }
}

template <class T>
void check_conv(const Tensor<T>& x, const Tensor<T>& weight,
                std::size_t bias_len, const LayerSpec& spec) {
  require_kind(spec, {LayerKind::kConv3x3, LayerKind::kConv1x1}, "conv2d");
  const std::size_t k = spec.kernel();
  const Shape ws = weight.shape();
  if (ws.n != spec.out_channels || ws.c != spec.in_channels || ws.h != k ||
      ws.w != k) {
    throw ShapeError("conv2d: weight shape " + to_string(ws) +
                     " does not match spec out=" +
                     std::to_string(spec.out_channels) +
                     " in=" + std::to_string(spec.in_channels) +
                     " k=" + std::to_string(k));
  }
  if (x.shape().c != spec.in_channels) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.shape().c) +
                     " != weight input channels " +
                     std::to_string(spec.in_channels));
  }
  if (bias_len != spec.out_channels) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias_len) +
                     " != output channels " +
                     std::to_string(spec.out_channels));
  }
}

template <class T>
void check_tconv(const Tensor<T>& x, const Tensor<T>& weight,
                 std::size_t bias_len, const LayerSpec& spec) {
  require_kind(spec, {LayerKind::kTConv2x2}, "tconv2d");
  const Shape ws = weight.shape();
  if (ws.n != spec.in_channels || ws.c != spec.out_channels || ws.h != 2 ||
      ws.w != 2) {
    throw ShapeError("tconv2d: weight shape " + to_string(ws) +
                     " does not match spec in=" +
                     std::to_string(spec.in_channels) +
                     " out=" + std::to_string(spec.out_channels));
  }
  if (x.shape().c != spec.in_channels) {
    throw ShapeError("tconv2d: input channels " +
                     std::to_string(x.shape().c) + " != weight input channels " +
                     std::to_string(spec.in_channels));
  }
  if (bias_len != spec.out_channels) {
    throw ShapeError("tconv2d: bias length " + std::to_string(bias_len) +
                     " != output channels " +
                     std::to_string(spec.out_channels));
  }
}

}  // namespace detail

// ---- convolution ----------------------------------------------------------

// weight: (out, in, k, k); bias: out values.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 std::span<const T> bias, const LayerSpec& spec) {
  detail::check_conv(x, weight, bias.size(), spec);
  const Shape xs = x.shape();
  const std::size_t hw = xs.plane();
  const std::size_t cout = spec.out_channels;
  const std::size_t kdim = spec.in_channels * spec.kernel() * spec.kernel();
  Tensor<T> y(Shape{xs.n, cout, xs.h, xs.w});
  if (y.size() == 0) return y;
  std::vector<T> col(spec.kind == LayerKind::kConv3x3 ? kdim * hw : 0);
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* src = x.plane(n, 0);
    if (spec.kind == LayerKind::kConv3x3) {
      detail::im2col3(src, xs.c, xs.h, xs.w, col.data());
      src = col.data();
    }
    T* dst = y.plane(n, 0);
    for (std::size_t o = 0; o < cout; ++o) {
      std::fill(dst + o * hw, dst + (o + 1) * hw, bias[o]);
    }
    gemm<T>(false, false, static_cast<int>(cout), static_cast<int>(hw),
            static_cast<int>(kdim), T(1), weight.data(), static_cast<int>(kdim),
            src, static_cast<int>(hw), T(1), dst, static_cast<int>(hw));
  }
  return y;
}

// Accumulates dweight/dbias; writes dx when non-null.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& dy, const LayerSpec& spec, Tensor<T>* dx,
                     T* dweight, T* dbias) {
  detail::check_conv(x, weight, spec.out_channels, spec);
  const Shape xs = x.shape();
  if (!(dy.shape() == Shape{xs.n, spec.out_channels, xs.h, xs.w})) {
    throw ShapeError("conv2d_backward: upstream gradient shape " +
                     to_string(dy.shape()));
  }
  const std::size_t hw = xs.plane();
  const std::size_t cout = spec.out_channels;
  const std::size_t kdim = spec.in_channels * spec.kernel() * spec.kernel();
  const bool k3 = spec.kind == LayerKind::kConv3x3;
  std::vector<T> col(k3 ? kdim * hw : 0);
  std::vector<T> dcol(k3 && dx ? kdim * hw : 0);
  if (dx) *dx = Tensor<T>(xs);
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* g = dy.plane(n, 0);
    for (std::size_t o = 0; o < cout; ++o) {
      T s = T(0);
      for (std::size_t i = 0; i < hw; ++i) s += g[o * hw + i];
      dbias[o] += s;
    }
    const T* src = x.plane(n, 0);
    if (k3) {
      detail::im2col3(src, xs.c, xs.h, xs.w, col.data());
      src = col.data();
    }
    gemm<T>(false, true, static_cast<int>(cout), static_cast<int>(kdim),
            static_cast<int>(hw), T(1), g, static_cast<int>(hw), src,
            static_cast<int>(hw), T(1), dweight, static_cast<int>(kdim));
    if (dx) {
      T* target = k3 ? dcol.data() : dx->plane(n, 0);
      gemm<T>(true, false, static_cast<int>(kdim), static_cast<int>(hw),
              static_cast<int>(cout), T(1), weight.data(),
              static_cast<int>(kdim), g, static_cast<int>(hw), T(0), target,
              static_cast<int>(hw));
      if (k3) detail::col2im3(dcol.data(), xs.c, xs.h, xs.w, dx->plane(n, 0));
    }
  }
}

template <class T>
struct ParamGrads {
  Tensor<T> dx;
  Tensor<T> dweight;
  std::vector<T> dbias;
};

template <class T>
ParamGrads<T> conv2d_grads(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& dy, const LayerSpec& spec) {
  ParamGrads<T> g;
  g.dweight = Tensor<T>(weight.shape());
  g.dbias.assign(spec.out_channels, T(0));
  conv2d_backward(x, weight, dy, spec, &g.dx, g.dweight.data(),
                  g.dbias.data());
  return g;
}

// ---- transpose convolution (kernel 2, stride 2) -------------------------

// weight: (in, out, 2, 2); input pixel (i, j) feeds output block
// (2i..2i+1, 2j..2j+1) only.
template <class T>
Tensor<T> tconv2d(const Tensor<T>& x, const Tensor<T>& weight,
                  std::span<const T> bias, const LayerSpec& spec) {
  detail::check_tconv(x, weight, bias.size(), spec);
  const Shape xs = x.shape();
  const std::size_t hw = xs.plane();
  const std::size_t cout = spec.out_channels;
  const std::size_t o4 = cout * 4;
  Tensor<T> y(Shape{xs.n, cout, xs.h * 2, xs.w * 2});
  std::vector<T> cols(o4 * hw);
  const std::size_t ow = xs.w * 2;
  for (std::size_t n = 0; n < xs.n; ++n) {
    gemm<T>(true, false, static_cast<int>(o4), static_cast<int>(hw),
            static_cast<int>(xs.c), T(1), weight.data(), static_cast<int>(o4),
            x.plane(n, 0), static_cast<int>(hw), T(0), cols.data(),
            static_cast<int>(hw));
    for (std::size_t o = 0; o < cout; ++o) {
      T* dst = y.plane(n, o);
      for (std::size_t ab = 0; ab < 4; ++ab) {
        const std::size_t a = ab >> 1;
        const std::size_t b = ab & 1;
        const T* src = cols.data() + (o * 4 + ab) * hw;
        for (std::size_t i = 0; i < xs.h; ++i) {
          T* row = dst + (2 * i + a) * ow + b;
          const T* in = src + i * xs.w;
          for (std::size_t j = 0; j < xs.w; ++j) row[2 * j] = in[j] + bias[o];
        }
      }
    }
  }
  return y;
}

template <class T>
void tconv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                      const Tensor<T>& dy, const LayerSpec& spec,
                      Tensor<T>* dx, T* dweight, T* dbias) {
  detail::check_tconv(x, weight, spec.out_channels, spec);
  const Shape xs = x.shape();
  const std::size_t cout = spec.out_channels;
  if (!(dy.shape() == Shape{xs.n, cout, xs.h * 2, xs.w * 2})) {
    throw ShapeError("tconv2d_backward: upstream gradient shape " +
                     to_string(dy.shape()));
  }
  const std::size_t hw = xs.plane();
  const std::size_t o4 = cout * 4;
  const std::size_t ow = xs.w * 2;
  std::vector<T> cols(o4 * hw);
  if (dx) *dx = Tensor<T>(xs);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const T* src = dy.plane(n, o);
      T s = T(0);
      for (std::size_t i = 0; i < 4 * hw; ++i) s += src[i];
      dbias[o] += s;
      for (std::size_t ab = 0; ab < 4; ++ab) {
        const std::size_t a = ab >> 1;
        const std::size_t b = ab & 1;
        T* dst = cols.data() + (o * 4 + ab) * hw;
        for (std::size_t i = 0; i < xs.h; ++i) {
          const T* row = src + (2 * i + a) * ow + b;
          T* out = dst + i * xs.w;
          for (std::size_t j = 0; j < xs.w; ++j) out[j] = row[2 * j];
        }
      }
    }
    gemm<T>(false, true, static_cast<int>(xs.c), static_cast<int>(o4),
            static_cast<int>(hw), T(1), x.plane(n, 0), static_cast<int>(hw),
            cols.data(), static_cast<int>(hw), T(1), dweight,
            static_cast<int>(o4));
    if (dx) {
      gemm<T>(false, false, static_cast<int>(xs.c), static_cast<int>(hw),
              static_cast<int>(o4), T(1), weight.data(), static_cast<int>(o4),
              cols.data(), static_cast<int>(hw), T(0), dx->plane(n, 0),
              static_cast<int>(hw));
    }
  }
}

template <class T>
ParamGrads<T> tconv2d_grads(const Tensor<T>& x, const Tensor<T>& weight,
                            const Tensor<T>& dy, const LayerSpec& spec) {
  ParamGrads<T> g;
  g.dweight = Tensor<T>(weight.shape());
  g.dbias.assign(spec.out_channels, T(0));
  tconv2d_backward(x, weight, dy, spec, &g.dx, g.dweight.data(),
                   g.dbias.data());
  return g;
}

// ---- max pooling ------------------------------------------------------------

template <class T>
struct PoolResult {
  Tensor<T> y;
  // Winning position inside each 2x2 window, 0..3 in row-major order.
  std::vector<std::uint8_t> argmax;
};

template <class T>
PoolResult<T> maxpool2x2(const Tensor<T>& x) {
  const Shape xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial size " + std::to_string(xs.h) + "x" +
                     std::to_string(xs.w) +
                     " is odd; pad or resize inputs to a multiple of 32 "
                     "before feeding the network");
  }
  PoolResult<T> r;
  const std::size_t oh = xs.h / 2;
  const std::size_t ow = xs.w / 2;
  r.y = Tensor<T>(Shape{xs.n, xs.c, oh, ow});
  r.argmax.assign(r.y.size(), 0);
  std::size_t k = 0;
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = r.y.plane(n, c);
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j, ++k) {
          const T* p = src + 2 * i * xs.w + 2 * j;
          T best = p[0];
          std::uint8_t arg = 0;
          const T cand[3] = {p[1], p[xs.w], p[xs.w + 1]};
          for (std::uint8_t t = 0; t < 3; ++t) {
            if (cand[t] > best) {
              best = cand[t];
              arg = static_cast<std::uint8_t>(t + 1);
            }
          }
          dst[i * ow + j] = best;
          r.argmax[k] = arg;
        }
      }
    }
  }
  return r;
}

template <class T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& dy,
                              std::span<const std::uint8_t> argmax,
                              const Shape& input_shape) {
  Tensor<T> dx(input_shape);
  const Shape ys = dy.shape();
  if (argmax.size() != dy.size() || ys.h * 2 != input_shape.h ||
      ys.w * 2 != input_shape.w) {
    throw ShapeError("maxpool2x2_backward: gradient " + to_string(ys) +
                     " vs input " + to_string(input_shape));
  }
  std::size_t k = 0;
  for (std::size_t n = 0; n < ys.n; ++n) {
    for (std::size_t c = 0; c < ys.c; ++c) {
      const T* g = dy.plane(n, c);
      T* dst = dx.plane(n, c);
      for (std::size_t i = 0; i < ys.h; ++i) {
        for (std::size_t j = 0; j < ys.w; ++j, ++k) {
          const std::size_t a = argmax[k] >> 1;
          const std::size_t b = argmax[k] & 1;
          dst[(2 * i + a) * input_shape.w + 2 * j + b] += g[i * ys.w + j];
        }
      }
    }
  }
  return dx;
}

// ---- batch normalisation -------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <class T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> invstd;
};

template <class T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  std::uint64_t batches = 0;
};

namespace detail {
template <class T>
void check_bn(const Tensor<T>& x, std::size_t gamma, std::size_t beta) {
  if (gamma != x.shape().c || beta != x.shape().c) {
    throw ShapeError("batchnorm: gamma/beta length " + std::to_string(gamma) +
                     "/" + std::to_string(beta) + " != input channels " +
                     std::to_string(x.shape().c));
  }
}
}  // namespace detail

// Normalises with batch statistics and folds them into the running
// estimates (unbiased variance, as is conventional).
template <class T>
Tensor<T> batchnorm_train(const Tensor<T>& x, std::span<const T> gamma,
                          std::span<const T> beta, std::span<T> running_mean,
                          std::span<T> running_var, BatchNormCache<T>* cache) {
  detail::check_bn(x, gamma.size(), beta.size());
  const Shape xs = x.shape();
  const std::size_t hw = xs.plane();
  const std::size_t count = xs.n * hw;
  if (count == 0) throw ShapeError("batchnorm: empty batch");
  Tensor<T> y(xs);
  Tensor<T> xhat(xs);
  std::vector<T> invstd(xs.c);
  for (std::size_t c = 0; c < xs.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* p = x.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* p = x.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const double is = 1.0 / std::sqrt(var + kBatchNormEps);
    invstd[c] = static_cast<T>(is);
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* p = x.plane(n, c);
      T* h = xhat.plane(n, c);
      T* o = y.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        h[i] = static_cast<T>((p[i] - mean) * is);
        o[i] = gamma[c] * h[i] + beta[c];
      }
    }
    const double unbiased =
        count > 1 ? sq / static_cast<double>(count - 1) : var;
    running_mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) *
                                         running_mean[c] +
                                     kBatchNormMomentum * mean);
    running_var[c] = static_cast<T>((1.0 - kBatchNormMomentum) *
                                        running_var[c] +
                                    kBatchNormMomentum * unbiased);
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->invstd = std::move(invstd);
  }
  return y;
}

template <class T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, std::span<const T> gamma,
                         std::span<const T> beta,
                         std::span<const T> running_mean,
                         std::span<const T> running_var,
                         BatchNormCache<T>* cache) {
  detail::check_bn(x, gamma.size(), beta.size());
  const Shape xs = x.shape();
  const std::size_t hw = xs.plane();
  Tensor<T> y(xs);
  Tensor<T> xhat(cache ? xs : Shape{});
  std::vector<T> invstd(xs.c);
  for (std::size_t c = 0; c < xs.c; ++c) {
    const T is = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(running_var[c]) + kBatchNormEps));
    invstd[c] = is;
    const T scale = gamma[c] * is;
    const T shift = beta[c] - running_mean[c] * scale;
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* p = x.plane(n, c);
      T* o = y.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) o[i] = p[i] * scale + shift;
      if (cache) {
        T* h = xhat.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          h[i] = (p[i] - running_mean[c]) * is;
        }
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->invstd = std::move(invstd);
  }
  return y;
}

enum class Mode { kTrain, kEval };

// Stateful entry point. Eval mode refuses stats that never saw a batch.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, std::span<const T> gamma,
                    std::span<const T> beta, RunningStats<T>& stats, Mode mode,
                    BatchNormCache<T>* cache = nullptr) {
  if (stats.mean.size() != x.shape().c) {
    stats.mean.assign(x.shape().c, T(0));
    stats.var.assign(x.shape().c, T(1));
    stats.batches = 0;
  }
  if (mode == Mode::kEval) {
    if (stats.batches == 0) {
      throw Error("batchnorm: uninitialized running statistics");
    }
    return batchnorm_eval<T>(x, gamma, beta, stats.mean, stats.var, cache);
  }
  ++stats.batches;
  return batchnorm_train<T>(x, gamma, beta, stats.mean, stats.var, cache);
}

// Train-mode backward (batch statistics depend on x).
template <class T>
Tensor<T> batchnorm_backward_train(const Tensor<T>& dy,
                                   const BatchNormCache<T>& cache,
                                   std::span<const T> gamma, T* dgamma,
                                   T* dbeta) {
  const Shape s = dy.shape();
  require_same_shape(dy, cache.xhat, "batchnorm_backward");
  const std::size_t hw = s.plane();
  const double count = static_cast<double>(s.n * hw);
  Tensor<T> dx(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* g = dy.plane(n, c);
      const T* h = cache.xhat.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * h[i];
      }
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const double k = gamma[c] * static_cast<double>(cache.invstd[c]);
    const double mean_dy = sum_dy / count;
    const double mean_dy_xhat = sum_dy_xhat / count;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* g = dy.plane(n, c);
      const T* h = cache.xhat.plane(n, c);
      T* o = dx.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        o[i] = static_cast<T>(k * (g[i] - mean_dy - h[i] * mean_dy_xhat));
      }
    }
  }
  return dx;
}

// Eval-mode backward: the affine map with frozen statistics.
template <class T>
Tensor<T> batchnorm_backward_eval(const Tensor<T>& dy,
                                  const BatchNormCache<T>& cache,
                                  std::span<const T> gamma, T* dgamma,
                                  T* dbeta) {
  const Shape s = dy.shape();
  require_same_shape(dy, cache.xhat, "batchnorm_backward");
  const std::size_t hw = s.plane();
  Tensor<T> dx(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    const T k = gamma[c] * cache.invstd[c];
    T sg = T(0);
    T sgh = T(0);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* g = dy.plane(n, c);
      const T* h = cache.xhat.plane(n, c);
      T* o = dx.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        sg += g[i];
        sgh += g[i] * h[i];
        o[i] = g[i] * k;
      }
    }
    dgamma[c] += sgh;
    dbeta[c] += sg;
  }
  return dx;
}

// ---- activations -----------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* o = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = p[i] > T(0) ? p[i] : T(0);
  return y;
}

// Gradient through relu given its output (y > 0 exactly where x > 0).
template <class T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  require_same_shape(dy, y, "relu_backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dx.data()[i] = y.data()[i] > T(0) ? dy.data()[i] : T(0);
  }
  return dx;
}

template <class T>
T sigmoid_scalar(T x) {
  // Clamp keeps the output strictly inside (0, 1) even where exp saturates.
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  T y;
  if (x >= T(0)) {
    y = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    y = e / (T(1) + e);
  }
  return std::clamp(y, lo, hi);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y.data()[i] = sigmoid_scalar(x.data()[i]);
  }
  return y;
}

template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  require_same_shape(dy, y, "sigmoid_backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const T p = y.data()[i];
    dx.data()[i] = dy.data()[i] * p * (T(1) - p);
  }
  return dx;
}

// ---- channel concatenation --------------------------------------------------

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape s0 = inputs[0]->shape();
  std::size_t channels = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Shape s = inputs[i]->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: stream " + std::to_string(i) +
                       " has shape " + to_string(s) + ", expected (" +
                       std::to_string(s0.n) + ",*," + std::to_string(s0.h) +
                       "," + std::to_string(s0.w) + ")");
    }
    channels += s.c;
  }
  Tensor<T> y(Shape{s0.n, channels, s0.h, s0.w});
  for (std::size_t n = 0; n < s0.n; ++n) {
    T* dst = y.plane(n, 0);
    for (const auto* t : inputs) {
      const std::size_t len = t->shape().c * s0.plane();
      std::copy(t->plane(n, 0), t->plane(n, 0) + len, dst);
      dst += len;
    }
  }
  return y;
}

template <class T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> inputs) {
  std::vector<const Tensor<T>*> v(inputs);
  return concat_channels<T>(std::span<const Tensor<T>* const>(v));
}

// Inverse of concat_channels; also the gradient split.
template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& y,
                                      std::span<const std::size_t> channels) {
  const Shape s = y.shape();
  std::size_t total = 0;
  for (std::size_t c : channels) total += c;
  if (total != s.c) {
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) +
                     ", tensor has " + std::to_string(s.c) + " channels");
  }
  std::vector<Tensor<T>> out;
  out.reserve(channels.size());
  for (std::size_t c : channels) out.emplace_back(Shape{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = y.plane(n, 0);
    for (auto& t : out) {
      const std::size_t len = t.shape().c * s.plane();
      std::copy(src, src + len, t.plane(n, 0));
      src += len;
    }
  }
  return out;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

// ---- loss -------------------------------------------------------------------

inline constexpr double kBceClamp = 1e-7;

template <class T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // d loss / d pred
};

// Mean binary cross-entropy. pos_weight scales the positive-class term
// (1 = the plain loss).
template <class T>
LossResult<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target,
                       double pos_weight = 1.0) {
  require_same_shape(pred, target, "bce_loss");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape());
  const std::size_t count = pred.size();
  if (count == 0) return r;
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const T t = target.data()[i];
    if (t != T(0) && t != T(1)) {
      throw Error("bce_loss: target value " + std::to_string(t) +
                  " at index " + std::to_string(i) + " is not binary");
    }
    const double p = std::clamp(static_cast<double>(pred.data()[i]), kBceClamp,
                                1.0 - kBceClamp);
    double g;
    if (t == T(1)) {
      total -= pos_weight * std::log(p);
      g = -pos_weight / p;
    } else {
      total -= std::log(1.0 - p);
      g = 1.0 / (1.0 - p);
    }
    r.grad.data()[i] = static_cast<T>(g * inv);
  }
  r.loss = total * inv;
  return r;
}

}  // namespace msfn::nn
