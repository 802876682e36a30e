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

// Brute-force reference implementations. Deliberately written as plain
// nested loops, sharing no code with the optimized kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "msfn/nn/tensor.hpp"

namespace oracle {

using msfn::nn::Shape;
using msfn::nn::Tensor;

template <class T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

// Direct convolution with zero padding; weight (out, in, k, k).
template <class T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w,
               const std::vector<T>& b, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int k = static_cast<int>(ws.h);
  Tensor<T> y(Shape{xs.n, ws.n, xs.h, xs.w});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (int i = 0; i < static_cast<int>(xs.h); ++i)
        for (int j = 0; j < static_cast<int>(xs.w); ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < xs.c; ++c)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int yy = i + u - pad;
                const int xx = j + v - pad;
                if (yy < 0 || xx < 0 || yy >= static_cast<int>(xs.h) ||
                    xx >= static_cast<int>(xs.w))
                  continue;
                s += static_cast<double>(x.at(n, c, yy, xx)) *
                     w.at(o, c, u, v);
              }
          y.at(n, o, i, j) = static_cast<T>(s);
        }
  return y;
}

// Scatter formulation of the 2x2/stride-2 transpose convolution;
// weight (in, out, 2, 2).
template <class T>
Tensor<T> tconv(const Tensor<T>& x, const Tensor<T>& w,
                const std::vector<T>& b) {
  const Shape xs = x.shape();
  const std::size_t out = w.shape().c;
  std::vector<double> acc(xs.n * out * xs.h * 2 * xs.w * 2, 0.0);
  auto idx = [&](std::size_t n, std::size_t o, std::size_t i, std::size_t j) {
    return ((n * out + o) * xs.h * 2 + i) * xs.w * 2 + j;
  };
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t i = 0; i < xs.h; ++i)
        for (std::size_t j = 0; j < xs.w; ++j)
          for (std::size_t o = 0; o < out; ++o)
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t bb = 0; bb < 2; ++bb)
                acc[idx(n, o, 2 * i + a, 2 * j + bb)] +=
                    static_cast<double>(x.at(n, c, i, j)) * w.at(c, o, a, bb);
  Tensor<T> y(Shape{xs.n, out, xs.h * 2, xs.w * 2});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < xs.h * 2; ++i)
        for (std::size_t j = 0; j < xs.w * 2; ++j)
          y.at(n, o, i, j) = static_cast<T>(acc[idx(n, o, i, j)] + b[o]);
  return y;
}

template <class T>
Tensor<T> maxpool(const Tensor<T>& x) {
  const Shape xs = x.shape();
  Tensor<T> y(Shape{xs.n, xs.c, xs.h / 2, xs.w / 2});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t i = 0; i < xs.h / 2; ++i)
        for (std::size_t j = 0; j < xs.w / 2; ++j) {
          T m = x.at(n, c, 2 * i, 2 * j);
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b)
              m = std::max(m, x.at(n, c, 2 * i + a, 2 * j + b));
          y.at(n, c, i, j) = m;
        }
  return y;
}

// ROC AUC by sweeping every distinct threshold and integrating the
// resulting curve with the trapezoid rule.
inline double auc_trapezoid(const std::vector<double>& pred,
                            const std::vector<int>& mask) {
  std::vector<double> th(pred);
  std::sort(th.begin(), th.end(), std::greater<double>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double pos = 0, neg = 0;
  for (int m : mask) (m ? pos : neg) += 1;
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] >= t) (mask[i] ? tp : fp) += 1;
    }
    pts.emplace_back(fp / neg, tp / pos);
  }
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].first - pts[i - 1].first) *
            (pts[i].second + pts[i - 1].second) / 2;
  }
  return area;
}

// Relative error between two gradient vectors (2-norm based).
inline double rel_error(const std::vector<double>& a,
                        const std::vector<double>& b) {
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(num) / den;
}

// Central finite differences of a scalar function over a flat buffer.
inline std::vector<double> numeric_grad(double* x, std::size_t n,
                                        const std::function<double()>& f,
                                        double h = 1e-4) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Scalar probe <r, y>; differentiating it w.r.t. anything gives the
// backward pass seeded with dy = r.
inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

inline std::vector<double> as_vec(const Tensor<double>& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

}  // namespace oracle
