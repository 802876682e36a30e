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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "msfn/signals.hpp"

namespace msfn {

int SbParams::feature_dim() const {
  int d = 1;
  for (int i = 0; i < order; ++i) d *= quant_levels;
  return d;
}

void SbParams::validate() const {
  if (quant_levels < 2 || quant_levels > 255) {
    throw ConfigError("sb: quant_levels must be in [2, 255]");
  }
  if (order < 2) throw ConfigError("sb: co-occurrence order must be >= 2");
  if (feature_dim() > (1 << 16)) throw ConfigError("sb: feature dimension too large");
  if (!(truncation > 0)) throw ConfigError("sb: truncation must be positive");
  if (stride < 1 || window < stride || window % stride != 0) {
    throw ConfigError("sb: window must be a positive multiple of stride");
  }
  if (window < order) throw ConfigError("sb: window shorter than order");
  if (!(shrinkage >= 0)) throw ConfigError("sb: shrinkage must be >= 0");
}

std::string SbParams::describe() const {
  std::ostringstream os;
  os << "sb q=" << quant_levels << " T=" << truncation << " k=" << order
     << " W=" << window << " s=" << stride << " shrinkage=" << shrinkage;
  return os.str();
}

FloatMap highpass_residual(const FloatMap& luma, Axis axis) {
  static constexpr double kTaps[4] = {1.0, -3.0, 3.0, -1.0};
  const std::size_t w = luma.width, h = luma.height;
  FloatMap r(w, h);
  if (luma.empty()) return r;
  const bool horiz = axis == Axis::kHorizontal;
  const long n = static_cast<long>(horiz ? w : h);
  // Half-sample symmetric extension: -1 -> 0, n -> n-1, n+1 -> n-2.
  auto reflect = [n](long i) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return static_cast<std::size_t>(i);
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const long c = static_cast<long>(horiz ? x : y);
      double s = 0.0;
      for (int t = 0; t < 4; ++t) {
        const std::size_t j = reflect(c - 1 + t);
        s += kTaps[t] * (horiz ? luma.at(j, y) : luma.at(x, j));
      }
      r.at(x, y) = static_cast<float>(s);
    }
  }
  return r;
}

ByteMap quantize_truncate(const FloatMap& residual, int q, double t) {
  if (q < 2 || q > 255) throw ConfigError("quantize_truncate: q must be in [2, 255]");
  if (!(t > 0)) throw ConfigError("quantize_truncate: T must be positive");
  ByteMap out(residual.width, residual.height);
  for (std::size_t i = 0; i < residual.v.size(); ++i) {
    const double r = std::clamp(static_cast<double>(residual.v[i]), -t, t);
    const double level = std::floor((r + t) / (2 * t) * q);
    out.v[i] = static_cast<std::uint8_t>(std::min<double>(q - 1, level));
  }
  return out;
}

FeatureMatrix cooccur_features(const ByteMap& qh, const ByteMap& qv,
                               const SbParams& p) {
  p.validate();
  if (qh.width != qv.width || qh.height != qv.height) {
    throw ShapeError("cooccur_features: horizontal and vertical maps differ in size");
  }
  const std::size_t W = static_cast<std::size_t>(p.window);
  const std::size_t s = static_cast<std::size_t>(p.stride);
  const std::size_t k = static_cast<std::size_t>(p.order);
  const std::size_t q = static_cast<std::size_t>(p.quant_levels);
  if (qh.width < W || qh.height < W) {
    throw ShapeError("cooccur_features: window " + std::to_string(W) +
                     " larger than image " + std::to_string(qh.height) + "x" +
                     std::to_string(qh.width));
  }
  const std::size_t w = qh.width, h = qh.height;
  for (std::size_t i = 0; i < w * h; ++i) {
    if (qh.v[i] >= q || qv.v[i] >= q) {
      throw ShapeError("cooccur_features: quantised value out of range");
    }
  }
  // Run codes starting at each pixel.
  std::vector<std::uint32_t> ch(h * (w - k + 1)), cv((h - k + 1) * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x + k <= w; ++x) {
      std::uint32_t c = 0;
      for (std::size_t t = 0; t < k; ++t) c = c * q + qh.at(x + t, y);
      ch[y * (w - k + 1) + x] = c;
    }
  }
  for (std::size_t y = 0; y + k <= h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t c = 0;
      for (std::size_t t = 0; t < k; ++t) c = c * q + qv.at(x, y + t);
      cv[y * w + x] = c;
    }
  }

  FeatureMatrix f;
  f.grid_y = (h - W) / s + 1;
  f.grid_x = (w - W) / s + 1;
  f.dim = static_cast<std::size_t>(p.feature_dim());
  f.data.assign(f.rows() * f.dim, 0.0);
  const auto total = static_cast<double>(2 * W * (W - k + 1));
  for (std::size_t gy = 0; gy < f.grid_y; ++gy) {
    for (std::size_t gx = 0; gx < f.grid_x; ++gx) {
      double* row = f.data.data() + (gy * f.grid_x + gx) * f.dim;
      const std::size_t y0 = gy * s, x0 = gx * s;
      for (std::size_t y = y0; y < y0 + W; ++y) {
        const std::uint32_t* c = ch.data() + y * (w - k + 1) + x0;
        for (std::size_t x = 0; x + k <= W; ++x) row[c[x]] += 1.0;
      }
      for (std::size_t y = y0; y + k <= y0 + W; ++y) {
        const std::uint32_t* c = cv.data() + y * w + x0;
        for (std::size_t x = 0; x < W; ++x) row[c[x]] += 1.0;
      }
      for (std::size_t j = 0; j < f.dim; ++j) row[j] /= total;
    }
  }
  return f;
}

std::vector<double> sb_window_scores(const FeatureMatrix& f, double shrinkage) {
  const Eigen::Index n = static_cast<Eigen::Index>(f.rows());
  const Eigen::Index d = static_cast<Eigen::Index>(f.dim);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      x(i, j) = std::sqrt(f.row(static_cast<std::size_t>(i))[j]);
    }
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  if (x.cwiseAbs().maxCoeff() == 0.0) return out;  // every window identical

  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  const double ridge = 1e-6 + shrinkage * cov.trace() / static_cast<double>(d);
  cov.diagonal().array() += ridge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  const Eigen::MatrixXd sol = ldlt.solve(x.transpose());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = x.row(i).dot(sol.col(i));
    out[static_cast<std::size_t>(i)] = std::sqrt(std::max(0.0, m));
  }
  return out;
}

SignalMap splicebuster_map(const RgbImage& img, const SbParams& p) {
  p.validate();
  const std::size_t W = static_cast<std::size_t>(p.window);
  const std::size_t s = static_cast<std::size_t>(p.stride);
  const auto too_small = [&] {
    return ShapeError("image too small for Splicebuster analysis (" +
                      std::to_string(img.height) + "x" +
                      std::to_string(img.width) + ")");
  };
  if (img.width < W || img.height < W) throw too_small();
  if (((img.width - W) / s + 1) * ((img.height - W) / s + 1) < 8) throw too_small();

  const FloatMap luma = rgb_to_luma(img);
  const ByteMap qh = quantize_truncate(highpass_residual(luma, Axis::kHorizontal),
                                       p.quant_levels, p.truncation);
  const ByteMap qv = quantize_truncate(highpass_residual(luma, Axis::kVertical),
                                       p.quant_levels, p.truncation);
  const FeatureMatrix f = cooccur_features(qh, qv, p);
  const std::vector<double> score = sb_window_scores(f, p.shrinkage);

  // Paint window scores onto stride-sized cells: each cell is the mean of
  // the windows covering it; cells past the last window copy their nearest
  // covered neighbour.
  const std::size_t per = W / s;
  const std::size_t ny = (img.height + s - 1) / s, nx = (img.width + s - 1) / s;
  const std::size_t cov_y = f.grid_y + per - 1, cov_x = f.grid_x + per - 1;
  std::vector<double> acc(cov_y * cov_x, 0.0), cnt(cov_y * cov_x, 0.0);
  for (std::size_t gy = 0; gy < f.grid_y; ++gy) {
    for (std::size_t gx = 0; gx < f.grid_x; ++gx) {
      const double v = score[gy * f.grid_x + gx];
      for (std::size_t cy = gy; cy < gy + per; ++cy) {
        for (std::size_t cx = gx; cx < gx + per; ++cx) {
          acc[cy * cov_x + cx] += v;
          cnt[cy * cov_x + cx] += 1.0;
        }
      }
    }
  }
  FloatMap cells(nx, ny);
  for (std::size_t cy = 0; cy < ny; ++cy) {
    for (std::size_t cx = 0; cx < nx; ++cx) {
      const std::size_t i =
          std::min(cy, cov_y - 1) * cov_x + std::min(cx, cov_x - 1);
      cells.at(cx, cy) = static_cast<float>(acc[i] / cnt[i]);
    }
  }

  // Bilinear between cell centres (i + 0.5) * s - 0.5, clamped at the edges.
  auto taps = [s](std::size_t n, std::size_t out_len) {
    std::vector<std::pair<std::size_t, double>> t(out_len);
    for (std::size_t o = 0; o < out_len; ++o) {
      double c = (static_cast<double>(o) + 0.5) / static_cast<double>(s) - 0.5;
      c = std::clamp(c, 0.0, static_cast<double>(n - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(c));
      t[o] = {i0, c - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(ny, img.height), tx = taps(nx, img.width);
  SignalMap out;
  out.kind = SignalKind::kSb;
  out.source_h = img.height;
  out.source_w = img.width;
  out.values = FloatMap(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    const auto [y0, fy] = ty[y];
    const std::size_t y1 = std::min(y0 + 1, ny - 1);
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto [x0, fx] = tx[x];
      const std::size_t x1 = std::min(x0 + 1, nx - 1);
      const double top = cells.at(x0, y0) * (1 - fx) + cells.at(x1, y0) * fx;
      const double bot = cells.at(x0, y1) * (1 - fx) + cells.at(x1, y1) * fx;
      out.values.at(x, y) = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  normalize_minmax(out.values);
  return out;
}

}  // namespace msfn
