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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "msfn/signals.hpp"

namespace msfn {
namespace {

using Basis = std::array<std::array<double, 8>, 8>;

const Basis& dct_basis() {
  static const Basis b = [] {
    Basis m{};
    for (int u = 0; u < 8; ++u) {
      const double a = u == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
      for (int x = 0; x < 8; ++x) {
        m[u][x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return m;
  }();
  return b;
}

// Core of dq_period_estimate on a raw count array over [-limit, limit].
// `cz` is scratch of the same length. Gains of the winner go to *gain.
double estimate(const double* counts, int limit, int pmin, int pmax,
                double min_tail, std::vector<double>& cz,
                std::vector<double>& prefix, std::vector<double>& nz_prefix,
                int* period, std::vector<double>* gain) {
  const int n = 2 * limit + 1;
  cz.assign(counts, counts + n);
  cz[static_cast<std::size_t>(limit)] = 0.0;  // the zero bin says nothing
  double total = 0.0;
  prefix.assign(static_cast<std::size_t>(n) + 1, 0.0);
  nz_prefix.assign(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    total += cz[i];
    prefix[i + 1] = prefix[i] + cz[i];
    nz_prefix[i + 1] = nz_prefix[i] + (i != limit ? 1.0 : 0.0);
  }
  *period = 0;
  if (gain) gain->clear();
  if (total <= 0.0) return 0.0;

  double best = 0.0;
  std::vector<double> obs, expd, g;
  for (int p = pmin; p <= pmax; ++p) {
    obs.assign(static_cast<std::size_t>(p), 0.0);
    expd.assign(static_cast<std::size_t>(p), 0.0);
    const int lo = -(p / 2);
    double tail = 0.0;
    for (int i = 0; i < n; ++i) {
      const int v = i - limit;
      if (v == 0) continue;
      const int a = std::clamp(i + lo, 0, n);
      const int b = std::clamp(i + lo + p, 0, n);
      const double s = prefix[b] - prefix[a];
      const double c = nz_prefix[b] - nz_prefix[a];
      const int r = std::abs(v) % p;
      obs[r] += cz[i];
      expd[r] += s / std::max(c, 1.0);
      if (std::abs(v) >= p) tail += cz[i];
    }
    g.assign(static_cast<std::size_t>(p), 0.0);
    double gs = 0.0;
    for (int r = 0; r < p; ++r) {
      g[r] = expd[r] > 0.0 ? obs[r] / expd[r] : 0.0;
      gs += g[r];
    }
    double strength = 0.0;
    for (int r = 0; r < p; ++r) {
      const double f = gs > 0.0 ? g[r] / gs : 1.0 / p;
      strength += std::max(0.0, 1.0 / p - f);
    }
    strength *= static_cast<double>(p) / (p - 1);
    const bool ok = g[0] >= 1.0 && tail >= min_tail * total;
    if (ok && strength > best + 1e-12) {
      best = strength;
      *period = p;
      if (gain) *gain = g;
    }
  }
  return best;
}

}  // namespace

void DctParams::validate() const {
  if (positions.empty()) throw ConfigError("dct: no coefficient positions");
  for (const auto& [u, v] : positions) {
    if (u < 0 || u > 7 || v < 0 || v > 7 || (u == 0 && v == 0)) {
      throw ConfigError("dct: positions must be AC entries of an 8x8 block");
    }
  }
  if (hist_limit < 1) throw ConfigError("dct: hist_limit must be positive");
  if (min_period < 2 || max_period < min_period) {
    throw ConfigError("dct: candidate periods must satisfy 2 <= min <= max");
  }
  if (neighbourhood_radius < 0) throw ConfigError("dct: negative radius");
}

std::string DctParams::describe() const {
  std::ostringstream os;
  os << "dct positions=";
  for (std::size_t i = 0; i < positions.size(); ++i) {
    os << (i ? "," : "") << positions[i].first << positions[i].second;
  }
  os << " hist=" << hist_limit << " periods=" << min_period << "-"
     << max_period << " threshold=" << strength_threshold
     << " min_tail=" << min_tail << " radius=" << neighbourhood_radius;
  return os.str();
}

FloatMap rgb_to_luma(const RgbImage& img) {
  if (img.empty()) throw ShapeError("rgb_to_luma: empty image");
  FloatMap y(img.width, img.height);
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    const std::uint8_t* p = img.pixels.data() + 3 * i;
    y.v[i] = static_cast<float>(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
  }
  return y;
}

FloatMap pad_edge(const FloatMap& src, std::size_t m) {
  const std::size_t w = (src.width + m - 1) / m * m;
  const std::size_t h = (src.height + m - 1) / m * m;
  if (w == src.width && h == src.height) return src;
  FloatMap out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(y, src.height - 1);
    for (std::size_t x = 0; x < w; ++x) {
      out.at(x, y) = src.at(std::min(x, src.width - 1), sy);
    }
  }
  return out;
}

void normalize_minmax(FloatMap& m) {
  if (m.v.empty()) return;
  const auto [lo, hi] = std::minmax_element(m.v.begin(), m.v.end());
  const double a = *lo;
  const double range = static_cast<double>(*hi) - a;
  if (!(range >= 1e-9)) {
    std::fill(m.v.begin(), m.v.end(), 0.0f);
    return;
  }
  for (float& v : m.v) {
    v = static_cast<float>(std::clamp((v - a) / range, 0.0, 1.0));
  }
}

BlockDct block_dct8(const FloatMap& luma) {
  if (luma.width % 8 != 0 || luma.height % 8 != 0 || luma.empty()) {
    throw ShapeError("block_dct8: dimensions must be nonzero multiples of 8, got " +
                     std::to_string(luma.height) + "x" +
                     std::to_string(luma.width));
  }
  const Basis& c = dct_basis();
  BlockDct d;
  d.blocks_y = luma.height / 8;
  d.blocks_x = luma.width / 8;
  d.coef.resize(d.blocks_y * d.blocks_x * 64);
  double blk[8][8], tmp[8][8];
  for (std::size_t by = 0; by < d.blocks_y; ++by) {
    for (std::size_t bx = 0; bx < d.blocks_x; ++bx) {
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          blk[y][x] = static_cast<double>(luma.at(bx * 8 + x, by * 8 + y)) - 128.0;
        }
      }
      // rows then columns
      for (int y = 0; y < 8; ++y) {
        for (int v = 0; v < 8; ++v) {
          double s = 0.0;
          for (int x = 0; x < 8; ++x) s += c[v][x] * blk[y][x];
          tmp[y][v] = s;
        }
      }
      double* out = d.coef.data() + (by * d.blocks_x + bx) * 64;
      for (int u = 0; u < 8; ++u) {
        for (int v = 0; v < 8; ++v) {
          double s = 0.0;
          for (int y = 0; y < 8; ++y) s += c[u][y] * tmp[y][v];
          out[u * 8 + v] = s;
        }
      }
    }
  }
  return d;
}

FloatMap block_idct8(const BlockDct& d) {
  const Basis& c = dct_basis();
  FloatMap out(d.blocks_x * 8, d.blocks_y * 8);
  double tmp[8][8];
  for (std::size_t by = 0; by < d.blocks_y; ++by) {
    for (std::size_t bx = 0; bx < d.blocks_x; ++bx) {
      const double* in = d.coef.data() + (by * d.blocks_x + bx) * 64;
      for (int y = 0; y < 8; ++y) {
        for (int v = 0; v < 8; ++v) {
          double s = 0.0;
          for (int u = 0; u < 8; ++u) s += c[u][y] * in[u * 8 + v];
          tmp[y][v] = s;
        }
      }
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          double s = 0.0;
          for (int v = 0; v < 8; ++v) s += c[v][x] * tmp[y][v];
          out.at(bx * 8 + x, by * 8 + y) = static_cast<float>(s + 128.0);
        }
      }
    }
  }
  return out;
}

Histogram coefficient_histogram(std::span<const double> values, int limit) {
  Histogram h{-limit, std::vector<double>(2 * static_cast<std::size_t>(limit) + 1)};
  for (double x : values) {
    const long r = std::lround(x);
    if (r >= -limit && r <= limit) h.counts[static_cast<std::size_t>(r + limit)] += 1;
  }
  return h;
}

PeriodEstimate dq_period_estimate(const Histogram& h, int min_period,
                                  int max_period, double min_tail) {
  PeriodEstimate out;
  if (h.counts.empty()) return out;
  if (min_period < 2 || max_period < min_period) {
    throw ConfigError("dq_period_estimate: bad period range");
  }
  // Re-centre onto a symmetric range so phases fold on |v|.
  const int lo = h.min_value;
  const int hi = h.min_value + static_cast<int>(h.counts.size()) - 1;
  const int limit = std::max(std::abs(lo), std::abs(hi));
  std::vector<double> sym(2 * static_cast<std::size_t>(limit) + 1, 0.0);
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    sym[static_cast<std::size_t>(lo + static_cast<int>(i) + limit)] += h.counts[i];
  }
  std::vector<double> cz, prefix, nzp;
  out.strength = estimate(sym.data(), limit, min_period, max_period, min_tail,
                          cz, prefix, nzp, &out.period, &out.phase_gain);
  return out;
}

SignalMap dct_dq_map(const RgbImage& img, const DctParams& p) {
  p.validate();
  if (img.width < 32 || img.height < 32) {
    throw ShapeError("image too small for block analysis (" +
                     std::to_string(img.height) + "x" +
                     std::to_string(img.width) + ", need 32x32)");
  }
  const BlockDct d = block_dct8(pad_edge(rgb_to_luma(img), 8));
  const std::size_t by = d.blocks_y, bx = d.blocks_x, nb = by * bx;
  const int L = p.hist_limit;
  const std::size_t nbins = 2 * static_cast<std::size_t>(L) + 1;
  const int R = p.neighbourhood_radius;

  std::vector<double> score(nb, 0.0);
  std::vector<double> c(nb);
  std::vector<int> bin(nb);
  // 2-D prefix sums of one-hot bin indicators: (by+1, bx+1, nbins).
  std::vector<double> ps((by + 1) * (bx + 1) * nbins);
  std::vector<double> local(nbins), cz, prefix, nzp;
  auto P = [&](std::size_t y, std::size_t x) {
    return ps.data() + (y * (bx + 1) + x) * nbins;
  };

  for (const auto& [u, v] : p.positions) {
    for (std::size_t i = 0; i < nb; ++i) c[i] = d.coef[i * 64 + u * 8 + v];
    const PeriodEstimate global = dq_period_estimate(
        coefficient_histogram(c, L), p.min_period, p.max_period, p.min_tail);
    const int q = global.strength >= p.strength_threshold ? global.period : 1;

    // Blocks whose rounded coefficient lands on a depleted phase.
    if (q > 1) {
      for (std::size_t i = 0; i < nb; ++i) {
        const long r = std::lround(c[i]);
        if (r != 0 && std::abs(r) <= L &&
            global.phase_gain[static_cast<std::size_t>(std::abs(r) % q)] < 1.0) {
          score[i] += 1.0;
        }
      }
    }

    // Local periodicity of the requantised coefficients.
    for (std::size_t i = 0; i < nb; ++i) {
      const long k = std::lround(c[i] / q);
      bin[i] = (k >= -L && k <= L) ? static_cast<int>(k + L) : -1;
    }
    std::fill(ps.begin(), ps.end(), 0.0);
    for (std::size_t y = 0; y < by; ++y) {
      for (std::size_t x = 0; x < bx; ++x) {
        double* o = P(y + 1, x + 1);
        const double* a = P(y, x + 1);
        const double* b = P(y + 1, x);
        const double* e = P(y, x);
        for (std::size_t t = 0; t < nbins; ++t) o[t] = a[t] + b[t] - e[t];
        if (bin[y * bx + x] >= 0) o[bin[y * bx + x]] += 1.0;
      }
    }
    for (std::size_t y = 0; y < by; ++y) {
      const std::size_t y0 = y >= static_cast<std::size_t>(R) ? y - R : 0;
      const std::size_t y1 = std::min(by, y + R + 1);
      for (std::size_t x = 0; x < bx; ++x) {
        const std::size_t x0 = x >= static_cast<std::size_t>(R) ? x - R : 0;
        const std::size_t x1 = std::min(bx, x + R + 1);
        const double *a = P(y1, x1), *b = P(y0, x1), *e = P(y1, x0),
                     *f = P(y0, x0);
        for (std::size_t t = 0; t < nbins; ++t) local[t] = a[t] - b[t] - e[t] + f[t];
        int unused = 0;
        score[y * bx + x] += estimate(local.data(), L, p.min_period,
                                      p.max_period, p.min_tail, cz, prefix,
                                      nzp, &unused, nullptr);
      }
    }
  }

  FloatMap blocks(bx, by);
  for (std::size_t i = 0; i < nb; ++i) {
    blocks.v[i] = static_cast<float>(score[i] / static_cast<double>(p.positions.size()));
  }
  normalize_minmax(blocks);

  SignalMap out;
  out.kind = SignalKind::kDct;
  out.source_h = img.height;
  out.source_w = img.width;
  out.values = FloatMap(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      out.values.at(x, y) = blocks.at(x / 8, y / 8);
    }
  }
  return out;
}

SignalMap compute_signal(SignalKind kind, const RgbImage& img,
                         const DctParams& dp, const SbParams& sp) {
  return kind == SignalKind::kDct ? dct_dq_map(img, dp)
                                  : splicebuster_map(img, sp);
}

}  // namespace msfn
