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

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msfn/image.hpp"
#include "msfn/model/config.hpp"

namespace msfn {

struct SignalMap {
  FloatMap values;  // [0, 1], same size as the source image
  std::size_t source_h = 0;
  std::size_t source_w = 0;
  SignalKind kind = SignalKind::kDct;
};

struct DctParams {
  // First nine AC positions in zig-zag order, as (row u, column v).
  std::vector<std::pair<int, int>> positions = {
      {0, 1}, {1, 0}, {2, 0}, {1, 1}, {0, 2}, {0, 3}, {1, 2}, {2, 1}, {3, 0}};
  int hist_limit = 60;  // bins are the integers in [-hist_limit, hist_limit]
  int min_period = 2;
  int max_period = 16;
  double strength_threshold = 0.1;
  // Candidate periods need this fraction of the nonzero mass at |v| >= p.
  double min_tail = 0.1;
  int neighbourhood_radius = 4;  // in blocks, for the local histograms

  void validate() const;
  std::string describe() const;  // stable text, feeds the cache key
};

struct SbParams {
  int quant_levels = 3;
  double truncation = 1.0;
  int order = 4;
  int window = 64;
  int stride = 8;
  // Ridge added to the covariance diagonal, as a multiple of its mean
  // eigenvalue, on top of a fixed 1e-6.
  double shrinkage = 10.0;

  int feature_dim() const;
  void validate() const;
  std::string describe() const;
};

// ---- shared ---------------------------------------------------------------

FloatMap rgb_to_luma(const RgbImage& img);
// Replicates the last row/column up to the next multiple of m.
FloatMap pad_edge(const FloatMap& src, std::size_t m);
// In-place min-max to [0, 1]; an (almost) constant map becomes all zeros.
void normalize_minmax(FloatMap& m);

// ---- DCT double quantisation --------------------------------------------

struct BlockDct {
  std::size_t blocks_y = 0;
  std::size_t blocks_x = 0;
  std::vector<double> coef;  // (blocks_y, blocks_x, 8, 8)

  double at(std::size_t by, std::size_t bx, int u, int v) const {
    return coef[((by * blocks_x + bx) * 8 + static_cast<std::size_t>(u)) * 8 +
                static_cast<std::size_t>(v)];
  }
};

// Orthonormal type-II DCT of (luma - 128) per 8x8 block.
BlockDct block_dct8(const FloatMap& luma);
FloatMap block_idct8(const BlockDct& d);

// Integer-valued histogram; counts[i] is the count of value min_value + i.
struct Histogram {
  int min_value = 0;
  std::vector<double> counts;
};

Histogram coefficient_histogram(std::span<const double> values, int limit);

struct PeriodEstimate {
  int period = 0;  // 0 when no candidate qualifies
  double strength = 0.0;
  // Observed / expected mass per phase |v| mod period; phases below 1 are
  // the "forbidden" ones.
  std::vector<double> phase_gain;
};

PeriodEstimate dq_period_estimate(const Histogram& h, int min_period = 2,
                                  int max_period = 16, double min_tail = 0.1);

SignalMap dct_dq_map(const RgbImage& img, const DctParams& p = {});

// ---- Splicebuster-style co-occurrence ----------------------------------

enum class Axis { kHorizontal, kVertical };

FloatMap highpass_residual(const FloatMap& luma, Axis axis);
ByteMap quantize_truncate(const FloatMap& residual, int q, double t);

struct FeatureMatrix {
  std::size_t grid_y = 0;
  std::size_t grid_x = 0;
  std::size_t dim = 0;
  std::vector<double> data;  // (grid_y * grid_x, dim), row per window

  std::size_t rows() const { return grid_y * grid_x; }
  const double* row(std::size_t i) const { return data.data() + i * dim; }
};

// Horizontal runs are read from qh, vertical runs from qv.
FeatureMatrix cooccur_features(const ByteMap& qh, const ByteMap& qv,
                               const SbParams& p);
inline FeatureMatrix cooccur_features(const ByteMap& q, const SbParams& p) {
  return cooccur_features(q, q, p);
}

// Mahalanobis score per window (before painting); grid as in FeatureMatrix.
std::vector<double> sb_window_scores(const FeatureMatrix& f, double shrinkage);

SignalMap splicebuster_map(const RgbImage& img, const SbParams& p = {});

SignalMap compute_signal(SignalKind kind, const RgbImage& img,
                         const DctParams& dp = {}, const SbParams& sp = {});

}  // namespace msfn
