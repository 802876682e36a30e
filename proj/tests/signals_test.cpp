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

#include <gtest/gtest.h>

#include <random>

#include "msfn/data.hpp"
#include "msfn/signals.hpp"
#include "signal_oracles.hpp"

namespace msfn {
namespace {

RgbImage random_image(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  RgbImage im(w, h);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(d(rng));
  return im;
}

RgbImage flat_image(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g,
                    std::uint8_t b) {
  RgbImage im(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    im.pixels[3 * i] = r;
    im.pixels[3 * i + 1] = g;
    im.pixels[3 * i + 2] = b;
  }
  return im;
}

FloatMap random_map(std::size_t w, std::size_t h, std::mt19937_64& rng,
                    double lo = 0, double hi = 255) {
  FloatMap m(w, h);
  std::uniform_real_distribution<double> d(lo, hi);
  for (float& v : m.v) v = static_cast<float>(d(rng));
  return m;
}

void expect_unit_range(const SignalMap& m, const RgbImage& img) {
  ASSERT_EQ(m.values.width, img.width);
  ASSERT_EQ(m.values.height, img.height);
  EXPECT_EQ(m.source_w, img.width);
  EXPECT_EQ(m.source_h, img.height);
  for (float v : m.values.v) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Luma, WhiteAndRed) {
  EXPECT_FLOAT_EQ(rgb_to_luma(flat_image(1, 1, 255, 255, 255)).v[0], 255.0f);
  EXPECT_NEAR(rgb_to_luma(flat_image(1, 1, 255, 0, 0)).v[0], 76.245, 1e-5);
}

TEST(Luma, MatchesFormulaOnRandomImages) {
  std::mt19937_64 rng(1);
  const RgbImage im = random_image(37, 23, rng);
  const FloatMap y = rgb_to_luma(im);
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    const double r = im.pixels[3 * i], g = im.pixels[3 * i + 1], b = im.pixels[3 * i + 2];
    ASSERT_EQ(y.v[i], static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b));
  }
  EXPECT_THROW(rgb_to_luma(RgbImage()), ShapeError);
}

TEST(BlockDct, ConstantBlocks) {
  FloatMap m(8, 8, 128.0f);
  for (double c : block_dct8(m).coef) EXPECT_NEAR(c, 0.0, 1e-12);
  m = FloatMap(8, 8, 136.0f);
  const BlockDct d = block_dct8(m);
  EXPECT_NEAR(d.at(0, 0, 0, 0), 64.0, 1e-9);
  for (std::size_t i = 1; i < 64; ++i) EXPECT_NEAR(d.coef[i], 0.0, 1e-9);
}

TEST(BlockDct, MatchesDirectSumOn100Instances) {
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t bw = 1 + t % 3, bh = 1 + (t / 3) % 2;
    const FloatMap l = random_map(8 * bw, 8 * bh, rng);
    const BlockDct d = block_dct8(l);
    for (std::size_t by = 0; by < bh; ++by)
      for (std::size_t bx = 0; bx < bw; ++bx)
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v)
            worst = std::max(worst, std::abs(d.at(by, bx, u, v) -
                                             oracle::dct_coef(l, by, bx, u, v)));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(BlockDct, RoundTrip) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const FloatMap l = random_map(16, 8, rng);
    const FloatMap back = block_idct8(block_dct8(l));
    for (std::size_t i = 0; i < l.v.size(); ++i) ASSERT_NEAR(back.v[i], l.v[i], 1e-3);
  }
}

TEST(BlockDct, RejectsNonMultipleOf8) {
  EXPECT_THROW(block_dct8(FloatMap(12, 8)), ShapeError);
  EXPECT_THROW(block_dct8(FloatMap(8, 9)), ShapeError);
}

Histogram histogram_of(const std::vector<long>& values, int limit = 60) {
  std::vector<double> d(values.begin(), values.end());
  return coefficient_histogram(d, limit);
}

TEST(PeriodEstimate, EmptyHistogram) {
  const PeriodEstimate e = dq_period_estimate(Histogram{});
  EXPECT_EQ(e.period, 0);
  EXPECT_EQ(e.strength, 0.0);
  const PeriodEstimate z = dq_period_estimate(Histogram{-60, std::vector<double>(121, 0.0)});
  EXPECT_EQ(z.period, 0);
  EXPECT_EQ(z.strength, 0.0);
}

TEST(PeriodEstimate, MultiplesOfThree) {
  std::mt19937_64 rng(4);
  std::geometric_distribution<int> g(0.08);
  std::vector<long> v;
  for (int i = 0; i < 20000; ++i) {
    const long k = std::min(g(rng), 19);
    v.push_back((i % 2 ? 3 : -3) * k);
  }
  const PeriodEstimate e = dq_period_estimate(histogram_of(v));
  EXPECT_EQ(e.period, 3);
  EXPECT_GT(e.strength, 0.95);
}

TEST(PeriodEstimate, FlatHistogramsStayBelowThreshold) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<long> d(-60, 60);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<long> v(5000);
    for (long& x : v) x = d(rng);
    worst = std::max(worst, dq_period_estimate(histogram_of(v)).strength);
  }
  EXPECT_LE(worst, DctParams{}.strength_threshold);
}

TEST(PeriodEstimate, DetectsDoubleQuantization7Then4) {
  std::mt19937_64 rng(6);
  int hits = 0;
  for (int t = 0; t < 100; ++t) {
    const double scale = std::uniform_real_distribution<double>(12, 30)(rng);
    std::exponential_distribution<double> ex(1.0 / scale);
    std::vector<long> v;
    for (int i = 0; i < 4000; ++i) {
      const double x = (i % 2 ? 1 : -1) * ex(rng);
      const double first = std::round(x / 7) * 7;
      v.push_back(std::lround(first / 4));
    }
    const PeriodEstimate e = dq_period_estimate(histogram_of(v));
    hits += e.strength >= DctParams{}.strength_threshold && e.period > 1;
  }
  EXPECT_GE(hits, 90);
}

TEST(DctMap, TooSmall) {
  try {
    dct_dq_map(flat_image(31, 64, 1, 2, 3));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("image too small for block analysis"),
              std::string::npos);
  }
}

TEST(DctMap, ConstantImageIsAllZero) {
  const RgbImage im = flat_image(64, 48, 90, 90, 90);
  const SignalMap m = dct_dq_map(im);
  expect_unit_range(m, im);
  for (float v : m.values.v) EXPECT_EQ(v, 0.0f);
}

TEST(DctMap, OddSizesAndDeterminism) {
  std::mt19937_64 rng(7);
  const RgbImage im = jpeg_roundtrip(random_image(100, 75, rng), 80);
  const SignalMap a = dct_dq_map(im), b = dct_dq_map(im);
  expect_unit_range(a, im);
  EXPECT_EQ(a.values.v, b.values.v);
  EXPECT_EQ(a.kind, SignalKind::kDct);
  // Nearest-neighbour upsampling: constant inside every 8x8 block.
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < im.width; ++x)
      ASSERT_EQ(a.values.at(x, y), a.values.at(x / 8 * 8, y / 8 * 8));
}

TEST(DctMap, SingleCompressedNoiseIsQuiet) {
  std::mt19937_64 rng(8);
  int pass = 0;
  for (int t = 0; t < 50; ++t) {
    const RgbImage im = jpeg_roundtrip(random_image(256, 256, rng), 90);
    const SignalMap m = dct_dq_map(im);
    pass += oracle::stddev(m.values.v) < 0.25 &&
            oracle::largest_region_fraction(m.values, 0.5) <= 0.05;
  }
  EXPECT_GE(pass, 40);
}

TEST(DctMap, LocalisesQualityMismatchSplices) {
  int hit = 0, ctrl = 0;
  for (int t = 0; t < 50; ++t) {
    const auto g = data::generate_splice(data::SpliceKind::kQuality, 100 + t);
    hit += oracle::inside_above_outside(dct_dq_map(g.sample.image).values, g.sample.mask);
    ctrl += oracle::inside_above_outside(dct_dq_map(g.control).values, g.sample.mask);
  }
  EXPECT_GE(hit, 40);
  EXPECT_LE(ctrl, 30);
}

TEST(Highpass, ConstantAndRamp) {
  FloatMap c(20, 10, 77.0f);
  for (float v : highpass_residual(c, Axis::kHorizontal).v) EXPECT_EQ(v, 0.0f);
  for (float v : highpass_residual(c, Axis::kVertical).v) EXPECT_EQ(v, 0.0f);
  FloatMap r(20, 10);
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 0; x < 20; ++x) r.at(x, y) = static_cast<float>(3 * x + 1);
  const FloatMap h = highpass_residual(r, Axis::kHorizontal);
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 1; x + 2 < 20; ++x) EXPECT_EQ(h.at(x, y), 0.0f);
  for (float v : highpass_residual(r, Axis::kVertical).v) EXPECT_EQ(v, 0.0f);
}

TEST(Highpass, MatchesSlidingOracle) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    const FloatMap l = random_map(1 + t % 13, 1 + t % 7, rng);
    EXPECT_EQ(highpass_residual(l, Axis::kHorizontal).v, oracle::highpass(l, true).v);
    EXPECT_EQ(highpass_residual(l, Axis::kVertical).v, oracle::highpass(l, false).v);
  }
}

TEST(Quantize, Examples) {
  FloatMap r(2, 1);
  r.v = {0.0f, 10.0f};
  const ByteMap q = quantize_truncate(r, 3, 1.0);
  EXPECT_EQ(q.v[0], 1);
  EXPECT_EQ(q.v[1], 2);
  r.v = {-10.0f, -1.0f};
  EXPECT_EQ(quantize_truncate(r, 3, 1.0).v, (std::vector<std::uint8_t>{0, 0}));
  EXPECT_THROW(quantize_truncate(r, 1, 1.0), ConfigError);
}

TEST(Quantize, MatchesClosedFormBins) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 100; ++t) {
    const int q = 2 + t % 6;
    const double T = 0.5 + (t % 4);
    const FloatMap r = random_map(16, 16, rng, -2 * T, 2 * T);
    const ByteMap got = quantize_truncate(r, q, T);
    for (std::size_t i = 0; i < r.v.size(); ++i) {
      ASSERT_EQ(got.v[i], oracle::quant_level(r.v[i], q, T)) << r.v[i];
    }
  }
}

TEST(Cooccur, ConstantMapAndDimension) {
  SbParams p;
  p.window = 16;
  EXPECT_EQ(p.feature_dim(), 81);
  const ByteMap q(32, 32, 1);
  const FeatureMatrix f = cooccur_features(q, p);
  EXPECT_EQ(f.dim, 81u);
  EXPECT_EQ(f.rows(), 9u);
  const std::size_t middle = 1 + 3 + 9 + 27;
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t j = 0; j < f.dim; ++j) EXPECT_EQ(f.row(r)[j], j == middle ? 1.0 : 0.0);
}

TEST(Cooccur, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    SbParams p;
    p.quant_levels = 2 + t % 3;
    p.order = 2 + t % 3;
    p.stride = 4;
    p.window = 8 + 4 * (t % 3);
    const std::size_t w = p.window + 4 * (t % 4), h = p.window + 4 * (t % 2) + 3;
    ByteMap qh(w, h), qv(w, h);
    std::uniform_int_distribution<int> d(0, p.quant_levels - 1);
    for (auto& v : qh.v) v = static_cast<std::uint8_t>(d(rng));
    for (auto& v : qv.v) v = static_cast<std::uint8_t>(d(rng));
    const FeatureMatrix f = cooccur_features(qh, qv, p);
    ASSERT_EQ(f.grid_x, (w - p.window) / 4 + 1);
    ASSERT_EQ(f.grid_y, (h - p.window) / 4 + 1);
    for (std::size_t gy = 0; gy < f.grid_y; ++gy)
      for (std::size_t gx = 0; gx < f.grid_x; ++gx) {
        const auto ref = oracle::cooccur_window(qh, qv, p.quant_levels, p.order, gx * 4,
                                                gy * 4, p.window);
        const double* row = f.row(gy * f.grid_x + gx);
        ASSERT_EQ(std::vector<double>(row, row + f.dim), ref);
      }
  }
}

TEST(Cooccur, WindowLargerThanImage) {
  EXPECT_THROW(cooccur_features(ByteMap(63, 100, 0), SbParams{}), ShapeError);
}

TEST(SbParams, Validation) {
  SbParams p;
  p.window = 60;
  EXPECT_THROW(p.validate(), ConfigError);
  p = SbParams{};
  p.quant_levels = 1;
  EXPECT_THROW(p.validate(), ConfigError);
  p = SbParams{};
  p.order = 1;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(SbMap, TooSmall) {
  try {
    splicebuster_map(flat_image(70, 90, 5, 5, 5));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("image too small for Splicebuster analysis"),
              std::string::npos);
  }
  EXPECT_THROW(splicebuster_map(flat_image(50, 200, 5, 5, 5)), ShapeError);
}

TEST(SbMap, ConstantImageIsAllZero) {
  const RgbImage im = flat_image(128, 96, 10, 200, 30);
  const SignalMap m = splicebuster_map(im);
  expect_unit_range(m, im);
  for (float v : m.values.v) EXPECT_EQ(v, 0.0f);
}

TEST(SbMap, OddSizesAndDeterminism) {
  nn::Rng r(3);
  const RgbImage im = data::procedural_image(r, {136});
  const RgbImage crop = resize_bilinear(im, 131, 101);
  const SignalMap a = splicebuster_map(crop), b = splicebuster_map(crop);
  expect_unit_range(a, crop);
  EXPECT_EQ(a.values.v, b.values.v);
  EXPECT_EQ(a.kind, SignalKind::kSb);
  float lo = 1, hi = 0;
  for (float v : a.values.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_EQ(lo, 0.0f);
  EXPECT_EQ(hi, 1.0f);
}

TEST(SbMap, LocalisesTextureMismatchSplices) {
  int hit = 0, ctrl = 0;
  for (int t = 0; t < 50; ++t) {
    const auto g = data::generate_splice(data::SpliceKind::kTexture, 200 + t);
    hit += oracle::inside_above_outside(splicebuster_map(g.sample.image).values, g.sample.mask);
    ctrl += oracle::inside_above_outside(splicebuster_map(g.control).values, g.sample.mask);
  }
  EXPECT_GE(hit, 45);
  EXPECT_LE(ctrl, 30);
}

TEST(Signals, ComputeSignalDispatch) {
  nn::Rng r(4);
  const RgbImage im = data::procedural_image(r, {96});
  EXPECT_EQ(compute_signal(SignalKind::kDct, im).values.v, dct_dq_map(im).values.v);
  EXPECT_EQ(compute_signal(SignalKind::kSb, im).values.v, splicebuster_map(im).values.v);
}

}  // namespace
}  // namespace msfn
