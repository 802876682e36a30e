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

#include "msfn/data.hpp"

namespace msfn::data {
namespace {

constexpr double kPi = std::numbers::pi;

struct Extent {
  double ex, ey;  // half extents
};

RgbImage compress(const RgbImage& img, const std::optional<int>& q) {
  return q ? jpeg_roundtrip(img, *q) : img;
}

bool point_in_polygon(const std::vector<std::pair<double, double>>& poly,
                      double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

}  // namespace

const char* to_string(RegionShape s) {
  switch (s) {
    case RegionShape::kRectangle: return "rectangle";
    case RegionShape::kEllipse: return "ellipse";
    case RegionShape::kPolygon: return "polygon";
  }
  return "?";
}

RegionShape parse_region_shape(const std::string& s) {
  if (s == "rectangle") return RegionShape::kRectangle;
  if (s == "ellipse") return RegionShape::kEllipse;
  if (s == "polygon") return RegionShape::kPolygon;
  throw ConfigError("unknown region shape '" + s + "'");
}

void SpliceParams::validate() const {
  if (!(area_min > 0.0 && area_max < 0.5 && area_min <= area_max)) {
    throw ConfigError("splice area fraction range must lie in (0, 0.5)");
  }
  for (const auto& q : {q_host, q_donor, q_final}) {
    if (q && (*q < 30 || *q > 100)) {
      throw ConfigError("splice JPEG qualities must be in [30, 100]");
    }
  }
}

ByteMap splice_region(std::size_t w, std::size_t h, const SpliceParams& p,
                      nn::Rng& rng) {
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  const double area = rng.uniform(p.area_min, p.area_max) * W * H;
  const double aspect = rng.uniform(0.5, 2.0);

  // Polygon outline in unit-radius coordinates, drawn up front so the draw
  // order does not depend on the fit retry below.
  std::vector<std::pair<double, double>> unit;
  double unit_area = 0.0, ux = 0.0, uy = 0.0;
  if (p.shape == RegionShape::kPolygon) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(5, 9));
    // Jittered angles keep the outline star-shaped and reasonably round.
    const double step = 2 * kPi / static_cast<double>(n);
    const double phase = rng.uniform(0.0, step);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = phase + step * (static_cast<double>(i) + rng.uniform(-0.3, 0.3));
      const double r = rng.uniform(0.6, 1.0);
      unit.emplace_back(r * std::cos(a), r * std::sin(a));
    }
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      unit_area += unit[j].first * unit[i].second - unit[i].first * unit[j].second;
      ux = std::max(ux, std::abs(unit[i].first));
      uy = std::max(uy, std::abs(unit[i].second));
    }
    unit_area = std::abs(unit_area) / 2;
  }

  auto extent = [&](double r) -> Extent {
    switch (p.shape) {
      case RegionShape::kRectangle: {
        const double rw = std::sqrt(area * r);
        return {rw / 2, area / rw / 2};
      }
      case RegionShape::kEllipse: {
        const double a = std::sqrt(area / kPi * r);
        return {a, area / kPi / a};
      }
      case RegionShape::kPolygon: {
        const double s = std::sqrt(area / unit_area);
        return {s * ux * std::sqrt(r), s * uy / std::sqrt(r)};
      }
    }
    return {0, 0};
  };
  double r = aspect;
  Extent e = extent(r);
  if (2 * e.ex > W || 2 * e.ey > H) {
    r = 1.0;
    e = extent(r);
    if (2 * e.ex > W || 2 * e.ey > H) {
      throw ConfigError("cannot fit a splice region of area fraction " +
                        std::to_string(area / (W * H)) + " in " +
                        std::to_string(h) + "x" + std::to_string(w));
    }
  }
  // Centre on the 8-px grid so the region keeps JPEG-block structure.
  double cx = rng.uniform(e.ex, W - e.ex);
  double cy = rng.uniform(e.ey, H - e.ey);
  cx = 8 * std::round(cx / 8);
  cy = 8 * std::round(cy / 8);

  std::vector<std::pair<double, double>> poly;
  if (p.shape == RegionShape::kPolygon) {
    const double s = std::sqrt(area / unit_area);
    for (const auto& [x, y] : unit) {
      poly.emplace_back(cx + s * x * std::sqrt(r), cy + s * y / std::sqrt(r));
    }
  }
  ByteMap m(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const double py = static_cast<double>(y) + 0.5;
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      bool in = false;
      switch (p.shape) {
        case RegionShape::kRectangle:
          in = std::abs(px - cx) < e.ex && std::abs(py - cy) < e.ey;
          break;
        case RegionShape::kEllipse: {
          const double dx = (px - cx) / e.ex, dy = (py - cy) / e.ey;
          in = dx * dx + dy * dy < 1.0;
          break;
        }
        case RegionShape::kPolygon:
          in = point_in_polygon(poly, px, py);
          break;
      }
      m.at(x, y) = in ? 1 : 0;
    }
  }
  return m;
}

Sample synth_splice(const RgbImage& host, const RgbImage& donor,
                    const SpliceParams& p, RgbImage* control) {
  p.validate();
  if (host.width < 128 || host.height < 128 || donor.width < 128 || donor.height < 128) {
    throw ShapeError("synth_splice: host and donor must be at least 128x128");
  }
  if (donor.width != host.width || donor.height != host.height) {
    throw ShapeError("synth_splice: donor must match the host size");
  }
  nn::Rng rng(p.seed);
  const RgbImage h = compress(host, p.q_host);
  const RgbImage d = compress(donor, p.q_donor);
  Sample s;
  s.mask = splice_region(host.width, host.height, p, rng);
  RgbImage comp = h;
  for (std::size_t i = 0; i < s.mask.v.size(); ++i) {
    if (s.mask.v[i]) std::copy_n(d.pixels.data() + 3 * i, 3, comp.pixels.data() + 3 * i);
  }
  s.image = compress(comp, p.q_final);
  if (control) *control = compress(h, p.q_final);
  s.id = "splice-" + std::to_string(p.seed);
  return s;
}

RgbImage procedural_image(nn::Rng& rng, const ProceduralOptions& o) {
  const std::size_t n = o.size;
  if (n == 0) throw ShapeError("procedural_image: zero size");
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> img(n * n * 3);
  double base[3];
  for (double& b : base) b = rng.uniform(40, 200);
  for (std::size_t i = 0; i < n * n; ++i) {
    for (int c = 0; c < 3; ++c) img[3 * i + c] = base[c];
  }
  for (int k = 0; k < 4; ++k) {
    const double fx = rng.uniform(0.3, 3), fy = rng.uniform(0.3, 3);
    const double ph = rng.uniform(0, 6.28);
    double amp[3];
    for (double& a : amp) a = rng.uniform(10, 40);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double s = std::sin(2 * kPi * (fx * x * inv + fy * y * inv) + ph);
        for (int c = 0; c < 3; ++c) img[3 * (y * n + x) + c] += amp[c] * s;
      }
    }
  }
  const auto blobs = rng.uniform_int(3, 7);
  for (std::int64_t k = 0; k < blobs; ++k) {
    const double cx = rng.uniform(0, 1), cy = rng.uniform(0, 1);
    const double rx = rng.uniform(0.05, 0.3), ry = rng.uniform(0.05, 0.3);
    double col[3];
    for (double& c : col) c = rng.uniform(-60, 60);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double dx = (x * inv - cx) / rx, dy = (y * inv - cy) / ry;
        if (dx * dx + dy * dy < 1) {
          for (int c = 0; c < 3; ++c) img[3 * (y * n + x) + c] += col[c];
        }
      }
    }
  }
  // Texture on 4x4 cells, shared by all channels.
  const std::size_t cells = n / 4 + 1;
  std::vector<double> tex(cells * cells);
  for (double& t : tex) t = rng.normal(0, 1);
  const double tamp = o.texture ? *o.texture : rng.uniform(2, 15);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double t = tamp * tex[(y / 4) * cells + x / 4];
      for (int c = 0; c < 3; ++c) img[3 * (y * n + x) + c] += t;
    }
  }
  const double sigma = o.noise ? *o.noise : rng.uniform(1, 6);
  RgbImage out(n, n);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = img[i] + (sigma > 0 ? rng.normal(0, sigma) : 0.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
  }
  return out;
}

GeneratedSplice generate_splice(SpliceKind kind, std::uint64_t seed,
                                std::size_t size) {
  nn::Rng rng(seed);
  SpliceParams p;
  p.seed = seed ^ 0x9e3779b97f4a7c15ull;
  GeneratedSplice g;
  if (kind == SpliceKind::kQuality) {
    const RgbImage host = procedural_image(rng, {size, {}, {}});
    const RgbImage donor = procedural_image(rng, {size, {}, {}});
    g.sample = synth_splice(host, donor, p, &g.control);
  } else {
    const RgbImage host = procedural_image(rng, {size, 0.0, 0.0});
    const RgbImage donor = procedural_image(rng, {size, rng.uniform(6, 15), {}});
    p.q_donor.reset();
    g.sample = synth_splice(host, donor, p, &g.control);
  }
  g.sample.id = (kind == SpliceKind::kQuality ? "quality-" : "texture-") + std::to_string(seed);
  return g;
}

DatasetManifest write_synthetic_dataset(const fs::path& dir, const std::string& name,
                                        std::size_t n_train, std::size_t n_test,
                                        std::uint64_t seed, std::size_t size,
                                        std::optional<SpliceKind> kind) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  DatasetManifest m;
  m.name = name;
  m.root = dir;
  m.seed = seed;
  nn::Rng rng(seed);
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    const std::uint64_t s = rng.engine()();
    const SpliceKind k = kind ? *kind : i % 2 ? SpliceKind::kTexture : SpliceKind::kQuality;
    GeneratedSplice g = generate_splice(k, s, size);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu", i);
    ManifestEntry e{std::string("images/") + stem + ".png",
                    std::string("masks/") + stem + ".png",
                    i < n_train ? Split::kTrain : Split::kTest};
    write_png_rgb((dir / e.image).string(), g.sample.image);
    ByteMap mask = g.sample.mask;
    for (auto& v : mask.v) v = v ? 255 : 0;
    write_png_gray8((dir / e.mask).string(), mask);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace msfn::data
