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

#include "msfn/image.hpp"

namespace msfn {
namespace {

struct Tap {
  std::size_t i0, i1;
  float f;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, static_cast<float>(s - static_cast<double>(i0))};
  }
  return t;
}

void require_nonempty(std::size_t w, std::size_t h, std::size_t ow,
                      std::size_t oh) {
  if (w == 0 || h == 0 || ow == 0 || oh == 0) {
    throw ShapeError("resize: empty source or target");
  }
}

}  // namespace

FloatMap resize_bilinear(const FloatMap& src, std::size_t w, std::size_t h) {
  require_nonempty(src.width, src.height, w, h);
  if (src.width == w && src.height == h) return src;
  const auto tx = taps(src.width, w);
  const auto ty = taps(src.height, h);
  FloatMap out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const Tap& a = ty[y];
    for (std::size_t x = 0; x < w; ++x) {
      const Tap& b = tx[x];
      const float top = src.at(b.i0, a.i0) * (1 - b.f) + src.at(b.i1, a.i0) * b.f;
      const float bot = src.at(b.i0, a.i1) * (1 - b.f) + src.at(b.i1, a.i1) * b.f;
      out.at(x, y) = top * (1 - a.f) + bot * a.f;
    }
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& src, std::size_t w, std::size_t h) {
  require_nonempty(src.width, src.height, w, h);
  if (src.width == w && src.height == h) return src;
  const auto tx = taps(src.width, w);
  const auto ty = taps(src.height, h);
  RgbImage out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const Tap& a = ty[y];
    for (std::size_t x = 0; x < w; ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < 3; ++c) {
        const float top = src.px(b.i0, a.i0)[c] * (1 - b.f) +
                          src.px(b.i1, a.i0)[c] * b.f;
        const float bot = src.px(b.i0, a.i1)[c] * (1 - b.f) +
                          src.px(b.i1, a.i1)[c] * b.f;
        const float v = top * (1 - a.f) + bot * a.f;
        out.px(x, y)[c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

ByteMap resize_nearest(const ByteMap& src, std::size_t w, std::size_t h) {
  require_nonempty(src.width, src.height, w, h);
  if (src.width == w && src.height == h) return src;
  auto pick = [](std::size_t o, std::size_t in, std::size_t out) {
    return std::min(in - 1, (2 * o + 1) * in / (2 * out));
  };
  ByteMap out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = pick(y, src.height, h);
    for (std::size_t x = 0; x < w; ++x) {
      out.at(x, y) = src.at(pick(x, src.width, w), sy);
    }
  }
  return out;
}

}  // namespace msfn
