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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "msfn/error.hpp"

namespace msfn {

// Row-major single-channel raster.
template <class T>
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> v;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, T fill = T())
      : width(w), height(h), v(w * h, fill) {}

  T& at(std::size_t x, std::size_t y) { return v[y * width + x]; }
  const T& at(std::size_t x, std::size_t y) const { return v[y * width + x]; }
  bool empty() const { return v.empty(); }
};

using FloatMap = Plane<float>;
using ByteMap = Plane<std::uint8_t>;

// Interleaved 8-bit RGB.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h)
      : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t* px(std::size_t x, std::size_t y) {
    return pixels.data() + (y * width + x) * 3;
  }
  const std::uint8_t* px(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * 3;
  }
  bool empty() const { return pixels.empty(); }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// ---- codecs (libpng / libjpeg) --------------------------------------------

// PNG or JPEG, chosen by file signature.
RgbImage read_image(const std::string& path);
// Grayscale view of any PNG/JPEG (masks).
ByteMap read_gray8(const std::string& path);
void write_png_rgb(const std::string& path, const RgbImage& img);
void write_png_gray8(const std::string& path, const ByteMap& img);
void write_png_gray16(const std::string& path, const Plane<std::uint16_t>& img);
Plane<std::uint16_t> read_png_gray16(const std::string& path);

// Baseline JPEG with 4:4:4 sampling, so every 8x8 block of every channel
// is quantised independently.
std::vector<std::uint8_t> jpeg_encode(const RgbImage& img, int quality);
RgbImage jpeg_decode(const std::vector<std::uint8_t>& bytes);
inline RgbImage jpeg_roundtrip(const RgbImage& img, int quality) {
  return jpeg_decode(jpeg_encode(img, quality));
}
void write_jpeg(const std::string& path, const RgbImage& img, int quality);

// ---- resampling --------------------------------------------------------

// Half-pixel-centred bilinear resampling with edge clamping.
FloatMap resize_bilinear(const FloatMap& src, std::size_t w, std::size_t h);
RgbImage resize_bilinear(const RgbImage& src, std::size_t w, std::size_t h);
// Nearest neighbour; keeps binary masks binary.
ByteMap resize_nearest(const ByteMap& src, std::size_t w, std::size_t h);

}  // namespace msfn
